//! Seed-deterministic random draws for the Gibbs sampler.
//!
//! Every distribution Algorithm-style blocked sweeps need lives here:
//! (truncated) normals, inverse gamma, categorical (linear and log space),
//! and multivariate normal. All draws are reproducible given the handle's
//! seed, and handles can be split into independent child streams.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, lower_mul};
use crate::scalar::{normal_sf, normal_sf_inv, Scalar};

/// Seeded random stream confined to one logical thread of execution.
///
/// Identical seeds produce bit-identical draw sequences. Child streams for
/// parallel workers come from [`RngHandle::split`], which derives an
/// independent seed from the parent seed and a stream index, so splitting
/// does not depend on how much the parent has already drawn.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `index` of this handle's seed.
    pub fn split(&self, index: u64) -> RngHandle {
        RngHandle::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    pub(crate) fn raw(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn std_normal(&mut self) -> f64 {
        self.rng.sample::<f64, _>(StandardNormal)
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// Draw from N(mean, variance).
pub fn draw_normal<F: Scalar>(rng: &mut RngHandle, mean: F, variance: F) -> Result<F> {
    check_mean_var(mean, variance)?;
    let z = F::of(rng.std_normal());
    Ok(mean + variance.sqrt() * z)
}

fn check_mean_var<F: Scalar>(mean: F, variance: F) -> Result<()> {
    if !mean.is_finite() || !variance.is_finite() {
        return Err(Error::input(format!(
            "non-finite normal parameters: mean={} variance={}",
            mean, variance
        )));
    }
    if variance <= F::zero() {
        return Err(Error::input(format!("variance must be positive, got {variance}")));
    }
    Ok(())
}

/// Draw from N(mean, variance) restricted to the open interval (lower, upper).
///
/// Bounds may be infinite. Moderate truncations use inverse-CDF sampling on
/// the nearer tail; truncations far into a tail switch to the
/// exponential-proposal rejection scheme of Robert (1995), which stays O(1)
/// even when the interval lies many standard deviations from the mean.
pub fn draw_truncated_normal<F: Scalar>(
    rng: &mut RngHandle,
    mean: F,
    variance: F,
    lower: F,
    upper: F,
) -> Result<F> {
    check_mean_var(mean, variance)?;
    if !(lower < upper) {
        return Err(Error::domain(format!(
            "truncation interval empty: lower={lower} >= upper={upper}"
        )));
    }
    let sd = variance.sqrt().f64();
    let m = mean.f64();
    let a = (lower.f64() - m) / sd;
    let b = (upper.f64() - m) / sd;
    // Resample on the (measure-zero, but floating-point-possible) event that
    // rounding lands exactly on a boundary.
    loop {
        let z = std_truncated(rng, a, b);
        let x = m + sd * z;
        if x > lower.f64() && x < upper.f64() {
            return Ok(F::of(x));
        }
    }
}

/// Standard-normal draw restricted to (a, b); a, b may be infinite.
fn std_truncated(rng: &mut RngHandle, a: f64, b: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (false, false) => rng.std_normal(),
        (true, false) => lower_tail(rng, a),
        (false, true) => -lower_tail(rng, -b),
        (true, true) => {
            if a >= 0.0 {
                two_sided_tail(rng, a, b)
            } else if b <= 0.0 {
                -two_sided_tail(rng, -b, -a)
            } else {
                // Interval straddles the mode; plain rejection is cheap.
                let mass = normal_sf(a) - normal_sf(b);
                if mass > 0.25 {
                    loop {
                        let z = rng.std_normal();
                        if z > a && z < b {
                            return z;
                        }
                    }
                } else {
                    inverse_cdf_between(rng, a, b)
                }
            }
        }
    }
}

/// Draw z >= a from the standard normal, a finite.
fn lower_tail(rng: &mut RngHandle, a: f64) -> f64 {
    if a <= 0.0 {
        // At least half the mass is retained; rejection from the untruncated
        // normal terminates quickly.
        loop {
            let z = rng.std_normal();
            if z >= a {
                return z;
            }
        }
    } else {
        // Robert (1995): shifted-exponential proposal with the optimal rate.
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = rng.raw().sample(rand_distr::Exp1);
            let z = a + e / lambda;
            let d = z - lambda;
            let u: f64 = rng.raw().random();
            if u <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// Draw from the standard normal restricted to [a, b] with 0 <= a < b.
fn two_sided_tail(rng: &mut RngHandle, a: f64, b: f64) -> f64 {
    let sa = normal_sf(a);
    let sb = normal_sf(b);
    // Inverse CDF on the survival scale keeps full precision while the
    // interval mass is resolvable in doubles.
    if sa > 0.0 && (sa - sb) > sa * 1e-9 {
        return inverse_sf_between(rng, sa, sb);
    }
    if b - a >= 1.0 / a.max(1.0) {
        // Wide far-tail interval: one-sided tail sampler nearly always lands
        // inside [a, b].
        loop {
            let z = lower_tail(rng, a);
            if z < b {
                return z;
            }
        }
    }
    // Narrow far-tail interval: uniform proposal with the exact density ratio.
    loop {
        let u: f64 = rng.raw().random();
        let z = a + u * (b - a);
        let v: f64 = rng.raw().random();
        if v <= (0.5 * (a * a - z * z)).exp() {
            return z;
        }
    }
}

fn inverse_cdf_between(rng: &mut RngHandle, a: f64, b: f64) -> f64 {
    // Work on whichever tail carries the smaller probability, for precision.
    let sa = normal_sf(a);
    let sb = normal_sf(b);
    if sa + sb < 1.0 {
        // Both bounds in the upper half by mass; use survival scale.
        inverse_sf_between(rng, sa, sb)
    } else {
        let ca = 1.0 - sa;
        let cb = 1.0 - sb;
        -inverse_sf_between(rng, cb, ca)
    }
}

/// Inverse-CDF draw given survival probabilities sa > sb of the bounds.
fn inverse_sf_between(rng: &mut RngHandle, sa: f64, sb: f64) -> f64 {
    let u: f64 = rng.raw().random();
    let s = sb + u * (sa - sb);
    normal_sf_inv(s)
}

/// Draw from InvGamma(shape, scale), parameterized so the mean is
/// scale/(shape-1) when shape > 1.
///
/// Realized as the reciprocal of a Gamma(shape, rate = scale) draw.
pub fn draw_inverse_gamma<F: Scalar>(rng: &mut RngHandle, shape: F, scale: F) -> Result<F> {
    if !(shape > F::zero()) || !(scale > F::zero()) {
        return Err(Error::input(format!(
            "inverse-gamma requires positive shape and scale, got shape={shape} scale={scale}"
        )));
    }
    // rand_distr's Gamma takes (shape, scale θ); Gamma(shape, θ = 1/scale)
    // has rate = scale, and its reciprocal is InvGamma(shape, scale).
    let g = Gamma::new(shape.f64(), 1.0 / scale.f64())
        .map_err(|e| Error::input(format!("gamma parameters rejected: {e}")))?;
    loop {
        let v: f64 = g.sample(rng.raw());
        if v > 0.0 && v.is_finite() {
            return Ok(F::of(1.0 / v));
        }
    }
}

/// Draw an index with probability proportional to `weights` (0-based).
///
/// Weights need not be normalized; they must be finite, non-negative, and
/// not all zero.
pub fn draw_categorical<F: Scalar>(rng: &mut RngHandle, weights: &[F]) -> Result<usize> {
    let mut total = F::zero();
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < F::zero() {
            return Err(Error::domain(format!(
                "categorical weight {i} invalid: {w}"
            )));
        }
        total += w;
    }
    if !(total > F::zero()) {
        return Err(Error::domain("all categorical weights are zero".to_string()));
    }
    let u = F::of(rng.raw().random::<f64>()) * total;
    let mut acc = F::zero();
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding can push the scan past the end; the last positive weight wins.
    Ok(weights
        .iter()
        .rposition(|&w| w > F::zero())
        .expect("positive total implies a positive weight"))
}

/// Categorical draw from unnormalized log-weights, max-subtracted so that a
/// single dominant term never underflows the whole vector.
pub fn draw_categorical_log<F: Scalar>(rng: &mut RngHandle, log_weights: &[F]) -> Result<usize> {
    let max = log_weights
        .iter()
        .cloned()
        .fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return Err(Error::Numeric(
            "all log-weights are -inf (or NaN); posterior mass vanished".to_string(),
        ));
    }
    let w: Vec<F> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    draw_categorical(rng, &w)
}

/// Draw from N_p(mean, covariance); `covariance` is row-major `p x p`.
pub fn draw_mv_normal<F: Scalar>(
    rng: &mut RngHandle,
    mean: &[F],
    covariance: &[F],
) -> Result<Vec<F>> {
    let p = mean.len();
    if covariance.len() != p * p {
        return Err(Error::input(format!(
            "covariance must be {p}x{p}, got {} entries",
            covariance.len()
        )));
    }
    let l = cholesky(covariance, p)?;
    let z: Vec<F> = (0..p).map(|_| F::of(rng.std_normal())).collect();
    let lz = lower_mul(&l, p, &z);
    Ok(mean.iter().zip(lz).map(|(&m, v)| m + v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_identical_streams() {
        let mut a = RngHandle::new(42);
        let mut b = RngHandle::new(42);
        for _ in 0..1000 {
            let x: f64 = draw_normal(&mut a, 0.0, 1.0).unwrap();
            let y: f64 = draw_normal(&mut b, 0.0, 1.0).unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn split_streams_do_not_depend_on_parent_consumption() {
        let mut a = RngHandle::new(7);
        let b = RngHandle::new(7);
        let _ = draw_normal::<f64>(&mut a, 0.0, 1.0).unwrap();
        let mut ca = a.split(3);
        let mut cb = b.split(3);
        let x: f64 = draw_normal(&mut ca, 0.0, 1.0).unwrap();
        let y: f64 = draw_normal(&mut cb, 0.0, 1.0).unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn truncated_normal_stays_inside_support() {
        let mut rng = RngHandle::new(1);
        for _ in 0..20_000 {
            let x: f64 =
                draw_truncated_normal(&mut rng, 0.0, 1.0, 0.0, f64::INFINITY).unwrap();
            assert!(x > 0.0);
        }
        // Far-tail truncation, >= 8 sd from the mean: must not hang and must
        // respect the support.
        for _ in 0..20_000 {
            let x: f64 =
                draw_truncated_normal(&mut rng, 5.0, 1.0, f64::NEG_INFINITY, 0.0).unwrap();
            assert!(x < 0.0);
        }
        for _ in 0..20_000 {
            let x: f64 = draw_truncated_normal(&mut rng, 0.0, 1.0, 8.0, 8.5).unwrap();
            assert!(x > 8.0 && x < 8.5);
        }
        for _ in 0..5_000 {
            let x: f64 = draw_truncated_normal(&mut rng, 0.0, 1.0, 40.0, 41.0).unwrap();
            assert!(x > 40.0 && x < 41.0);
        }
    }

    #[test]
    fn truncated_normal_rejects_bad_inputs() {
        let mut rng = RngHandle::new(1);
        assert!(draw_truncated_normal(&mut rng, f64::NAN, 1.0, 0.0, 1.0).is_err());
        assert!(draw_truncated_normal(&mut rng, 0.0, -1.0, 0.0, 1.0).is_err());
        assert!(draw_truncated_normal(&mut rng, 0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn categorical_degenerate_and_unnormalized() {
        let mut rng = RngHandle::new(9);
        for _ in 0..100 {
            assert_eq!(draw_categorical(&mut rng, &[0.0, 1.0, 0.0]).unwrap(), 1);
        }
        let mut count = 0usize;
        let n = 1_000_000;
        for _ in 0..n {
            if draw_categorical(&mut rng, &[2.0, 6.0]).unwrap() == 1 {
                count += 1;
            }
        }
        let freq = count as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.002, "freq={freq}");
    }

    #[test]
    fn categorical_rejects_all_zero() {
        let mut rng = RngHandle::new(2);
        assert!(draw_categorical(&mut rng, &[0.0, 0.0]).is_err());
        assert!(draw_categorical(&mut rng, &[-1.0, 2.0]).is_err());
    }

    #[test]
    fn categorical_log_handles_extreme_magnitudes() {
        let mut rng = RngHandle::new(3);
        // Second weight dominates by e^1000; plain exponentiation would
        // overflow, max-subtraction must not.
        for _ in 0..100 {
            let i = draw_categorical_log(&mut rng, &[-2000.0, -1000.0, -1900.0]).unwrap();
            assert_eq!(i, 1);
        }
        assert!(draw_categorical_log(&mut rng, &[f64::NEG_INFINITY; 3]).is_err());
    }

    #[test]
    fn inverse_gamma_rejects_non_positive_params() {
        let mut rng = RngHandle::new(4);
        assert!(draw_inverse_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(draw_inverse_gamma(&mut rng, 1.0, -1.0).is_err());
    }

    #[test]
    fn inverse_gamma_support_only_for_small_shape() {
        let mut rng = RngHandle::new(5);
        for _ in 0..10_000 {
            let x: f64 = draw_inverse_gamma(&mut rng, 0.5, 1.0).unwrap();
            assert!(x > 0.0);
        }
    }

    #[test]
    fn mv_normal_rejects_non_pd() {
        let mut rng = RngHandle::new(6);
        let err = draw_mv_normal(&mut rng, &[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("pivot"), "{err}");
    }
}
