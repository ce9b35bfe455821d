//! Scalar abstraction so the numerical core works with any floating type.
//!
//! All model math is generic over [`Scalar`]; the CLI and the simulation
//! harness run in `f64` (see the aliases at the crate root). `f32` is
//! supported for memory-bound experimentation.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use statrs::function::erf;

/// Floating-point scalar usable throughout the numerical core.
///
/// The random samplers in [`crate::kernels`] generate variates in double
/// precision and convert, so implementors only need the arithmetic surface.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only for values a float type
    /// cannot represent at all (never for finite f64 into f32/f64).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable in scalar type")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    fn half() -> Self {
        Self::of(0.5)
    }

    fn two() -> Self {
        Self::of(2.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Standard normal CDF.
///
/// Evaluated through libm's `erfc` in double precision (correctly rounded
/// to a few ulp, absolute error below 1e-15), then converted to the working
/// scalar type. The result is clamped away from exact 0 and 1 so that
/// downstream log-weights stay finite.
pub fn normal_cdf<F: Scalar>(x: F) -> F {
    let p = 0.5 * libm::erfc(-x.f64() / std::f64::consts::SQRT_2);
    F::of(p.clamp(1e-300, 1.0 - 1e-16))
}

/// Complementary standard normal CDF, accurate in the upper tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`normal_sf`], accurate for small tail probabilities.
///
/// statrs's `erfc_inv` is good to ~1e-12 relative error, which is ample for
/// inverse-CDF sampling (its only use here).
pub fn normal_sf_inv(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Log-density of N(mean, var) at `y`.
pub fn normal_log_pdf<F: Scalar>(y: F, mean: F, var: F) -> F {
    let half = F::half();
    let log_two_pi = F::of(std::f64::consts::TAU.ln());
    let d = y - mean;
    -half * (log_two_pi + var.ln()) - half * d * d / var
}

/// Density of N(mean, var) at `y`.
pub fn normal_pdf<F: Scalar>(y: F, mean: F, var: F) -> F {
    normal_log_pdf(y, mean, var).exp()
}
