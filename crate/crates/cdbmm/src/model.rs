//! Domain types and the pure mixture-model functions: probit stick-breaking
//! weights, Gaussian cluster kernels, and the covariate-conditional outcome
//! density, all under a fixed truncation level L.

use crate::error::{Error, Result};
use crate::scalar::{normal_cdf, normal_log_pdf, Scalar};

/// Observed data: outcome, binary treatment, and pre-encoded covariates.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub y: Vec<F>,
    pub t: Vec<u8>,
    /// Row-major `n x p` covariate matrix. Categorical columns must be
    /// numerically encoded upstream.
    pub x: Vec<F>,
    pub p: usize,
    pub column_names: Vec<String>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(y: Vec<F>, t: Vec<u8>, x: Vec<F>, p: usize, column_names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if t.len() != n {
            return Err(Error::input(format!(
                "treatment length {} does not match outcome length {n}",
                t.len()
            )));
        }
        if x.len() != n * p {
            return Err(Error::input(format!(
                "covariate matrix has {} entries, expected {n} x {p}",
                x.len()
            )));
        }
        if column_names.len() != p {
            return Err(Error::input(format!(
                "{} column names for {p} covariates",
                column_names.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite entry in outcome or covariates".to_string()));
        }
        if let Some(bad) = t.iter().position(|&v| v > 1) {
            return Err(Error::input(format!("treatment value {} at row {bad} is not in {{0,1}}", t[bad])));
        }
        let n_treated = t.iter().filter(|&&v| v == 1).count();
        if n_treated == 0 || n_treated == n {
            return Err(Error::input(format!(
                "both treatment arms must be non-empty (treated={n_treated}, n={n})"
            )));
        }
        Ok(Dataset { y, t, x, p, column_names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

/// Prior constants and the truncation level.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub mu_beta: f64,
    pub sigma2_beta: f64,
    pub mu_eta: f64,
    pub sigma2_eta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub truncation: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            mu_beta: 0.0,
            sigma2_beta: 20.0,
            mu_eta: 0.0,
            sigma2_eta: 10.0,
            gamma1: 5.0,
            gamma2: 1.0,
            truncation: 20,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma2_beta <= 0.0 || self.sigma2_eta <= 0.0 || self.gamma1 <= 0.0 || self.gamma2 <= 0.0 {
            return Err(Error::input(
                "sigma2_beta, sigma2_eta, gamma1, gamma2 must all be positive".to_string(),
            ));
        }
        if self.truncation < 2 {
            return Err(Error::input(format!(
                "truncation level must be at least 2, got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// Per-arm mixture parameters at truncation L.
///
/// `eta` is kept strictly increasing (the label-switching constraint);
/// `beta` holds the L-1 weight-regression slope rows, row-major `(L-1) x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmParams<F> {
    pub eta: Vec<F>,
    pub sigma2: Vec<F>,
    pub beta0: Vec<F>,
    pub beta: Vec<F>,
    pub p: usize,
}

impl<F: Scalar> ArmParams<F> {
    pub fn truncation(&self) -> usize {
        self.eta.len()
    }

    pub fn beta_row(&self, l: usize) -> &[F] {
        &self.beta[l * self.p..(l + 1) * self.p]
    }

    pub fn check_invariants(&self) -> Result<()> {
        let l = self.eta.len();
        if self.sigma2.len() != l || self.beta0.len() != l - 1 || self.beta.len() != (l - 1) * self.p {
            return Err(Error::input("arm parameter blocks have inconsistent lengths".to_string()));
        }
        if self.eta.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::input("cluster means must be strictly increasing".to_string()));
        }
        if self.sigma2.iter().any(|&v| !(v > F::zero())) {
            return Err(Error::input("cluster variances must be strictly positive".to_string()));
        }
        Ok(())
    }
}

/// Linear predictor of the probit stick for one cluster: beta0 + x'beta.
pub fn compute_alpha<F: Scalar>(x: &[F], beta0_l: F, beta_l: &[F]) -> Result<F> {
    if x.len() != beta_l.len() {
        return Err(Error::input(format!(
            "covariate vector has length {}, slope vector {}",
            x.len(),
            beta_l.len()
        )));
    }
    let dot: F = x.iter().zip(beta_l).map(|(&a, &b)| a * b).sum();
    Ok(beta0_l + dot)
}

/// Probit stick-breaking weights for one unit from its L-1 stick scores.
///
/// `w_l = Phi(alpha_l) * prod_{r<l} (1 - Phi(alpha_r))` for l < L; the last
/// component takes the remaining stick, so the weights sum to one.
pub fn compute_stick_weights<F: Scalar>(alphas: &[F]) -> Vec<F> {
    let l_total = alphas.len() + 1;
    let mut weights = Vec::with_capacity(l_total);
    let mut remaining = F::one();
    for &a in alphas {
        let v = normal_cdf(a);
        weights.push(remaining * v);
        remaining *= F::one() - v;
    }
    weights.push(remaining);
    weights
}

/// Same stick-breaking recursion carried in log space; used by the cluster
/// allocation step where the products would underflow for deep sticks.
pub fn compute_log_stick_weights<F: Scalar>(alphas: &[F]) -> Vec<F> {
    let l_total = alphas.len() + 1;
    let mut log_weights = Vec::with_capacity(l_total);
    let mut log_remaining = F::zero();
    for &a in alphas {
        let v = normal_cdf(a);
        log_weights.push(log_remaining + v.ln());
        log_remaining += (F::one() - v).ln();
    }
    log_weights.push(log_remaining);
    log_weights
}

/// Stick weights for unit covariates `x` under the arm's current regression
/// coefficients.
pub fn stick_weights_at<F: Scalar>(arm: &ArmParams<F>, x: &[F]) -> Result<Vec<F>> {
    let alphas = (0..arm.beta0.len())
        .map(|l| compute_alpha(x, arm.beta0[l], arm.beta_row(l)))
        .collect::<Result<Vec<F>>>()?;
    Ok(compute_stick_weights(&alphas))
}

/// Mixture density of the outcome given covariates under one arm:
/// `sum_l w_l(x) N(y; eta_l, sigma2_l)`.
pub fn conditional_outcome_density<F: Scalar>(y: F, x: &[F], arm: &ArmParams<F>) -> Result<F> {
    arm.check_invariants()?;
    let weights = stick_weights_at(arm, x)?;
    let mut total = F::zero();
    for (l, &w) in weights.iter().enumerate() {
        total += w * normal_log_pdf(y, arm.eta[l], arm.sigma2[l]).exp();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm_with_weights(p: usize, eta: Vec<f64>, sigma2: Vec<f64>, beta0: Vec<f64>) -> ArmParams<f64> {
        let l = eta.len();
        ArmParams {
            eta,
            sigma2,
            beta0,
            beta: vec![0.0; (l - 1) * p],
            p,
        }
    }

    #[test]
    fn alpha_is_the_linear_predictor() {
        assert_eq!(compute_alpha(&[0.0, 0.0], 1.3, &[5.0, -2.0]).unwrap(), 1.3);
        let a: f64 = compute_alpha(&[1.0, 1.0], 0.0, &[0.4, 0.6]).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        assert_eq!(compute_alpha(&[3.0, -7.0], 0.0, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(compute_alpha(&[1.0], 0.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn stick_weights_hand_cases() {
        let w = compute_stick_weights(&[0.0_f64]);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15);

        let w = compute_stick_weights(&[0.0_f64, 0.0]);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.25).abs() < 1e-15);
        assert!((w[2] - 0.25).abs() < 1e-15);

        let w = compute_stick_weights(&[20.0_f64, 0.0, 0.0]);
        assert!(w[0] > 1.0 - 1e-12);
        assert!(w[1] < 1e-12 && w[2] < 1e-12 && w[3] < 1e-12);
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stick_weights_sum_to_one() {
        // Deterministic sweep over magnitudes, including saturating probits.
        for k in 0..200 {
            let a = (k as f64 - 100.0) / 5.0;
            let alphas = [a, -a, a / 3.0, 2.0 * a];
            let w = compute_stick_weights(&alphas);
            assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "a={a} sum={sum}");
        }
    }

    #[test]
    fn log_stick_weights_agree_with_linear() {
        let alphas = [0.3_f64, -1.2, 2.0];
        let w = compute_stick_weights(&alphas);
        let lw = compute_log_stick_weights(&alphas);
        for (a, b) in w.iter().zip(&lw) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_monotone_in_own_alpha() {
        let alphas = [0.1_f64, -0.4, 0.7];
        let base = compute_stick_weights(&alphas)[1];
        let mut bumped = alphas;
        bumped[1] += 1e-4;
        let after = compute_stick_weights(&bumped)[1];
        assert!(after > base);
    }

    #[test]
    fn density_single_gaussian_peak() {
        // Effective single component: first stick saturated.
        let arm = arm_with_weights(1, vec![0.0, 5.0], vec![1.0, 1.0], vec![30.0]);
        let d = conditional_outcome_density(0.0, &[0.0], &arm).unwrap();
        assert!((d - 1.0 / (std::f64::consts::TAU).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn density_vanishes_between_separated_modes() {
        let arm = arm_with_weights(1, vec![-30.0, 30.0], vec![1.0, 1.0], vec![0.0]);
        let d = conditional_outcome_density(0.0, &[0.0], &arm).unwrap();
        assert!(d < 1e-90);
    }

    #[test]
    fn density_integrates_to_one() {
        // Quadrature oracle: trapezoid over a grid wide enough to hold all
        // mass of a three-component mixture.
        let arm = arm_with_weights(1, vec![-2.0, 1.0, 4.0], vec![0.5, 2.0, 1.0], vec![0.2, -0.5]);
        let (lo, hi, steps) = (-50.0_f64, 50.0_f64, 400_000usize);
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for k in 0..=steps {
            let y = lo + k as f64 * h;
            let f = conditional_outcome_density(y, &[0.0], &arm).unwrap();
            integral += if k == 0 || k == steps { 0.5 * f } else { f };
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-6, "integral={integral}");
    }

    #[test]
    fn hyperparams_defaults_match_documented_values() {
        let h = Hyperparams::default();
        assert_eq!(h.mu_beta, 0.0);
        assert_eq!(h.sigma2_beta, 20.0);
        assert_eq!(h.mu_eta, 0.0);
        assert_eq!(h.sigma2_eta, 10.0);
        assert_eq!(h.gamma1, 5.0);
        assert_eq!(h.gamma2, 1.0);
        assert_eq!(h.truncation, 20);
    }

    #[test]
    fn dataset_rejects_inconsistent_inputs() {
        let ok = Dataset::new(
            vec![1.0, 2.0],
            vec![0, 1],
            vec![0.0, 1.0],
            1,
            vec!["x1".into()],
        );
        assert!(ok.is_ok());
        assert!(Dataset::new(vec![1.0, 2.0], vec![0], vec![0.0, 1.0], 1, vec!["x1".into()]).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], vec![0, 2], vec![0.0, 1.0], 1, vec!["x1".into()]).is_err());
        // Single-arm data is rejected.
        assert!(Dataset::new(vec![1.0, 2.0], vec![1, 1], vec![0.0, 1.0], 1, vec!["x1".into()]).is_err());
    }
}
