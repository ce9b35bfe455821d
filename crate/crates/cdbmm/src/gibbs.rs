//! Blocked Gibbs sampler for the confounder-dependent mixture model.
//!
//! One iteration sweeps arm 0, then arm 1, then imputes the missing
//! potential outcomes. Each arm sweep updates, in order: stick weights
//! (implicit in the allocation probabilities), cluster allocations, cluster
//! means and variances (ordered atoms), the probit augmentation variables,
//! and the weight-regression coefficients.
//!
//! Allocation for units observed under the other arm uses the current
//! imputed outcome in the likelihood term; imputation runs after both arm
//! sweeps, so each sweep sees the previous iteration's imputations.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{
    draw_categorical, draw_categorical_log, draw_inverse_gamma, draw_normal,
    draw_truncated_normal, RngHandle,
};
use crate::linalg::{cholesky, cholesky_solve, lower_transpose_solve};
use crate::model::{ArmParams, Dataset, Hyperparams};
use crate::scalar::Scalar;

/// Chain length configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 3000,
            burn_in: 1000,
            thin: 2,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.burn_in {
            return Err(Error::input(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::input("thin must be at least 1".to_string()));
        }
        Ok(())
    }

    pub fn stored_draws(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Full sampler state at one iteration.
///
/// Invariant: for every unit, the observed arm's imputed entry equals the
/// datum bit-exactly at every iteration.
#[derive(Debug, Clone)]
pub struct ChainState<F> {
    pub arms: [ArmParams<F>; 2],
    /// Cluster allocations per arm, 0-based in `[0, L)`.
    pub alloc: [Vec<usize>; 2],
    /// Potential outcomes; entry for the observed arm equals the datum.
    pub y_imputed: [Vec<F>; 2],
    /// Augmentation draws per arm: `z[t][i]` holds Z_l(x_i) for
    /// l = 0..=min(S_i, L-2), positive at l = S_i, negative below.
    pub z: [Vec<Vec<F>>; 2],
}

/// Thinned post-burn-in trace.
#[derive(Debug, Clone)]
pub struct PosteriorDraws<F> {
    pub states: Vec<ChainState<F>>,
    pub config: ChainConfig,
    pub hyper: Hyperparams,
}

impl<F: Scalar> PosteriorDraws<F> {
    pub fn n_draws(&self) -> usize {
        self.states.len()
    }

    /// Allocation draws for one arm, for posterior-similarity summaries.
    pub fn alloc_draws(&self, arm: usize) -> Vec<Vec<usize>> {
        self.states.iter().map(|s| s.alloc[arm].clone()).collect()
    }

    /// Allocation draws for one arm with coinciding mixture components
    /// collapsed per draw (see
    /// [`merge_coincident_clusters`](crate::partition::merge_coincident_clusters)).
    /// The minor-component cutoff is
    /// [`DEFAULT_MERGE_MIN_FRACTION`](crate::partition::DEFAULT_MERGE_MIN_FRACTION)
    /// of the sample.
    pub fn effective_alloc_draws(&self, arm: usize, kappa: f64) -> Vec<Vec<usize>> {
        self.states
            .iter()
            .map(|s| {
                let n = s.alloc[arm].len();
                let min_size = ((crate::partition::DEFAULT_MERGE_MIN_FRACTION * n as f64).ceil()
                    as usize)
                    .max(2);
                crate::partition::merge_coincident_clusters(
                    &s.alloc[arm],
                    &s.arms[arm].eta,
                    &s.arms[arm].sigma2,
                    kappa,
                    min_size,
                )
            })
            .collect()
    }
}

/// Deduplicated covariate rows; weight regressions only depend on x through
/// the row pattern, so stick weights are computed once per pattern.
struct XPatterns<F> {
    pattern_of: Vec<usize>,
    rows: Vec<Vec<F>>,
}

impl<F: Scalar> XPatterns<F> {
    fn build(data: &Dataset<F>) -> Self {
        let mut map: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows: Vec<Vec<F>> = Vec::new();
        let pattern_of = (0..data.n())
            .map(|i| {
                let row = data.row(i);
                let key: Vec<u64> = row.iter().map(|v| v.f64().to_bits()).collect();
                *map.entry(key).or_insert_with(|| {
                    rows.push(row.to_vec());
                    rows.len() - 1
                })
            })
            .collect();
        XPatterns { pattern_of, rows }
    }
}

/// Hyperparameters lifted into the working scalar type.
struct HyperF<F> {
    mu_beta: F,
    sigma2_beta: F,
    mu_eta: F,
    sigma2_eta: F,
    gamma1: F,
    gamma2: F,
    truncation: usize,
}

impl<F: Scalar> HyperF<F> {
    fn from(h: &Hyperparams) -> Self {
        HyperF {
            mu_beta: F::of(h.mu_beta),
            sigma2_beta: F::of(h.sigma2_beta),
            mu_eta: F::of(h.mu_eta),
            sigma2_eta: F::of(h.sigma2_eta),
            gamma1: F::of(h.gamma1),
            gamma2: F::of(h.gamma2),
            truncation: h.truncation,
        }
    }
}

/// A single CDBMM chain. Steps are public so that frozen-state conjugate
/// checks can exercise one block at a time.
pub struct Chain<'a, F: Scalar> {
    data: &'a Dataset<F>,
    hyper: HyperF<F>,
    hyper_raw: Hyperparams,
    patterns: XPatterns<F>,
    pub state: ChainState<F>,
    rng: RngHandle,
}

impl<'a, F: Scalar> Chain<'a, F> {
    pub fn new(data: &'a Dataset<F>, hyper: &Hyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = RngHandle::new(seed);
        let patterns = XPatterns::build(data);
        let state = init_state(data, hyper, &mut rng)?;
        Ok(Chain {
            data,
            hyper: HyperF::from(hyper),
            hyper_raw: hyper.clone(),
            patterns,
            state,
            rng,
        })
    }

    pub fn replace_state(&mut self, state: ChainState<F>) {
        self.state = state;
    }

    pub fn rng_mut(&mut self) -> &mut RngHandle {
        &mut self.rng
    }

    fn truncation(&self) -> usize {
        self.hyper.truncation
    }

    /// Log stick weights per covariate pattern under arm `t`'s current
    /// regression coefficients.
    fn pattern_log_weights(&self, t: usize) -> Vec<Vec<F>> {
        let arm = &self.state.arms[t];
        self.patterns
            .rows
            .iter()
            .map(|row| {
                let alphas: Vec<F> = (0..arm.beta0.len())
                    .map(|l| {
                        let dot: F = row
                            .iter()
                            .zip(arm.beta_row(l))
                            .map(|(&a, &b)| a * b)
                            .sum();
                        arm.beta0[l] + dot
                    })
                    .collect();
                crate::model::compute_log_stick_weights(&alphas)
            })
            .collect()
    }

    /// Redraws every cluster allocation in arm `t` from its multinomial full
    /// conditional, computed in log space.
    pub fn step_cluster_allocations(&mut self, t: usize) -> Result<()> {
        let l_total = self.truncation();
        let log_w = self.pattern_log_weights(t);
        let arm = &self.state.arms[t];
        // Per-cluster log-density constants.
        let consts: Vec<(F, F)> = (0..l_total)
            .map(|l| {
                let var = arm.sigma2[l];
                let c = -F::half() * (F::of(std::f64::consts::TAU.ln()) + var.ln());
                (c, F::half() / var)
            })
            .collect();
        let etas = arm.eta.clone();
        let mut logits = vec![F::zero(); l_total];
        for i in 0..self.data.n() {
            let y = self.state.y_imputed[t][i];
            let lw = &log_w[self.patterns.pattern_of[i]];
            for l in 0..l_total {
                let d = y - etas[l];
                logits[l] = lw[l] + consts[l].0 - consts[l].1 * d * d;
            }
            self.state.alloc[t][i] = draw_categorical_log(&mut self.rng, &logits)?;
        }
        Ok(())
    }

    /// Redraws the ordered cluster means and the cluster variances in arm
    /// `t` from their conjugate full conditionals. Empty clusters draw from
    /// the prior, still subject to the ordering truncation.
    pub fn step_cluster_params(&mut self, t: usize) -> Result<()> {
        let l_total = self.truncation();
        let n = self.data.n();
        let mut counts = vec![0usize; l_total];
        let mut sums = vec![F::zero(); l_total];
        for i in 0..n {
            let l = self.state.alloc[t][i];
            counts[l] += 1;
            sums[l] += self.state.y_imputed[t][i];
        }
        let h = &self.hyper;
        for l in 0..l_total {
            let sigma2 = self.state.arms[t].sigma2[l];
            let precision = F::of(counts[l] as f64) / sigma2 + F::one() / h.sigma2_eta;
            let var = F::one() / precision;
            let mean = var * (sums[l] / sigma2 + h.mu_eta / h.sigma2_eta);
            // Full conditional under the ordered prior: truncated between
            // the (already updated) lower neighbor and the current upper
            // neighbor. One-sided truncation would let an atom leapfrog its
            // upper neighbor and wedge the chain into an inverted labeling.
            let lower = if l == 0 {
                F::neg_infinity()
            } else {
                self.state.arms[t].eta[l - 1]
            };
            let upper = if l + 1 == l_total {
                F::infinity()
            } else {
                self.state.arms[t].eta[l + 1]
            };
            self.state.arms[t].eta[l] =
                draw_truncated_normal(&mut self.rng, mean, var, lower, upper)?;
        }
        for l in 0..l_total {
            let eta = self.state.arms[t].eta[l];
            let mut ss = F::zero();
            for i in 0..n {
                if self.state.alloc[t][i] == l {
                    let d = self.state.y_imputed[t][i] - eta;
                    ss += d * d;
                }
            }
            let shape = h.gamma1 + F::of(counts[l] as f64) / F::two();
            let scale = h.gamma2 + ss / F::two();
            self.state.arms[t].sigma2[l] = draw_inverse_gamma(&mut self.rng, shape, scale)?;
        }
        Ok(())
    }

    /// Redraws the probit augmentation variables in arm `t`: for each unit
    /// and level l <= min(S_i, L-2), a unit-variance normal truncated to the
    /// positive axis at l = S_i and the negative axis at l < S_i.
    pub fn step_augmentation(&mut self, t: usize) -> Result<()> {
        let l_max = self.truncation() - 1;
        let arm = &self.state.arms[t];
        // alpha per (pattern, level).
        let alphas: Vec<Vec<F>> = self
            .patterns
            .rows
            .iter()
            .map(|row| {
                (0..l_max)
                    .map(|l| {
                        let dot: F = row
                            .iter()
                            .zip(arm.beta_row(l))
                            .map(|(&a, &b)| a * b)
                            .sum();
                        arm.beta0[l] + dot
                    })
                    .collect()
            })
            .collect();
        for i in 0..self.data.n() {
            let s = self.state.alloc[t][i];
            let levels = (s + 1).min(l_max);
            let a_row = &alphas[self.patterns.pattern_of[i]];
            let mut zi = Vec::with_capacity(levels);
            for l in 0..levels {
                let (lo, hi) = if l == s {
                    (F::zero(), F::infinity())
                } else {
                    (F::neg_infinity(), F::zero())
                };
                zi.push(draw_truncated_normal(&mut self.rng, a_row[l], F::one(), lo, hi)?);
            }
            self.state.z[t][i] = zi;
        }
        Ok(())
    }

    /// Redraws the weight-regression coefficients in arm `t`. Level l's
    /// design holds the rows of units contributing an augmentation draw at
    /// that level (S_i >= l), with an intercept column; the draw is the
    /// joint conjugate normal for (beta0_l, beta_l).
    pub fn step_beta(&mut self, t: usize) -> Result<()> {
        let p = self.data.p;
        let d = p + 1;
        let l_max = self.truncation() - 1;
        let n = self.data.n();
        let h = &self.hyper;
        // Units with S_i >= l enter level l; accumulate Gram matrices from
        // the deepest level down so each unit's outer product is added once.
        let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); l_max];
        for i in 0..n {
            let s = self.state.alloc[t][i].min(l_max - 1);
            // Unit i contributes to levels 0..=min(S_i, l_max-1); bucket it
            // at its deepest level for the cumulative Gram.
            by_level[s].push(i);
        }
        let mut gram = vec![F::zero(); d * d];
        let mut design_row = vec![F::one(); d];
        let prior_prec = F::one() / h.sigma2_beta;
        for l in (0..l_max).rev() {
            for &i in &by_level[l] {
                design_row[1..].copy_from_slice(self.data.row(i));
                for a in 0..d {
                    for b in 0..d {
                        gram[a * d + b] += design_row[a] * design_row[b];
                    }
                }
            }
            // W = I/sigma2_beta + D'D.
            let mut w = gram.clone();
            for a in 0..d {
                w[a * d + a] += prior_prec;
            }
            // rhs = mu_beta/sigma2_beta * 1 + D'z_l.
            let mut rhs = vec![h.mu_beta * prior_prec; d];
            for i in 0..n {
                if self.state.alloc[t][i] >= l {
                    let zil = self.state.z[t][i][l];
                    rhs[0] += zil;
                    for j in 0..p {
                        rhs[j + 1] += self.data.row(i)[j] * zil;
                    }
                }
            }
            let chol = cholesky(&w, d).map_err(|e| {
                Error::numeric(format!("beta update level {l}: {e}"))
            })?;
            let mean = cholesky_solve(&chol, d, &rhs);
            let zstd: Vec<F> = (0..d)
                .map(|_| draw_normal(&mut self.rng, F::zero(), F::one()))
                .collect::<Result<_>>()?;
            let noise = lower_transpose_solve(&chol, d, &zstd);
            self.state.arms[t].beta0[l] = mean[0] + noise[0];
            for j in 0..p {
                self.state.arms[t].beta[l * p + j] = mean[j + 1] + noise[j + 1];
            }
        }
        Ok(())
    }

    /// Redraws the missing potential outcome of every unit from the current
    /// mixture of its unobserved arm; observed-arm entries are untouched.
    pub fn step_impute_missing(&mut self) -> Result<()> {
        for t in 0..2 {
            let log_w = self.pattern_log_weights(t);
            let weights: Vec<Vec<F>> = log_w
                .iter()
                .map(|lw| lw.iter().map(|&v| v.exp()).collect())
                .collect();
            for i in 0..self.data.n() {
                if usize::from(self.data.t[i]) == t {
                    continue;
                }
                let w = &weights[self.patterns.pattern_of[i]];
                let l = draw_categorical(&mut self.rng, w)?;
                let arm = &self.state.arms[t];
                self.state.y_imputed[t][i] =
                    draw_normal(&mut self.rng, arm.eta[l], arm.sigma2[l])?;
            }
        }
        Ok(())
    }

    /// One full Gibbs iteration: both arm sweeps, then imputation.
    pub fn sweep(&mut self) -> Result<()> {
        for t in 0..2 {
            self.step_cluster_allocations(t)?;
            self.step_cluster_params(t)?;
            self.step_augmentation(t)?;
            self.step_beta(t)?;
        }
        self.step_impute_missing()
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper_raw
    }
}

fn init_state<F: Scalar>(
    data: &Dataset<F>,
    hyper: &Hyperparams,
    rng: &mut RngHandle,
) -> Result<ChainState<F>> {
    let l_total = hyper.truncation;
    let h = HyperF::<F>::from(hyper);
    let n = data.n();
    let p = data.p;
    let mut arms = Vec::with_capacity(2);
    let mut alloc = Vec::with_capacity(2);
    for t in 0..2 {
        // Quantile-bin the arm's observed outcomes.
        let mut observed: Vec<F> = (0..n)
            .filter(|&i| usize::from(data.t[i]) == t)
            .map(|i| data.y[i])
            .collect();
        observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = 5.min(l_total);
        let mut centers: Vec<(F, F)> = Vec::with_capacity(l_total);
        for b in 0..k {
            let lo = b * observed.len() / k;
            let hi = ((b + 1) * observed.len() / k).max(lo + 1).min(observed.len());
            let bin = &observed[lo..hi];
            let m: F = bin.iter().cloned().sum::<F>() / F::of(bin.len() as f64);
            let var = if bin.len() > 1 {
                bin.iter().map(|&v| (v - m) * (v - m)).sum::<F>() / F::of((bin.len() - 1) as f64)
            } else {
                F::zero()
            };
            centers.push((m, var.max(F::of(1e-3))));
        }
        // Pad the remaining atoms with prior draws; the prior mean of the
        // variance (gamma2/(gamma1-1) when defined) seeds their spread.
        let prior_var = if hyper.gamma1 > 1.0 {
            F::of(hyper.gamma2 / (hyper.gamma1 - 1.0))
        } else {
            F::one()
        };
        while centers.len() < l_total {
            let m = draw_normal(rng, h.mu_eta, h.sigma2_eta)?;
            centers.push((m, prior_var));
        }
        centers.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Enforce strict increase against coincident draws.
        for idx in 1..centers.len() {
            if !(centers[idx].0 > centers[idx - 1].0) {
                centers[idx].0 = centers[idx - 1].0 + F::of(1e-9);
            }
        }
        let eta: Vec<F> = centers.iter().map(|c| c.0).collect();
        let sigma2: Vec<F> = centers.iter().map(|c| c.1).collect();
        // Allocate every unit (observed or not) to the nearest atom.
        let s: Vec<usize> = (0..n)
            .map(|i| {
                let y = data.y[i];
                let mut best = 0;
                let mut best_d = F::infinity();
                for (l, &e) in eta.iter().enumerate() {
                    let d = (y - e).abs();
                    if d < best_d {
                        best_d = d;
                        best = l;
                    }
                }
                best
            })
            .collect();
        arms.push(ArmParams {
            eta,
            sigma2,
            beta0: vec![F::zero(); l_total - 1],
            beta: vec![F::zero(); (l_total - 1) * p],
            p,
        });
        alloc.push(s);
    }
    let y_imputed = [data.y.clone(), data.y.clone()];
    let z = [vec![Vec::new(); n], vec![Vec::new(); n]];
    Ok(ChainState {
        arms: [arms.remove(0), arms.remove(0)],
        alloc: [alloc.remove(0), alloc.remove(0)],
        y_imputed,
        z,
    })
}

/// Runs the full blocked Gibbs chain and returns the thinned post-burn-in
/// trace. Deterministic given `config.seed`.
pub fn run_chain<F: Scalar>(
    data: &Dataset<F>,
    hyper: &Hyperparams,
    config: &ChainConfig,
) -> Result<PosteriorDraws<F>> {
    config.validate()?;
    let mut chain = Chain::new(data, hyper, config.seed)?;
    let mut states = Vec::with_capacity(config.stored_draws());
    for r in 0..config.n_iter {
        chain.sweep().map_err(|e| {
            Error::numeric(format!("iteration {r}: {e}"))
        })?;
        if r >= config.burn_in && (r - config.burn_in + 1).is_multiple_of(config.thin) {
            states.push(chain.state.clone());
        }
    }
    Ok(PosteriorDraws {
        states,
        config: *config,
        hyper: hyper.clone(),
    })
}
