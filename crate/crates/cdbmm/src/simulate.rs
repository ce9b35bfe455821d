//! Synthetic data-generating processes with known group structure, plus the
//! replicate-study harness that measures how well the full pipeline recovers
//! the truth (adjusted Rand index, ATE bias, per-group effect error).
//!
//! Seven built-in scenarios share five Bernoulli confounders
//! X1..X5 ~ Be(0.4), Be(0.6), Be(0.3), Be(0.5), Be(0.2) and a logistic
//! treatment law; they differ in the group rules and the per-group outcome
//! means and spreads. Scenario parameters can be overridden.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimands::{ate_posterior, form_groups, gate_posterior};
use crate::gibbs::{run_chain, ChainConfig};
use crate::kernels::{draw_normal, RngHandle};
use crate::model::{Dataset, Hyperparams};
use crate::partition::{
    adjusted_rand_index, build_psm, point_estimate_partition, Partition, PartitionLoss,
    DEFAULT_MERGE_KAPPA,
};

const N_COVARIATES: usize = 5;
const COVARIATE_PROBS: [f64; N_COVARIATES] = [0.4, 0.6, 0.3, 0.5, 0.2];
const N_PATTERNS: usize = 1 << N_COVARIATES;

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Optional replacements for a scenario's generative constants.
///
/// `group_of_pattern` maps each of the 32 covariate patterns (bit j of the
/// index is X_{j+1}) to a group; when present it redefines the number of
/// groups and the parameter vectors must match.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ScenarioOverrides {
    pub eta0: Option<Vec<f64>>,
    pub eta1: Option<Vec<f64>>,
    pub sigma0: Option<Vec<f64>>,
    pub sigma1: Option<Vec<f64>>,
    pub group_of_pattern: Option<Vec<usize>>,
}

/// One data-generating process: scenario id, sample size, seed, overrides.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub id: usize,
    pub n: usize,
    pub seed: u64,
    pub overrides: ScenarioOverrides,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            id: 1,
            n: 500,
            seed: 0,
            overrides: ScenarioOverrides::default(),
        }
    }
}

/// Resolved generative constants for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioTruth {
    pub n_groups: usize,
    pub eta0: Vec<f64>,
    pub eta1: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
    /// Group per covariate pattern (bit j of the index is X_{j+1}).
    pub group_of_pattern: Vec<usize>,
    /// Scenario 5 uses the wider treatment score.
    wide_treatment: bool,
}

impl ScenarioTruth {
    /// True per-group effects.
    pub fn gate(&self) -> Vec<f64> {
        self.eta1
            .iter()
            .zip(&self.eta0)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Population group probabilities under the covariate law.
    pub fn group_probabilities(&self) -> Vec<f64> {
        let mut probs = vec![0.0; self.n_groups];
        for pattern in 0..N_PATTERNS {
            let mut p = 1.0;
            for (j, &pj) in COVARIATE_PROBS.iter().enumerate() {
                p *= if pattern >> j & 1 == 1 { pj } else { 1.0 - pj };
            }
            probs[self.group_of_pattern[pattern]] += p;
        }
        probs
    }

    /// Population average effect: group probabilities dotted with the GATEs.
    pub fn ate(&self) -> f64 {
        self.group_probabilities()
            .iter()
            .zip(self.gate())
            .map(|(p, g)| p * g)
            .sum()
    }

    fn treatment_probability(&self, x: &[f64]) -> f64 {
        let mut score = 0.4 * x[0] + 0.6 * x[1];
        if self.wide_treatment {
            score += -0.3 * x[2] + 0.2 * x[3] * x[4];
        }
        expit(score)
    }
}

fn default_group_rule(id: usize, x: [u8; N_COVARIATES]) -> usize {
    let [x1, x2, x3, x4, _] = x;
    match id {
        1 | 2 | 3 | 6 => {
            if x1 == 0 && x2 == 0 {
                0
            } else if x1 == 1 {
                1
            } else {
                2
            }
        }
        4 => {
            if x1 == 0 && x2 == 1 {
                0
            } else if x1 == 0 && x2 == 0 {
                1
            } else if x1 == 1 && x2 == 1 {
                2
            } else {
                3
            }
        }
        5 => {
            if x1 == 1 && x2 == 1 {
                0
            } else if x1 == 0 && x3 == 1 {
                1
            } else if x1 == 0 && x3 == 0 && x4 == 1 {
                2
            } else if x1 == 0 && x3 == 0 && x4 == 0 {
                3
            } else {
                4
            }
        }
        7 => 0,
        _ => unreachable!(),
    }
}

/// Resolves the scenario constants, applying any overrides.
pub fn scenario_truth(spec: &ScenarioSpec) -> Result<ScenarioTruth> {
    let (eta0, eta1, sigma0, sigma1): (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) = match spec.id {
        1 => (
            vec![2.0, 4.0, 6.0],
            vec![0.0, 3.0, 6.0],
            vec![0.3; 3],
            vec![0.3; 3],
        ),
        2 => (
            vec![0.0, 2.2, 4.4],
            vec![0.0, 0.0, 0.0],
            vec![0.2; 3],
            vec![0.2; 3],
        ),
        3 => (
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.5, 3.0],
            vec![0.2, 0.25, 0.25],
            vec![0.25, 0.3, 0.2],
        ),
        4 => (
            vec![1.0, 2.0, 3.0, 3.0],
            vec![0.0, 1.5, 3.0, 4.5],
            vec![0.2; 4],
            vec![0.2; 4],
        ),
        5 => (
            vec![2.0, 2.0, 3.0, 4.5, 6.5],
            vec![0.0, 1.0, 2.5, 5.0, 7.5],
            vec![0.2; 5],
            vec![0.2; 5],
        ),
        6 => (
            vec![1.5, 2.0, 2.5],
            vec![1.0, 1.75, 2.5],
            vec![0.3; 3],
            vec![0.3; 3],
        ),
        7 => (vec![2.0], vec![3.0], vec![0.5], vec![0.5]),
        other => {
            return Err(Error::input(format!(
                "scenario id must be 1..=7, got {other}"
            )))
        }
    };
    let group_of_pattern: Vec<usize> = match &spec.overrides.group_of_pattern {
        Some(table) => {
            if table.len() != N_PATTERNS {
                return Err(Error::input(format!(
                    "group_of_pattern must cover all {N_PATTERNS} covariate patterns, got {}",
                    table.len()
                )));
            }
            table.clone()
        }
        None => (0..N_PATTERNS)
            .map(|pattern| {
                let x = std::array::from_fn(|j| (pattern >> j & 1) as u8);
                default_group_rule(spec.id, x)
            })
            .collect(),
    };
    let n_groups = group_of_pattern.iter().max().unwrap() + 1;
    {
        // Every group below the maximum must actually appear.
        let mut seen = vec![false; n_groups];
        for &g in &group_of_pattern {
            seen[g] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::input(
                "group_of_pattern labels must be contiguous from 0".to_string(),
            ));
        }
    }
    let pick = |over: &Option<Vec<f64>>, default: Vec<f64>, name: &str| -> Result<Vec<f64>> {
        match over {
            Some(v) if v.len() == n_groups => Ok(v.clone()),
            Some(v) => Err(Error::input(format!(
                "{name} override has length {}, scenario has {n_groups} groups",
                v.len()
            ))),
            None if default.len() == n_groups => Ok(default),
            None => Err(Error::input(format!(
                "group_of_pattern defines {n_groups} groups; {name} must be overridden to match"
            ))),
        }
    };
    let truth = ScenarioTruth {
        n_groups,
        eta0: pick(&spec.overrides.eta0, eta0, "eta0")?,
        eta1: pick(&spec.overrides.eta1, eta1, "eta1")?,
        sigma0: pick(&spec.overrides.sigma0, sigma0, "sigma0")?,
        sigma1: pick(&spec.overrides.sigma1, sigma1, "sigma1")?,
        group_of_pattern,
        wide_treatment: spec.id == 5,
    };
    if truth
        .sigma0
        .iter()
        .chain(&truth.sigma1)
        .any(|&s| !(s > 0.0))
    {
        return Err(Error::input("sigma values must be positive".to_string()));
    }
    Ok(truth)
}

/// A simulated sample with its generative truth attached.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub data: Dataset<f64>,
    pub true_groups: Vec<usize>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// True per-group effects.
    pub true_gate: Vec<f64>,
    /// Population average effect under the covariate law.
    pub true_ate: f64,
    pub truth: ScenarioTruth,
}

impl SyntheticDataset {
    /// Average of the drawn unit-level effects; fluctuates around `true_ate`.
    pub fn sample_ate(&self) -> f64 {
        self.y1
            .iter()
            .zip(&self.y0)
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / self.y0.len() as f64
    }
}

/// Draws one sample from the scenario's data-generating process.
pub fn simulate_scenario(spec: &ScenarioSpec) -> Result<SyntheticDataset> {
    if spec.n < 2 {
        return Err(Error::input(format!(
            "sample size must be at least 2, got {}",
            spec.n
        )));
    }
    let truth = scenario_truth(spec)?;
    let mut rng = RngHandle::new(spec.seed);
    let n = spec.n;
    let mut x = Vec::with_capacity(n * N_COVARIATES);
    let mut t = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pattern = 0usize;
        let mut row = [0.0; N_COVARIATES];
        for (j, &pj) in COVARIATE_PROBS.iter().enumerate() {
            if rng.uniform() < pj {
                pattern |= 1 << j;
                row[j] = 1.0;
            }
        }
        let g = truth.group_of_pattern[pattern];
        let ti = u8::from(rng.uniform() < truth.treatment_probability(&row));
        let yi0 = draw_normal(&mut rng, truth.eta0[g], truth.sigma0[g] * truth.sigma0[g])?;
        let yi1 = draw_normal(&mut rng, truth.eta1[g], truth.sigma1[g] * truth.sigma1[g])?;
        x.extend_from_slice(&row);
        t.push(ti);
        groups.push(g);
        y0.push(yi0);
        y1.push(yi1);
        y.push(if ti == 1 { yi1 } else { yi0 });
    }
    let names = (1..=N_COVARIATES).map(|j| format!("x{j}")).collect();
    let data = Dataset::new(y, t, x, N_COVARIATES, names)?;
    Ok(SyntheticDataset {
        data,
        true_groups: groups,
        y0,
        y1,
        true_gate: truth.gate(),
        true_ate: truth.ate(),
        truth,
    })
}

/// Per-replicate recovery metrics.
#[derive(Debug, Clone)]
pub struct ReplicateMetrics {
    pub replicate: usize,
    pub ari: f64,
    pub ate_estimate: f64,
    /// Posterior-mean ATE minus the population truth.
    pub ate_bias: f64,
    /// Posterior-mean ATE minus this sample's average drawn effect.
    pub ate_sample_bias: f64,
    /// Occupied clusters in the partition point estimate, control then
    /// treated arm.
    pub occupied_clusters: [usize; 2],
    pub n_estimated_groups: usize,
    /// Posterior-mean effect of the estimated group matched (by maximum
    /// member overlap) to each true group; `None` when a true group got no
    /// match.
    pub gate_by_true_group: Vec<Option<f64>>,
}

/// Replicate-study summary plus the raw per-replicate metrics.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub scenario: usize,
    pub n_reps: usize,
    pub sigma2_beta: f64,
    pub true_gate: Vec<f64>,
    pub true_ate: f64,
    pub ari_mean: f64,
    pub ari_sd: f64,
    pub ate_bias_mean: f64,
    pub ate_bias_sd: f64,
    pub ate_mse: f64,
    /// Replicate-mean matched GATE per true group (over replicates where
    /// the group was matched).
    pub gate_mean_by_true_group: Vec<Option<f64>>,
    pub metrics: Vec<ReplicateMetrics>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Matches estimated groups to true groups by maximizing total member
/// overlap under an injective assignment (exhaustive over the true groups,
/// which are few).
pub fn match_groups_by_overlap(
    true_labels: &[usize],
    est_labels: &[usize],
    k_true: usize,
    k_est: usize,
) -> Vec<Option<usize>> {
    let mut overlap = vec![vec![0usize; k_est]; k_true];
    for (&tg, &eg) in true_labels.iter().zip(est_labels) {
        overlap[tg][eg] += 1;
    }
    let mut best_assign = vec![None; k_true];
    let mut best_score = 0usize;
    let mut assign = vec![None; k_true];
    let mut used = vec![false; k_est];
    fn recurse(
        g: usize,
        score: usize,
        overlap: &[Vec<usize>],
        used: &mut [bool],
        assign: &mut [Option<usize>],
        best_score: &mut usize,
        best_assign: &mut [Option<usize>],
    ) {
        if g == overlap.len() {
            if score > *best_score || best_assign.iter().all(|a| a.is_none()) {
                *best_score = score;
                best_assign.copy_from_slice(assign);
            }
            return;
        }
        for e in 0..used.len() {
            if !used[e] && overlap[g][e] > 0 {
                used[e] = true;
                assign[g] = Some(e);
                recurse(g + 1, score + overlap[g][e], overlap, used, assign, best_score, best_assign);
                assign[g] = None;
                used[e] = false;
            }
        }
        // Leaving this true group unmatched.
        recurse(g + 1, score, overlap, used, assign, best_score, best_assign);
    }
    recurse(
        0,
        0,
        &overlap,
        &mut used,
        &mut assign,
        &mut best_score,
        &mut best_assign,
    );
    best_assign
}

/// Fits one simulated sample with the full pipeline and scores recovery.
pub fn fit_replicate(
    synthetic: &SyntheticDataset,
    hyper: &Hyperparams,
    chain: &ChainConfig,
    loss: PartitionLoss,
    replicate: usize,
) -> Result<ReplicateMetrics> {
    let draws = run_chain(&synthetic.data, hyper, chain)?;
    let mut partitions = Vec::with_capacity(2);
    for arm in 0..2 {
        let alloc = draws.effective_alloc_draws(arm, DEFAULT_MERGE_KAPPA);
        let psm = build_psm(&alloc)?;
        partitions.push(point_estimate_partition(&psm, &alloc, loss)?);
    }
    let occupied_clusters = [partitions[0].n_clusters(), partitions[1].n_clusters()];
    let groups = form_groups(&partitions[0], &partitions[1])?;
    let ari = adjusted_rand_index(
        &Partition::new(groups.labels.clone()),
        &Partition::new(synthetic.true_groups.clone()),
    )?;
    let ate = ate_posterior(&draws, 0.95)?;
    let gates = gate_posterior(&draws, &groups, 0.95)?;
    let k_true = synthetic.truth.n_groups;
    let assignment = match_groups_by_overlap(
        &synthetic.true_groups,
        &groups.labels,
        k_true,
        groups.n_groups,
    );
    let gate_by_true_group = assignment
        .iter()
        .map(|a| a.map(|e| gates[e].summary.mean))
        .collect();
    Ok(ReplicateMetrics {
        replicate,
        ari,
        ate_estimate: ate.mean,
        ate_bias: ate.mean - synthetic.true_ate,
        ate_sample_bias: ate.mean - synthetic.sample_ate(),
        occupied_clusters,
        n_estimated_groups: groups.n_groups,
        gate_by_true_group,
    })
}

/// Simulates and fits `n_reps` independent samples in parallel, with seeds
/// split deterministically from the spec and chain seeds.
pub fn replicate_study(
    spec: &ScenarioSpec,
    n_reps: usize,
    hyper: &Hyperparams,
    chain: &ChainConfig,
    loss: PartitionLoss,
) -> Result<StudyReport> {
    if n_reps == 0 {
        return Err(Error::input("replicate count must be positive".to_string()));
    }
    chain.validate()?;
    let truth = scenario_truth(spec)?;
    let data_seeds = RngHandle::new(spec.seed);
    let chain_seeds = RngHandle::new(chain.seed);
    let metrics: Vec<ReplicateMetrics> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let rep_spec = ScenarioSpec {
                seed: data_seeds.split(r as u64).seed(),
                ..spec.clone()
            };
            let rep_chain = ChainConfig {
                seed: chain_seeds.split(r as u64).seed(),
                ..*chain
            };
            let synthetic = simulate_scenario(&rep_spec)?;
            fit_replicate(&synthetic, hyper, &rep_chain, loss, r)
                .map_err(|e| Error::numeric(format!("replicate {r}: {e}")))
        })
        .collect::<Result<_>>()?;
    let (ari_mean, ari_sd) = mean_sd(&metrics.iter().map(|m| m.ari).collect::<Vec<_>>());
    let biases: Vec<f64> = metrics.iter().map(|m| m.ate_bias).collect();
    let (ate_bias_mean, ate_bias_sd) = mean_sd(&biases);
    let ate_mse = biases.iter().map(|b| b * b).sum::<f64>() / biases.len() as f64;
    let gate_mean_by_true_group = (0..truth.n_groups)
        .map(|g| {
            let vals: Vec<f64> = metrics
                .iter()
                .filter_map(|m| m.gate_by_true_group[g])
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect();
    Ok(StudyReport {
        scenario: spec.id,
        n_reps,
        sigma2_beta: hyper.sigma2_beta,
        true_gate: truth.gate(),
        true_ate: truth.ate(),
        ari_mean,
        ari_sd,
        ate_bias_mean,
        ate_bias_sd,
        ate_mse,
        gate_mean_by_true_group,
        metrics,
    })
}

/// Reruns the replicate study once per prior-scale value, all else fixed.
pub fn sensitivity_grid(
    spec: &ScenarioSpec,
    sigma2_beta_values: &[f64],
    n_reps: usize,
    hyper: &Hyperparams,
    chain: &ChainConfig,
    loss: PartitionLoss,
) -> Result<Vec<StudyReport>> {
    if sigma2_beta_values.is_empty() {
        return Err(Error::input(
            "sensitivity grid needs at least one value".to_string(),
        ));
    }
    sigma2_beta_values
        .iter()
        .map(|&s2| {
            let h = Hyperparams {
                sigma2_beta: s2,
                ..hyper.clone()
            };
            h.validate()?;
            replicate_study(spec, n_reps, &h, chain, loss)
        })
        .collect()
}

impl StudyReport {
    /// Delimited summary table; one row per report.
    pub fn table_header() -> String {
        "scenario\tsigma2_beta\tn_reps\tari_mean\tari_sd\tate_bias_mean\tate_bias_sd\tate_mse"
            .to_string()
    }

    pub fn table_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.6}",
            self.scenario,
            self.sigma2_beta,
            self.n_reps,
            self.ari_mean,
            self.ari_sd,
            self.ate_bias_mean,
            self.ate_bias_sd,
            self.ate_mse
        )
    }

    /// Per-replicate metrics as a delimited table.
    pub fn replicate_table(&self) -> String {
        let mut out = String::from(
            "replicate\tari\tate_estimate\tate_bias\toccupied_control\toccupied_treated\tn_groups",
        );
        for m in &self.metrics {
            out.push_str(&format!(
                "\n{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
                m.replicate,
                m.ari,
                m.ate_estimate,
                m.ate_bias,
                m.occupied_clusters[0],
                m.occupied_clusters[1],
                m.n_estimated_groups
            ));
        }
        out
    }
}
