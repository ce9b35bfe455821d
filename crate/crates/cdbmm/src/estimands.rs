//! Group-level causal summaries built on the posterior draws: group
//! formation from the two arms' partition point estimates, group average
//! treatment effects, group average response ratios, and the overall
//! average effect.
//!
//! Group membership is fixed by the partition point estimates; posterior
//! uncertainty enters only through the imputed potential outcomes, so every
//! summary is a posterior sample of size equal to the stored draw count.

use crate::error::{Error, Result};
use crate::gibbs::PosteriorDraws;
use crate::model::Dataset;
use crate::partition::Partition;
use crate::scalar::Scalar;

/// Units sharing a (control-cluster, treated-cluster) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    /// Group label per unit, contiguous from 0 in order of first appearance.
    pub labels: Vec<usize>,
    pub n_groups: usize,
    /// Member indices per group.
    pub members: Vec<Vec<usize>>,
}

/// Groups are the Cartesian product of the two arms' partitions: units land
/// together only when they share a cluster under both arms.
pub fn form_groups(control: &Partition, treated: &Partition) -> Result<Groups> {
    if control.labels.len() != treated.labels.len() {
        return Err(Error::input(format!(
            "partition lengths differ: {} vs {}",
            control.labels.len(),
            treated.labels.len()
        )));
    }
    let n = control.labels.len();
    let mut map = std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(n);
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let key = (control.labels[i], treated.labels[i]);
        let next = members.len();
        let g = *map.entry(key).or_insert(next);
        if g == members.len() {
            members.push(Vec::new());
        }
        members[g].push(i);
        labels.push(g);
    }
    Ok(Groups {
        labels,
        n_groups: members.len(),
        members,
    })
}

/// Posterior summary of one scalar quantity.
#[derive(Debug, Clone)]
pub struct PosteriorSummary<F> {
    pub mean: F,
    pub median: F,
    pub sd: F,
    pub lower: F,
    pub upper: F,
    pub draws: Vec<F>,
}

fn summarize<F: Scalar>(mut draws: Vec<F>, level: f64) -> PosteriorSummary<F> {
    let n = draws.len();
    let nf = F::of(n as f64);
    let mean: F = draws.iter().cloned().sum::<F>() / nf;
    let var: F = if n > 1 {
        draws.iter().map(|&d| (d - mean) * (d - mean)).sum::<F>() / F::of((n - 1) as f64)
    } else {
        F::zero()
    };
    let mut sorted = draws.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> F {
        // Linear interpolation between order statistics.
        let h = p * (n - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        let w = F::of(h - lo as f64);
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    };
    let tail = (1.0 - level) / 2.0;
    let summary = PosteriorSummary {
        mean,
        median: q(0.5),
        sd: var.sqrt(),
        lower: q(tail),
        upper: q(1.0 - tail),
        draws: Vec::new(),
    };
    std::mem::swap(&mut draws, &mut sorted);
    PosteriorSummary { draws, ..summary }
}

/// One group's effect summary.
#[derive(Debug, Clone)]
pub struct GroupEffect<F> {
    pub group: usize,
    pub size: usize,
    pub summary: PosteriorSummary<F>,
    /// Set when the group holds fewer units than the reporting threshold.
    pub small_group: bool,
    /// Ratio summaries only: draws whose denominator was numerically zero.
    pub degenerate_draws: usize,
}

/// Minimum group size before the small-group flag is raised.
pub const SMALL_GROUP_THRESHOLD: usize = 5;

fn group_draw_means<F: Scalar>(
    draws: &PosteriorDraws<F>,
    members: &[usize],
    arm: usize,
) -> Vec<F> {
    let m = F::of(members.len() as f64);
    draws
        .states
        .iter()
        .map(|s| members.iter().map(|&i| s.y_imputed[arm][i]).sum::<F>() / m)
        .collect()
}

/// Group average treatment effects: per draw, the mean of `y(1) - y(0)`
/// over the group's members.
pub fn gate_posterior<F: Scalar>(
    draws: &PosteriorDraws<F>,
    groups: &Groups,
    level: f64,
) -> Result<Vec<GroupEffect<F>>> {
    check_inputs(draws, groups, level)?;
    let out = groups
        .members
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let m = F::of(members.len() as f64);
            let effect_draws: Vec<F> = draws
                .states
                .iter()
                .map(|s| {
                    members
                        .iter()
                        .map(|&i| s.y_imputed[1][i] - s.y_imputed[0][i])
                        .sum::<F>()
                        / m
                })
                .collect();
            GroupEffect {
                group: g,
                size: members.len(),
                summary: summarize(effect_draws, level),
                small_group: members.len() < SMALL_GROUP_THRESHOLD,
                degenerate_draws: 0,
            }
        })
        .collect();
    Ok(out)
}

/// Group average response ratios: per draw, the ratio of the group's mean
/// treated outcome to its mean control outcome. Draws with a numerically
/// zero denominator are dropped and counted in `degenerate_draws`.
pub fn garr_posterior<F: Scalar>(
    draws: &PosteriorDraws<F>,
    groups: &Groups,
    level: f64,
) -> Result<Vec<GroupEffect<F>>> {
    check_inputs(draws, groups, level)?;
    let eps = F::of(1e-12);
    let out = groups
        .members
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let num = group_draw_means(draws, members, 1);
            let den = group_draw_means(draws, members, 0);
            let mut ratio_draws = Vec::with_capacity(num.len());
            let mut degenerate = 0usize;
            for (a, b) in num.iter().zip(&den) {
                if b.abs() < eps {
                    degenerate += 1;
                } else {
                    ratio_draws.push(*a / *b);
                }
            }
            if ratio_draws.is_empty() {
                return Err(Error::numeric(format!(
                    "group {g}: every draw has a numerically zero control mean"
                )));
            }
            Ok(GroupEffect {
                group: g,
                size: members.len(),
                summary: summarize(ratio_draws, level),
                small_group: members.len() < SMALL_GROUP_THRESHOLD,
                degenerate_draws: degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out)
}

/// Average treatment effect over all units, one value per stored draw.
pub fn ate_posterior<F: Scalar>(draws: &PosteriorDraws<F>, level: f64) -> Result<PosteriorSummary<F>> {
    if draws.states.is_empty() {
        return Err(Error::input("no stored posterior draws".to_string()));
    }
    check_level(level)?;
    let n = draws.states[0].y_imputed[0].len();
    let nf = F::of(n as f64);
    let effect_draws: Vec<F> = draws
        .states
        .iter()
        .map(|s| {
            (0..n)
                .map(|i| s.y_imputed[1][i] - s.y_imputed[0][i])
                .sum::<F>()
                / nf
        })
        .collect();
    Ok(summarize(effect_draws, level))
}

/// Covariate profile of one group: per-column means, plus the modal value
/// for columns flagged as categorical.
#[derive(Debug, Clone)]
pub struct GroupProfile<F> {
    pub group: usize,
    pub size: usize,
    pub column_means: Vec<F>,
    /// Modal value per column; `None` for columns not flagged categorical.
    pub column_modes: Vec<Option<F>>,
}

pub fn group_profiles<F: Scalar>(
    data: &Dataset<F>,
    groups: &Groups,
    categorical: &[bool],
) -> Result<Vec<GroupProfile<F>>> {
    if groups.labels.len() != data.n() {
        return Err(Error::input(format!(
            "groups cover {} units, dataset has {}",
            groups.labels.len(),
            data.n()
        )));
    }
    if categorical.len() != data.p {
        return Err(Error::input(format!(
            "categorical flags cover {} columns, dataset has {}",
            categorical.len(),
            data.p
        )));
    }
    let out = groups
        .members
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let m = F::of(members.len() as f64);
            let column_means: Vec<F> = (0..data.p)
                .map(|j| members.iter().map(|&i| data.row(i)[j]).sum::<F>() / m)
                .collect();
            let column_modes = (0..data.p)
                .map(|j| {
                    if !categorical[j] {
                        return None;
                    }
                    let mut counts: std::collections::HashMap<u64, (usize, F)> =
                        std::collections::HashMap::new();
                    for &i in members {
                        let v = data.row(i)[j];
                        counts.entry(v.f64().to_bits()).or_insert((0, v)).0 += 1;
                    }
                    counts
                        .into_values()
                        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.partial_cmp(&a.1).unwrap()))
                        .map(|(_, v)| v)
                })
                .collect();
            GroupProfile {
                group: g,
                size: members.len(),
                column_means,
                column_modes,
            }
        })
        .collect();
    Ok(out)
}

fn check_level(level: f64) -> Result<()> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::input(format!(
            "credible level must be in (0, 1), got {level}"
        )));
    }
    Ok(())
}

fn check_inputs<F: Scalar>(draws: &PosteriorDraws<F>, groups: &Groups, level: f64) -> Result<()> {
    if draws.states.is_empty() {
        return Err(Error::input("no stored posterior draws".to_string()));
    }
    let n = draws.states[0].y_imputed[0].len();
    if groups.labels.len() != n {
        return Err(Error::input(format!(
            "groups cover {} units, draws cover {n}",
            groups.labels.len()
        )));
    }
    check_level(level)
}
