//! Propensity-score pre-processing: logistic regression by IRLS, greedy
//! 1-to-1 nearest-neighbor matching without replacement, and standardized
//! mean difference balance tables.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::scalar::Scalar;

/// Fitted propensity model: coefficients (intercept first) and per-unit
/// treatment probabilities.
#[derive(Debug, Clone)]
pub struct PropensityFit<F> {
    pub coef: Vec<F>,
    pub scores: Vec<F>,
    pub iterations: usize,
}

/// Result of 1-to-1 nearest-neighbor matching.
#[derive(Debug, Clone)]
pub struct MatchResult<F> {
    /// (treated index, control index) pairs.
    pub pairs: Vec<(usize, usize)>,
    /// True for units that appear in some pair.
    pub retained: Vec<bool>,
    pub scores: Vec<F>,
}

/// One row of the balance table (Love-plot-ready data).
#[derive(Debug, Clone)]
pub struct BalanceRow {
    pub name: String,
    pub smd_before: f64,
    pub smd_after: f64,
    /// Zero pooled variance with unequal means; the SMD is not defined.
    pub degenerate: bool,
}

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Maximum-likelihood logistic regression of `t` on `[1, X]` via IRLS.
///
/// `x` is row-major `n x p`; `names` are the covariate column names used in
/// rank-deficiency diagnostics. `ridge` adds an L2 penalty on the slope
/// coefficients (0 disables it); perfect separation is reported as an error
/// suggesting the ridge flag.
pub fn fit_propensity<F: Scalar>(
    x: &[F],
    p: usize,
    t: &[u8],
    names: &[String],
    ridge: f64,
) -> Result<PropensityFit<F>> {
    let n = t.len();
    if x.len() != n * p {
        return Err(Error::input(format!(
            "covariate matrix has {} entries, expected {n} x {p}",
            x.len()
        )));
    }
    let n_treated = t.iter().filter(|&&v| v == 1).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::input("both treatment arms must be non-empty".to_string()));
    }
    let d = p + 1;
    check_rank(x, n, p, names)?;

    let xf: Vec<f64> = x.iter().map(|v| v.f64()).collect();
    let mut beta = vec![0.0_f64; d];
    let mut eta = vec![0.0_f64; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let probs: Vec<f64> = eta.iter().map(|&e| expit(e).clamp(1e-12, 1.0 - 1e-12)).collect();
        // Score vector U = D'(t - p), penalized on the slopes.
        let mut score = vec![0.0_f64; d];
        for i in 0..n {
            let r = t[i] as f64 - probs[i];
            score[0] += r;
            for j in 0..p {
                score[j + 1] += xf[i * p + j] * r;
            }
        }
        for j in 1..d {
            score[j] -= ridge * beta[j];
        }
        let max_score = score.iter().fold(0.0_f64, |m, &s| m.max(s.abs()));
        let max_coef = beta.iter().fold(0.0_f64, |m, &b| m.max(b.abs()));
        if max_coef > 15.0 && ridge == 0.0 {
            return Err(Error::numeric(
                "propensity coefficients diverging (perfect separation?); \
                 retry with a positive ridge penalty"
                    .to_string(),
            ));
        }
        if max_score < 1e-8 {
            break;
        }
        if iterations > 100 {
            return Err(Error::numeric(
                "logistic regression did not converge in 100 IRLS iterations".to_string(),
            ));
        }
        // Hessian H = D' W D (+ ridge on slopes).
        let mut h = vec![0.0_f64; d * d];
        for i in 0..n {
            let w = probs[i] * (1.0 - probs[i]);
            let row = &xf[i * p..(i + 1) * p];
            h[0] += w;
            for j in 0..p {
                h[j + 1] += w * row[j];
                h[(j + 1) * d] += w * row[j];
                for k in 0..p {
                    h[(j + 1) * d + (k + 1)] += w * row[j] * row[k];
                }
            }
        }
        for j in 1..d {
            h[j * d + j] += ridge;
        }
        let l = cholesky(&h, d).map_err(|_| {
            Error::numeric("IRLS weighted normal equations are singular".to_string())
        })?;
        let step = cholesky_solve(&l, d, &score);
        for j in 0..d {
            beta[j] += step[j];
        }
        for i in 0..n {
            let mut e = beta[0];
            for j in 0..p {
                e += beta[j + 1] * xf[i * p + j];
            }
            eta[i] = e;
        }
    }
    let scores: Vec<F> = eta.iter().map(|&e| F::of(expit(e).clamp(1e-12, 1.0 - 1e-12))).collect();
    Ok(PropensityFit {
        coef: beta.into_iter().map(F::of).collect(),
        scores,
        iterations,
    })
}

/// Rejects rank-deficient designs, naming the offending column via
/// Gram-Schmidt against the intercept and the preceding columns.
fn check_rank<F: Scalar>(x: &[F], n: usize, p: usize, names: &[String]) -> Result<()> {
    // Basis starts with the (normalized) intercept column.
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    for j in 0..p {
        let mut col: Vec<f64> = (0..n).map(|i| x[i * p + j].f64()).collect();
        let orig_norm2: f64 = col.iter().map(|v| v * v).sum::<f64>().max(1.0);
        for b in &basis {
            let proj: f64 = col.iter().zip(b).map(|(c, v)| c * v).sum();
            for (c, v) in col.iter_mut().zip(b) {
                *c -= proj * v;
            }
        }
        let norm2: f64 = col.iter().map(|v| v * v).sum();
        if norm2 < 1e-10 * orig_norm2 {
            let name = names.get(j).map(String::as_str).unwrap_or("?");
            return Err(Error::input(format!(
                "design is rank deficient: column '{name}' (index {j}) is collinear \
                 with the intercept and preceding columns"
            )));
        }
        let norm = norm2.sqrt();
        basis.push(col.into_iter().map(|v| v / norm).collect());
    }
    Ok(())
}

/// Greedy 1-to-1 nearest-neighbor matching without replacement.
///
/// Treated units are processed in decreasing order of score (ties by lower
/// index); each takes the unmatched control with the smallest absolute score
/// difference, ties broken by lower control index. `caliper`, when set,
/// discards pairs whose score distance exceeds it.
pub fn nearest_neighbor_match<F: Scalar>(
    scores: &[F],
    t: &[u8],
    caliper: Option<f64>,
) -> Result<MatchResult<F>> {
    let n = scores.len();
    if t.len() != n {
        return Err(Error::input("scores and treatment have different lengths".to_string()));
    }
    if scores.iter().any(|s| !(*s > F::zero() && *s < F::one())) {
        return Err(Error::input("propensity scores must lie strictly in (0, 1)".to_string()));
    }
    let mut treated: Vec<usize> = (0..n).filter(|&i| t[i] == 1).collect();
    let controls: Vec<usize> = (0..n).filter(|&i| t[i] == 0).collect();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::input("both treatment arms must be non-empty".to_string()));
    }
    treated.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; n];
    let mut pairs = Vec::new();
    for &ti in &treated {
        let mut best: Option<(f64, usize)> = None;
        for &ci in &controls {
            if taken[ci] {
                continue;
            }
            let dist = (scores[ti].f64() - scores[ci].f64()).abs();
            if best.as_ref().is_none_or(|&(bd, bi)| dist < bd || (dist == bd && ci < bi)) {
                best = Some((dist, ci));
            }
        }
        if let Some((dist, ci)) = best {
            if caliper.is_none_or(|c| dist <= c) {
                taken[ci] = true;
                pairs.push((ti, ci));
            }
        }
    }
    let mut retained = vec![false; n];
    for &(a, b) in &pairs {
        retained[a] = true;
        retained[b] = true;
    }
    Ok(MatchResult {
        pairs,
        retained,
        scores: scores.to_vec(),
    })
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// SMD of one column for the units selected by `mask`, with the pooled sd
/// fixed from the pre-match sample.
fn smd(values: &[f64], t: &[u8], mask: Option<&[bool]>, pooled_sd: f64) -> (f64, bool) {
    let pick = |arm: u8| -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .filter(|&(i, _)| t[i] == arm && mask.is_none_or(|m| m[i]))
            .map(|(_, &v)| v)
            .collect()
    };
    let (mt, _) = mean_var(&pick(1));
    let (mc, _) = mean_var(&pick(0));
    if pooled_sd == 0.0 {
        if (mt - mc).abs() < 1e-12 {
            (0.0, false)
        } else {
            (f64::NAN, true)
        }
    } else {
        ((mt - mc) / pooled_sd, false)
    }
}

/// Per-covariate (and propensity-score) SMD before and after matching.
///
/// The pooling denominator is the square root of the average of the two
/// within-arm variances computed on the pre-match data, held fixed for the
/// after-matching column.
pub fn balance_table<F: Scalar>(
    x: &[F],
    p: usize,
    t: &[u8],
    names: &[String],
    result: &MatchResult<F>,
) -> Vec<BalanceRow> {
    let n = t.len();
    let mut rows = Vec::with_capacity(p + 1);
    let mut column = |name: &str, values: Vec<f64>| {
        let treated: Vec<f64> = (0..n).filter(|&i| t[i] == 1).map(|i| values[i]).collect();
        let control: Vec<f64> = (0..n).filter(|&i| t[i] == 0).map(|i| values[i]).collect();
        let (_, vt) = mean_var(&treated);
        let (_, vc) = mean_var(&control);
        let pooled = (0.5 * (vt + vc)).sqrt();
        let (before, deg_b) = smd(&values, t, None, pooled);
        let (after, deg_a) = smd(&values, t, Some(&result.retained), pooled);
        rows.push(BalanceRow {
            name: name.to_string(),
            smd_before: before,
            smd_after: after,
            degenerate: deg_b || deg_a,
        });
    };
    for j in 0..p {
        let values: Vec<f64> = (0..n).map(|i| x[i * p + j].f64()).collect();
        let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        column(&name, values);
    }
    column(
        "propensity_score",
        result.scores.iter().map(|s| s.f64()).collect(),
    );
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::RngHandle;

    fn simulate_logistic(
        n: usize,
        intercept: f64,
        slope: f64,
        seed: u64,
    ) -> (Vec<f64>, Vec<u8>) {
        let mut rng = RngHandle::new(seed);
        let mut x = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = crate::kernels::draw_normal(&mut rng, 0.0, 1.0).unwrap();
            let p = expit(intercept + slope * xi);
            let u: f64 = crate::kernels::draw_normal(&mut rng, 0.0, 1.0).unwrap();
            // Probit-free Bernoulli via the uniform CDF transform.
            let unif = crate::scalar::normal_cdf(u);
            t.push(u8::from(unif < p));
            x.push(xi);
        }
        (x, t)
    }

    #[test]
    fn null_model_recovers_zero_slopes() {
        let n = 100_000;
        let mut rng = RngHandle::new(11);
        let mut x = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            x.push(crate::kernels::draw_normal::<f64>(&mut rng, 0.0, 1.0).unwrap());
            t.push((i % 2) as u8);
        }
        let fit = fit_propensity(&x, 1, &t, &["x1".to_string()], 0.0).unwrap();
        assert!(fit.coef[1].abs() < 0.03, "slope={}", fit.coef[1]);
        // Intercept ~ logit(0.5) = 0.
        assert!(fit.coef[0].abs() < 0.03, "intercept={}", fit.coef[0]);
    }

    #[test]
    fn simulate_then_fit_recovers_slope() {
        let (x, t) = simulate_logistic(100_000, 0.0, 1.0, 5);
        let fit = fit_propensity(&x, 1, &t, &["x1".to_string()], 0.0).unwrap();
        assert!((fit.coef[1] - 1.0).abs() < 0.05, "slope={}", fit.coef[1]);
    }

    #[test]
    fn duplicate_column_named_in_error() {
        let n = 50;
        let mut x = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            let v = (i % 7) as f64;
            x.push(v);
            x.push(v);
            t.push((i % 2) as u8);
        }
        let names = vec!["age".to_string(), "age_copy".to_string()];
        let err = fit_propensity(&x, 2, &t, &names, 0.0).unwrap_err();
        assert!(err.to_string().contains("age_copy"), "{err}");
    }

    #[test]
    fn separation_advises_ridge_and_ridge_succeeds() {
        // Treatment perfectly determined by x.
        let n = 200;
        let mut x = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            let v = if i < n / 2 { -1.0 } else { 1.0 };
            x.push(v + 1e-3 * i as f64 / n as f64);
            t.push(u8::from(v > 0.0));
        }
        let names = vec!["x1".to_string()];
        let err = fit_propensity(&x, 1, &t, &names, 0.0).unwrap_err();
        assert!(err.to_string().contains("ridge"), "{err}");
        assert!(fit_propensity(&x, 1, &t, &names, 1.0).is_ok());
    }

    #[test]
    fn greedy_match_hand_trace() {
        // treated 0.8 and 0.6, controls 0.61 and 0.79; highest-score treated
        // first takes 0.79, second takes 0.61.
        let scores = vec![0.8, 0.6, 0.61, 0.79];
        let t = vec![1, 1, 0, 0];
        let m = nearest_neighbor_match(&scores, &t, None).unwrap();
        assert_eq!(m.pairs, vec![(0, 3), (1, 2)]);
    }

    #[test]
    fn identical_scores_tie_break_by_index() {
        let scores = vec![0.5; 6];
        let t = vec![1, 0, 1, 0, 1, 0];
        let m = nearest_neighbor_match(&scores, &t, None).unwrap();
        // Treated processed in index order (scores tied); each takes the
        // lowest-index free control.
        assert_eq!(m.pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn one_treated_three_controls_yields_one_pair() {
        let scores = vec![0.4, 0.3, 0.5, 0.45];
        let t = vec![1, 0, 0, 0];
        let m = nearest_neighbor_match(&scores, &t, None).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.retained.iter().filter(|&&r| r).count(), 2);
    }

    #[test]
    fn match_is_injective_on_both_sides() {
        let (x, t) = simulate_logistic(2_000, 0.2, 1.5, 9);
        let fit = fit_propensity(&x, 1, &t, &["x1".to_string()], 0.0).unwrap();
        let m = nearest_neighbor_match(&fit.scores, &t, None).unwrap();
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &m.pairs {
            assert_eq!(t[a], 1);
            assert_eq!(t[b], 0);
            assert!(seen.insert(a));
            assert!(seen.insert(b));
        }
    }

    #[test]
    fn balance_identical_distributions_near_zero() {
        let n = 4_000;
        let mut rng = RngHandle::new(3);
        let mut x = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            x.push(crate::kernels::draw_normal::<f64>(&mut rng, 0.0, 1.0).unwrap());
            t.push((i % 2) as u8);
        }
        let fit = fit_propensity(&x, 1, &t, &["x1".to_string()], 0.0).unwrap();
        let m = nearest_neighbor_match(&fit.scores, &t, None).unwrap();
        let rows = balance_table(&x, 1, &t, &["x1".to_string()], &m);
        assert!(rows[0].smd_before.abs() < 0.05);
    }

    #[test]
    fn constant_column_degenerate_flag() {
        let n = 40;
        let mut x = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            // Constant column with arm-dependent means would be degenerate;
            // here equal means -> SMD 0, plus a second truly degenerate one.
            x.push(1.0);
            x.push(if i % 2 == 0 { 0.0 } else { 1.0 });
            t.push((i % 2) as u8);
        }
        let names = vec!["const".to_string(), "armflag".to_string()];
        // Skip the propensity fit (the design is rank deficient by intent);
        // build a synthetic match over everything.
        let m = MatchResult {
            pairs: vec![],
            retained: vec![true; n],
            scores: vec![0.5; n],
        };
        let rows = balance_table(&x, 2, &t, &names, &m);
        assert_eq!(rows[0].smd_before, 0.0);
        assert!(!rows[0].degenerate);
        // armflag is constant within each arm: zero pooled variance, unequal
        // means -> degenerate.
        assert!(rows[1].degenerate);
    }
}
