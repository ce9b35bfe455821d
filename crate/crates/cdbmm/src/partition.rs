//! Posterior summaries over cluster partitions: the posterior similarity
//! matrix, loss-based point estimates (Binder, Variation of Information),
//! and the adjusted Rand index.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A clustering of `n` units. Labels are arbitrary non-negative integers;
/// two partitions are equivalent iff they induce the same co-clustering
/// relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Self {
        Partition { labels }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Relabels clusters contiguously from 0 in order of first appearance.
    pub fn canonical(&self) -> Vec<usize> {
        canonical_labels(&self.labels)
    }

    pub fn n_clusters(&self) -> usize {
        let c = self.canonical();
        c.iter().max().map_or(0, |m| m + 1)
    }

    pub fn equivalent(&self, other: &Partition) -> bool {
        self.n() == other.n() && self.canonical() == other.canonical()
    }
}

pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    let mut next = 0usize;
    labels
        .iter()
        .map(|&l| {
            *map.entry(l).or_insert_with(|| {
                let v = next;
                next += 1;
                v
            })
        })
        .collect()
}

/// Default scale multiplier for [`merge_coincident_clusters`].
pub const DEFAULT_MERGE_KAPPA: f64 = 2.5;

/// Default fraction of the sample below which a component counts as minor
/// in [`merge_coincident_clusters`].
pub const DEFAULT_MERGE_MIN_FRACTION: f64 = 0.02;

/// Collapses mixture components with coinciding kernels into one cluster.
///
/// Component labels identify clusters only up to kernel coincidence: two
/// components whose atoms sit within each other's scale describe the same
/// outcome regime, and the sampler can park one group of units across
/// several such components indefinitely (a label degeneracy, not a real
/// split). Components holding at least `min_size` units ("major") are
/// merged, transitively in atom order, whenever the gap between adjacent
/// major atoms is at most `kappa` times the larger of their two scales.
/// Components below `min_size` are transient satellites: they are absorbed
/// into the nearest major block by atom distance and never bridge two
/// majors that the distance rule keeps apart. `kappa <= 0` disables the
/// whole step. Applied per stored draw before co-clustering summaries.
pub fn merge_coincident_clusters<F: Scalar>(
    alloc: &[usize],
    eta: &[F],
    sigma2: &[F],
    kappa: f64,
    min_size: usize,
) -> Vec<usize> {
    if kappa <= 0.0 {
        return alloc.to_vec();
    }
    let l_total = eta.len();
    let mut counts = vec![0usize; l_total];
    for &l in alloc {
        counts[l] += 1;
    }
    let mut major: Vec<usize> = (0..l_total).filter(|&l| counts[l] >= min_size).collect();
    if major.is_empty() {
        // Degenerate small-sample case: treat every occupied component as
        // major rather than leaving units unassigned.
        major = (0..l_total).filter(|&l| counts[l] > 0).collect();
    }
    // Atoms are kept ordered by the sampler, so adjacency in index is
    // adjacency in location; map each major component to the head of its
    // merged block.
    let mut head = vec![0usize; l_total];
    for w in 0..major.len() {
        let l = major[w];
        head[l] = l;
        if w > 0 {
            let p = major[w - 1];
            let sd = sigma2[l].f64().sqrt().max(sigma2[p].f64().sqrt());
            if eta[l].f64() - eta[p].f64() <= kappa * sd {
                head[l] = head[p];
            }
        }
    }
    // Satellites adopt the block of the nearest major atom.
    for l in 0..l_total {
        if counts[l] > 0 && counts[l] < min_size && !major.contains(&l) {
            let nearest = *major
                .iter()
                .min_by(|&&a, &&b| {
                    let da = (eta[a].f64() - eta[l].f64()).abs();
                    let db = (eta[b].f64() - eta[l].f64()).abs();
                    da.total_cmp(&db)
                })
                .expect("major set is non-empty");
            head[l] = head[nearest];
        }
    }
    alloc.iter().map(|&l| head[l]).collect()
}

/// Empirical co-clustering frequencies across stored draws: symmetric, unit
/// diagonal, entries in [0, 1].
#[derive(Debug, Clone)]
pub struct PosteriorSimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl PosteriorSimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Builds a PSM directly from entries (row-major, must be symmetric with
    /// unit diagonal). Mostly useful for tests and external audits.
    pub fn from_entries(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::input(format!("psm must be {n}x{n}")));
        }
        for i in 0..n {
            if (data[i * n + i] - 1.0).abs() > 1e-12 {
                return Err(Error::input(format!("psm diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = data[i * n + j];
                if !(0.0..=1.0).contains(&v) || (v - data[j * n + i]).abs() > 1e-12 {
                    return Err(Error::input(format!("psm entry ({i},{j}) invalid")));
                }
            }
        }
        Ok(PosteriorSimilarityMatrix { n, data })
    }
}

/// Co-clustering frequencies over stored allocation draws for one arm.
pub fn build_psm(draws: &[Vec<usize>]) -> Result<PosteriorSimilarityMatrix> {
    let r = draws.len();
    if r == 0 {
        return Err(Error::input("need at least one stored draw to build a psm".to_string()));
    }
    let n = draws[0].len();
    if draws.iter().any(|d| d.len() != n) {
        return Err(Error::input("allocation draws have inconsistent lengths".to_string()));
    }
    let mut counts = vec![0u32; n * n];
    for draw in draws {
        for i in 0..n {
            let li = draw[i];
            for j in (i + 1)..n {
                if li == draw[j] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let mut data = vec![0.0; n * n];
    let rf = r as f64;
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let v = counts[i * n + j] as f64 / rf;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(PosteriorSimilarityMatrix { n, data })
}

/// Loss function used to pick the posterior point-estimate partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionLoss {
    Binder,
    /// Variation of Information, in the Jensen lower-bound form computable
    /// from the PSM alone.
    Vi,
}

impl std::str::FromStr for PartitionLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binder" => Ok(PartitionLoss::Binder),
            "vi" => Ok(PartitionLoss::Vi),
            other => Err(Error::input(format!(
                "unknown partition loss '{other}' (expected 'binder' or 'vi')"
            ))),
        }
    }
}

/// Posterior-expected Binder loss of `labels`: `sum_{i<j} |1[same] - psm_ij|`.
pub fn expected_binder_loss(labels: &[usize], psm: &PosteriorSimilarityMatrix) -> f64 {
    let n = psm.n();
    assert_eq!(labels.len(), n);
    let mut loss = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let same = labels[i] == labels[j];
            let p = psm.get(i, j);
            loss += if same { 1.0 - p } else { p };
        }
    }
    loss
}

/// Lower bound on the posterior-expected Variation of Information of
/// `labels`, computed from the PSM (the quantity minimized in practice).
pub fn expected_vi_loss(labels: &[usize], psm: &PosteriorSimilarityMatrix) -> f64 {
    let n = psm.n();
    assert_eq!(labels.len(), n);
    let ln2 = std::f64::consts::LN_2;
    let mut total = 0.0;
    for i in 0..n {
        let mut size_own = 0.0_f64;
        let mut psm_row = 0.0_f64;
        let mut psm_own = 0.0_f64;
        for j in 0..n {
            let p = psm.get(i, j);
            psm_row += p;
            if labels[i] == labels[j] {
                size_own += 1.0;
                psm_own += p;
            }
        }
        total += (size_own.ln() + psm_row.ln() - 2.0 * psm_own.ln()) / ln2;
    }
    total / n as f64
}

pub fn expected_loss(labels: &[usize], psm: &PosteriorSimilarityMatrix, loss: PartitionLoss) -> f64 {
    match loss {
        PartitionLoss::Binder => expected_binder_loss(labels, psm),
        PartitionLoss::Vi => expected_vi_loss(labels, psm),
    }
}

/// Point-estimate partition minimizing the posterior-expected loss.
///
/// The search scans every candidate draw, then alternates two local moves
/// from the best candidate until neither improves the expected loss:
/// greedy cluster merges, and single-unit relocations (each unit may move
/// to any other cluster or open a new one). Relocation matters for units
/// whose co-clustering probabilities hover near one half: any single draw
/// assigns them to an arbitrary side, while the loss puts them with their
/// majority partners. Exhaustive search over all set partitions is
/// infeasible beyond a handful of units; at n <= 8 this heuristic is
/// validated against full enumeration.
pub fn point_estimate_partition(
    psm: &PosteriorSimilarityMatrix,
    candidates: &[Vec<usize>],
    loss: PartitionLoss,
) -> Result<Partition> {
    if candidates.is_empty() {
        return Err(Error::input("candidate set for partition estimate is empty".to_string()));
    }
    let n = psm.n();
    if candidates.iter().any(|c| c.len() != n) {
        return Err(Error::input("candidate partition length does not match psm".to_string()));
    }
    let mut best = canonical_labels(&candidates[0]);
    let mut best_loss = expected_loss(&best, psm, loss);
    for cand in &candidates[1..] {
        let labels = canonical_labels(cand);
        let l = expected_loss(&labels, psm, loss);
        if l < best_loss {
            best_loss = l;
            best = labels;
        }
    }
    loop {
        let relocated = relocation_sweeps(&mut best, &mut best_loss, psm, loss);
        let merged = merge_pass(&mut best, &mut best_loss, psm, loss);
        if !relocated && !merged {
            break;
        }
    }
    Ok(Partition::new(best))
}

/// One round of greedy agglomerative merges; returns whether anything moved.
fn merge_pass(
    best: &mut Vec<usize>,
    best_loss: &mut f64,
    psm: &PosteriorSimilarityMatrix,
    loss: PartitionLoss,
) -> bool {
    let mut any = false;
    loop {
        let k = best.iter().max().map_or(0, |m| m + 1);
        if k < 2 {
            break;
        }
        let mut improved: Option<(f64, Vec<usize>)> = None;
        for a in 0..k {
            for b in (a + 1)..k {
                let merged: Vec<usize> =
                    best.iter().map(|&l| if l == b { a } else { l }).collect();
                let merged = canonical_labels(&merged);
                let l = expected_loss(&merged, psm, loss);
                if l < *best_loss - 1e-12 && improved.as_ref().is_none_or(|(cur, _)| l < *cur) {
                    improved = Some((l, merged));
                }
            }
        }
        match improved {
            Some((l, labels)) => {
                *best_loss = l;
                *best = labels;
                any = true;
            }
            None => break,
        }
    }
    any
}

/// Repeated single-unit relocation sweeps; returns whether anything moved.
///
/// For the Binder loss the change from moving unit `i` between clusters
/// only involves pairs containing `i`, so each candidate move is O(n). The
/// VI bound is evaluated by recomputing the loss on the proposed labeling
/// (still cheap at the sizes the sampler produces, and only attempted while
/// moves keep succeeding).
fn relocation_sweeps(
    best: &mut Vec<usize>,
    best_loss: &mut f64,
    psm: &PosteriorSimilarityMatrix,
    loss: PartitionLoss,
) -> bool {
    let n = psm.n();
    let mut any = false;
    loop {
        let mut changed = false;
        for i in 0..n {
            let k = best.iter().max().map_or(0, |m| m + 1);
            let a = best[i];
            let mut best_move: Option<(f64, usize)> = None;
            for b in 0..=k {
                if b == a {
                    continue;
                }
                let delta = match loss {
                    PartitionLoss::Binder => {
                        // Pairs (i, j): leaving a flips j-in-a pairs from
                        // "same" to "split", joining b flips the reverse.
                        let mut d = 0.0;
                        for j in 0..n {
                            if j == i {
                                continue;
                            }
                            let p = psm.get(i, j);
                            if best[j] == a {
                                d += 2.0 * p - 1.0;
                            } else if best[j] == b {
                                d += 1.0 - 2.0 * p;
                            }
                        }
                        d
                    }
                    PartitionLoss::Vi => {
                        best[i] = b;
                        let l = expected_vi_loss(best, psm);
                        best[i] = a;
                        l - *best_loss
                    }
                };
                if delta < -1e-12 && best_move.is_none_or(|(cur, _)| delta < cur) {
                    best_move = Some((delta, b));
                }
            }
            if let Some((delta, b)) = best_move {
                best[i] = b;
                *best_loss += delta;
                changed = true;
            }
        }
        *best = canonical_labels(best);
        if loss == PartitionLoss::Binder {
            // Accumulated pairwise deltas are exact, but refresh against
            // drift from long runs of moves.
            *best_loss = expected_loss(best, psm, loss);
        }
        if !changed {
            break;
        }
        any = true;
    }
    any
}

/// Hubert-Arabie adjusted Rand index between two partitions.
///
/// Reported raw: it can be negative for worse-than-chance agreement. When
/// the chance-correction denominator vanishes (both partitions trivial) the
/// index is 1 for equivalent partitions and 0 otherwise.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::input(format!(
            "partition lengths differ: {} vs {}",
            a.n(),
            b.n()
        )));
    }
    let n = a.n();
    if n == 0 {
        return Err(Error::input("cannot compare empty partitions".to_string()));
    }
    if n == 1 {
        // A single unit admits one partition; there is no pair to disagree on.
        return Ok(1.0);
    }
    let ca = a.canonical();
    let cb = b.canonical();
    let ka = ca.iter().max().unwrap() + 1;
    let kb = cb.iter().max().unwrap() + 1;
    let mut table = vec![0u64; ka * kb];
    let mut row = vec![0u64; ka];
    let mut col = vec![0u64; kb];
    for i in 0..n {
        table[ca[i] * kb + cb[i]] += 1;
        row[ca[i]] += 1;
        col[cb[i]] += 1;
    }
    let choose2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| choose2(v)).sum();
    let sum_row: f64 = row.iter().map(|&v| choose2(v)).sum();
    let sum_col: f64 = col.iter().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_row * sum_col / total;
    let max = 0.5 * (sum_row + sum_col);
    if (max - expected).abs() < 1e-12 {
        return Ok(if a.equivalent(b) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_keeps_separated_components() {
        // Gaps of 4+ scales: nothing merges.
        let alloc = vec![0, 0, 2, 2, 4];
        let eta = vec![0.0, 0.5, 2.0, 3.0, 4.0];
        let sigma2 = vec![0.04; 5];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, 2.5, 1);
        assert_eq!(canonical_labels(&merged), canonical_labels(&alloc));
    }

    #[test]
    fn merge_collapses_coinciding_components() {
        // Atoms 2.0 and 2.3 with scale 0.5 describe the same regime.
        let alloc = vec![0, 1, 0, 1, 1];
        let eta = vec![2.0, 2.3, 9.0];
        let sigma2 = vec![0.25, 0.25, 0.25];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, 2.5, 1);
        assert_eq!(merged, vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn merge_is_transitive_along_the_atom_chain() {
        // 1.9 - 2.1 - 2.4 chain into one block even though the ends are
        // further apart than one step.
        let alloc = vec![0, 1, 2];
        let eta = vec![1.9, 2.1, 2.4];
        let sigma2 = vec![0.04, 0.04, 0.04];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, 2.5, 1);
        assert_eq!(merged, vec![0, 0, 0]);
    }

    #[test]
    fn merge_skips_empty_components_between_blocks() {
        // Component 1 is unoccupied; occupied neighbors 0 and 2 are compared
        // directly and stay separate across the 2.0 gap.
        let alloc = vec![0, 0, 2];
        let eta = vec![0.0, 1.0, 2.0];
        let sigma2 = vec![0.04, 100.0, 0.04];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, 2.5, 1);
        assert_eq!(canonical_labels(&merged), vec![0, 0, 1]);
    }

    #[test]
    fn satellite_cannot_bridge_major_components() {
        // Two well-separated major components with a single-unit satellite
        // halfway between them whose broad scale would otherwise chain all
        // three together. The satellite is absorbed, not a bridge.
        let alloc = vec![0, 0, 0, 1, 2, 2, 2];
        let eta = vec![0.0, 0.9, 2.0];
        let sigma2 = vec![0.04, 1.0, 0.04];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, 2.5, 2);
        assert_eq!(canonical_labels(&merged), vec![0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn distant_satellite_is_absorbed_into_nearest_major() {
        // An outlier pair far below the bulk joins it regardless of
        // distance: tiny components are not reportable clusters.
        let alloc = vec![0, 0, 5, 5, 5, 5];
        let eta = vec![-4.0, 0.0, 1.0, 1.5, 1.8, 2.0];
        let sigma2 = vec![0.1; 6];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, 2.5, 3);
        assert_eq!(merged, vec![5, 5, 5, 5, 5, 5]);
    }

    #[test]
    fn all_minor_components_fall_back_to_distance_rule() {
        let alloc = vec![0, 1];
        let eta = vec![0.0, 5.0];
        let sigma2 = vec![0.04, 0.04];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, 2.5, 100);
        assert_eq!(canonical_labels(&merged), vec![0, 1]);
    }

    #[test]
    fn merge_disabled_with_nonpositive_kappa() {
        let alloc = vec![0, 1, 0, 1];
        let eta = vec![2.0, 2.01];
        let sigma2 = vec![1.0, 1.0];
        assert_eq!(merge_coincident_clusters(&alloc, &eta, &sigma2, 0.0, 1), alloc);
    }

    #[test]
    fn psm_from_identical_draws_is_zero_one() {
        let draws = vec![vec![0, 0, 1, 1]; 7];
        let psm = build_psm(&draws).unwrap();
        assert_eq!(psm.get(0, 1), 1.0);
        assert_eq!(psm.get(1, 2), 0.0);
        assert_eq!(psm.get(2, 3), 1.0);
        assert_eq!(psm.get(0, 0), 1.0);
    }

    #[test]
    fn psm_counts_split_draws() {
        let draws = vec![vec![0, 0, 1], vec![0, 1, 1]];
        let psm = build_psm(&draws).unwrap();
        assert_eq!(psm.get(0, 1), 0.5);
        assert_eq!(psm.get(1, 0), 0.5);
    }

    #[test]
    fn psm_invariant_to_relabeling_within_draws() {
        let a = build_psm(&[vec![0, 0, 1, 2], vec![5, 5, 9, 9]]).unwrap();
        let b = build_psm(&[vec![3, 3, 0, 7], vec![1, 1, 2, 2]]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.get(i, j), b.get(i, j));
            }
        }
    }

    #[test]
    fn point_estimate_recovers_identical_draws() {
        let draws = vec![vec![0, 0, 1, 1]; 10];
        let psm = build_psm(&draws).unwrap();
        for loss in [PartitionLoss::Binder, PartitionLoss::Vi] {
            let est = point_estimate_partition(&psm, &draws, loss).unwrap();
            assert!(est.equivalent(&Partition::new(vec![0, 0, 1, 1])));
        }
        assert_eq!(expected_binder_loss(&[0, 0, 1, 1], &psm), 0.0);
    }

    #[test]
    fn point_estimate_blockwise_certain_psm() {
        // Two certain blocks; both losses must return the block partition.
        let n = 6;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if (i < 3) == (j < 3) {
                    data[i * n + j] = 1.0;
                }
            }
        }
        let psm = PosteriorSimilarityMatrix::from_entries(n, data).unwrap();
        let candidates = vec![vec![0, 0, 0, 1, 1, 1], vec![0, 1, 2, 3, 4, 5]];
        for loss in [PartitionLoss::Binder, PartitionLoss::Vi] {
            let est = point_estimate_partition(&psm, &candidates, loss).unwrap();
            assert!(est.equivalent(&Partition::new(vec![0, 0, 0, 1, 1, 1])), "{loss:?}");
        }
    }

    #[test]
    fn point_estimate_never_worse_than_any_candidate() {
        let draws = vec![
            vec![0, 0, 1, 1, 2, 2],
            vec![0, 0, 0, 1, 2, 2],
            vec![0, 1, 1, 1, 2, 2],
            vec![0, 0, 1, 1, 1, 2],
        ];
        let psm = build_psm(&draws).unwrap();
        for loss in [PartitionLoss::Binder, PartitionLoss::Vi] {
            let est = point_estimate_partition(&psm, &draws, loss).unwrap();
            let est_loss = expected_loss(&est.labels, &psm, loss);
            for cand in &draws {
                assert!(est_loss <= expected_loss(&canonical_labels(cand), &psm, loss) + 1e-12);
            }
        }
    }

    #[test]
    fn unknown_loss_name_is_an_input_error() {
        assert!("binder".parse::<PartitionLoss>().is_ok());
        assert!("VI".parse::<PartitionLoss>().is_ok());
        assert!("bender".parse::<PartitionLoss>().is_err());
    }

    #[test]
    fn ari_equivalent_partitions() {
        let a = Partition::new(vec![0, 0, 1, 1, 2]);
        let b = Partition::new(vec![7, 7, 3, 3, 9]);
        assert_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn ari_symmetric_and_relabel_invariant() {
        let a = Partition::new(vec![0, 0, 1, 2, 2, 1]);
        let b = Partition::new(vec![0, 1, 1, 2, 0, 2]);
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        assert_eq!(ab, ba);
        let b2 = Partition::new(vec![5, 9, 9, 4, 5, 4]);
        assert_eq!(adjusted_rand_index(&a, &b2).unwrap(), ab);
    }

    #[test]
    fn ari_degenerate_both_trivial() {
        let a = Partition::new(vec![0, 0, 0]);
        let b = Partition::new(vec![1, 1, 1]);
        assert_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn ari_length_mismatch_rejected() {
        let a = Partition::new(vec![0, 0]);
        let b = Partition::new(vec![0, 0, 1]);
        assert!(adjusted_rand_index(&a, &b).is_err());
    }
}
