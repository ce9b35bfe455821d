//! Randomized property suites over the model primitives: invariants that
//! must hold for every input, checked over generated cases.

use cdbmm::kernels::{draw_truncated_normal, RngHandle};
use cdbmm::model::{compute_log_stick_weights, compute_stick_weights};
use cdbmm::partition::{
    adjusted_rand_index, canonical_labels, expected_binder_loss, merge_coincident_clusters,
    Partition, PosteriorSimilarityMatrix,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn stick_weights_form_a_distribution(
        alphas in prop::collection::vec(-10.0_f64..10.0, 1..20)
    ) {
        let w = compute_stick_weights(&alphas);
        prop_assert_eq!(w.len(), alphas.len() + 1);
        prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn log_stick_recursion_matches_linear_one(
        alphas in prop::collection::vec(-6.0_f64..6.0, 1..20)
    ) {
        let w = compute_stick_weights(&alphas);
        let lw = compute_log_stick_weights(&alphas);
        for (a, b) in w.iter().zip(&lw) {
            prop_assert!((a - b.exp()).abs() <= 1e-12);
        }
    }

    #[test]
    fn canonical_labels_are_idempotent_and_equivalent(
        labels in prop::collection::vec(0usize..6, 1..40)
    ) {
        let canon = canonical_labels(&labels);
        prop_assert_eq!(canonical_labels(&canon), canon.clone());
        let a = Partition::new(labels);
        let b = Partition::new(canon);
        prop_assert!(a.equivalent(&b));
        prop_assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn truncated_normal_respects_its_support(
        seed in any::<u64>(),
        mean in -5.0_f64..5.0,
        var in 0.01_f64..9.0,
        lo in -6.0_f64..6.0,
        width in 0.01_f64..5.0,
        side in 0usize..3,
    ) {
        let (lower, upper) = match side {
            0 => (lo, lo + width),
            1 => (lo, f64::INFINITY),
            _ => (f64::NEG_INFINITY, lo),
        };
        let mut rng = RngHandle::new(seed);
        for _ in 0..16 {
            let d = draw_truncated_normal(&mut rng, mean, var, lower, upper).unwrap();
            prop_assert!(d > lower && d < upper);
        }
    }

    #[test]
    fn coincidence_merge_only_coarsens(
        alloc in prop::collection::vec(0usize..5, 2..30),
        kappa in 0.0_f64..6.0,
        min_size in 1usize..4,
    ) {
        let eta: Vec<f64> = (0..5).map(|l| l as f64 * 0.8).collect();
        let sigma2 = vec![0.5_f64; 5];
        let merged = merge_coincident_clusters(&alloc, &eta, &sigma2, kappa, min_size);
        prop_assert_eq!(merged.len(), alloc.len());
        for i in 0..alloc.len() {
            for j in (i + 1)..alloc.len() {
                if alloc[i] == alloc[j] {
                    prop_assert_eq!(merged[i], merged[j]);
                }
            }
        }
    }

    #[test]
    fn binder_loss_is_nonnegative_and_zero_on_certainty(
        labels in prop::collection::vec(0usize..4, 2..25)
    ) {
        let n = labels.len();
        // A posterior concentrated on one partition: the similarity matrix
        // of the partition itself.
        let mut entries = vec![0.0_f64; n * n];
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    entries[i * n + j] = 1.0;
                }
            }
        }
        let psm = PosteriorSimilarityMatrix::from_entries(n, entries).unwrap();
        prop_assert!(expected_binder_loss(&labels, &psm).abs() <= 1e-12);
        let lone: Vec<usize> = (0..n).collect();
        prop_assert!(expected_binder_loss(&lone, &psm) >= -1e-12);
    }

    #[test]
    fn ari_is_symmetric_and_bounded(
        a in prop::collection::vec(0usize..5, 2..30),
        b_raw in prop::collection::vec(0usize..5, 2..30),
    ) {
        let n = a.len().min(b_raw.len());
        let pa = Partition::new(a[..n].to_vec());
        let pb = Partition::new(b_raw[..n].to_vec());
        let ab = adjusted_rand_index(&pa, &pb).unwrap();
        let ba = adjusted_rand_index(&pb, &pa).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
    }
}
