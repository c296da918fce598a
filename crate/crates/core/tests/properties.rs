use dmlbench_core::eval::{facility_score, nmi, recall_at_k_self, FacilitySet};
use dmlbench_core::sampling::{class_index, npairs_compose};
use dmlbench_core::{pairwise_distances, Batch, Metric, SamplerRng};
use ndarray::Array2;
use proptest::prelude::*;

fn batch_strategy() -> impl Strategy<Value = Batch> {
    (6usize..30, 1usize..5).prop_flat_map(|(n, d)| {
        (prop::collection::vec(-5.0f64..5.0, n * d), prop::collection::vec(0usize..3, n))
            .prop_map(move |(v, l)| Batch::new(Array2::from_shape_vec((n, d), v).unwrap(), l).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recall_is_monotone(b in batch_strategy()) {
        let r = recall_at_k_self(&b, &[1, 2, 4]).unwrap();
        prop_assert!(r.recall_at[&1] <= r.recall_at[&2] && r.recall_at[&2] <= r.recall_at[&4]);
    }

    #[test]
    fn nmi_symmetric_and_permutation_invariant(a in prop::collection::vec(0usize..4, 1..40), shift in 1usize..5) {
        let b: Vec<usize> = a.iter().rev().copied().collect();
        let relabelled: Vec<usize> = a.iter().map(|x| (x + shift) * 7).collect();
        prop_assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&relabelled, &b).unwrap() - nmi(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn facility_monotone_and_translation_invariant(b in batch_strategy(), t in -3.0f64..3.0) {
        let small = FacilitySet::new(vec![0]).unwrap();
        let big = FacilitySet::new(vec![0, b.len() - 1]).unwrap();
        let f_small = facility_score(&b, &small).unwrap();
        prop_assert!(facility_score(&b, &big).unwrap() >= f_small);
        let moved = b.with_vectors(b.vectors() + t).unwrap();
        prop_assert!((facility_score(&moved, &small).unwrap() - f_small).abs() < 1e-9);
    }

    #[test]
    fn distances_symmetric(b in batch_strategy()) {
        let d = pairwise_distances(&b, Metric::Euclidean).unwrap();
        for i in 0..b.len() {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..b.len() {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn npairs_batches_are_two_per_class(seed in any::<u64>(), classes in 2usize..8) {
        let labels: Vec<usize> = (0..80).map(|i| i % 10).collect();
        let (ids, plan) = npairs_compose(&class_index(&labels), classes, &mut SamplerRng::new(seed)).unwrap();
        prop_assert_eq!(ids.len(), 2 * classes);
        let layout = plan.as_npairs().unwrap();
        let mut seen: Vec<usize> = layout.iter().map(|&(a, _)| labels[ids[a]]).collect();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), classes);
    }
}
