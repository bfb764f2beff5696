//! Property tests for the finite-difference statistic and segmentation.

use nalgebra::DVector;
use proptest::prelude::*;

use switched_elm::detection::{
    finite_difference, segment_traces, switching_statistic, SwitchingSet,
};
use switched_elm::modeling::build_training_pairs;
use switched_elm::trace::Trace;

fn trace_from(values: Vec<f64>) -> Trace {
    let states = values
        .into_iter()
        .map(|v| DVector::from_element(1, v))
        .collect();
    Trace::autonomous("prop", 1.0, states).unwrap()
}

proptest! {
    #[test]
    fn statistic_is_invariant_under_scaling(
        values in prop::collection::vec(1.0f64..10.0, 6..40),
        scale in prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
    ) {
        let base = trace_from(values.clone());
        let scaled = trace_from(values.iter().map(|v| v * scale).collect());
        let a = switching_statistic(&base, 1, 1e-9).unwrap();
        let b = switching_statistic(&scaled, 1, 1e-9).unwrap();
        for ((ka, sa), (kb, sb)) in a.iter().zip(&b) {
            prop_assert_eq!(ka, kb);
            prop_assert!((sa - sb).abs() <= 1e-12 * (1.0 + sa.abs()));
        }
    }

    #[test]
    fn second_difference_matches_binomial_expansion(
        values in prop::collection::vec(-5.0f64..5.0, 4..30),
    ) {
        let trace = trace_from(values.clone());
        let d2 = finite_difference(&trace, 2).unwrap();
        for (j, v) in d2.iter().enumerate() {
            let k = j + 2;
            let direct = values[k] - 2.0 * values[k - 1] + values[k - 2];
            prop_assert!((v[0] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn segmentation_partitions_the_window(
        len in 8usize..60,
        picks in prop::collection::btree_set(1usize..59, 0..6),
    ) {
        let horizon = len - 1;
        let instants: Vec<usize> = picks.into_iter().filter(|k| *k < horizon).collect();
        let trace = trace_from((0..len).map(|k| (k as f64 * 0.37).sin() + 2.0).collect());
        let set = SwitchingSet::new(horizon, instants.clone()).unwrap();
        let segs = segment_traces(std::slice::from_ref(&trace), &set).unwrap();

        // coverage: ranges chain from 0 to K sharing only their endpoints
        prop_assert_eq!(segs.segments.len(), instants.len() + 1);
        prop_assert_eq!(segs.segments[0].start, 0);
        prop_assert_eq!(segs.segments.last().unwrap().end, horizon);
        for pair in segs.segments.windows(2) {
            prop_assert_eq!(pair[0].end, pair[1].start);
        }

        // every step of every trace lands in exactly one segment's pairs
        let total: usize = segs.segments.iter().map(|s| s.pair_count()).sum();
        prop_assert_eq!(total, horizon);

        // per-segment pairs match the direct extraction
        for seg in &segs.segments {
            let (ins, outs) = build_training_pairs(&trace, seg.start, seg.end).unwrap();
            prop_assert_eq!(seg.pair_count(), ins.len());
            for (r, (i, o)) in ins.iter().zip(&outs).enumerate() {
                prop_assert_eq!(seg.inputs[(r, 0)], i[0]);
                prop_assert_eq!(seg.targets[(r, 0)], o[0]);
            }
        }
    }
}
