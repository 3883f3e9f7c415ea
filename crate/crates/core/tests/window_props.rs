use proptest::prelude::*;
use rpmf::domain::catalog_default;
use rpmf::sampling::{build_dataset, generate_cutoffs, split_patients, SplitConfig, WindowSpec};
use rpmf::synth::{generate_cohort, SynthConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn windows_respect_time_and_split(
        seed in 0u64..10_000,
        n in 2usize..6,
        stride in prop::sample::select(vec![1.0, 2.5, 7.0]),
        max_tokens in prop::sample::select(vec![4usize, 50, 1000]),
        split_seed in any::<u64>(),
    ) {
        let catalog = catalog_default();
        let (cohort, _) = generate_cohort(&SynthConfig { n_patients: n, seed, ..Default::default() }, &catalog).unwrap();
        let spec = WindowSpec { stride_days: stride, max_tokens, ..Default::default() };
        let ds = build_dataset(&cohort, &spec, &SplitConfig { train_ratio: 0.5, seed: split_seed }, &catalog).unwrap();
        for w in ds.train.iter().chain(&ds.test) {
            let rec = cohort.iter().find(|r| r.patient_id == w.patient_id).unwrap();
            prop_assert!(w.cutoff_days >= rec.monitoring_start_days + spec.min_history_days);
            prop_assert!(w.cutoff_days + spec.horizon_days <= rec.monitoring_end_days + 1e-9);
            prop_assert!(w.tokens.len() <= max_tokens);
            prop_assert!(w.tokens.iter().all(|t| t.t_rel <= 0.0));
            let hit = rec
                .adverse_events
                .iter()
                .any(|e| e.t_days > w.cutoff_days && e.t_days <= w.cutoff_days + spec.horizon_days);
            prop_assert_eq!(w.label == 1, hit);
        }
        for r in &cohort {
            let in_train = ds.split.is_train(&r.patient_id);
            prop_assert!(in_train != ds.split.is_test(&r.patient_id));
            let expected = generate_cutoffs(r, &spec).len();
            let side = if in_train { &ds.train } else { &ds.test };
            prop_assert_eq!(side.iter().filter(|w| w.patient_id == r.patient_id).count(), expected);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover(seed in any::<u64>(), ratio in 0.1f64..0.9) {
        let catalog = catalog_default();
        let (cohort, _) = generate_cohort(&SynthConfig { n_patients: 12, seed: 3, ..Default::default() }, &catalog).unwrap();
        let s = split_patients(&cohort, &SplitConfig { train_ratio: ratio, seed }).unwrap();
        prop_assert!(s.train.iter().all(|id| !s.test.contains(id)));
        prop_assert_eq!(s.train.len() + s.test.len(), cohort.len());
    }
}
