mod common;

use std::collections::BTreeMap;

use lcprobe::context::{assemble_context, read_archive, write_archive, ArchiveRecord, AssembleOptions, NullCharacteristic};
use lcprobe::expert::{krippendorff_alpha, DistanceMetric};
use lcprobe::metrics::{learner_centeredness, quadrant_classify, spearman, tvd, Quadrant};
use lcprobe::policy::{parse_selection, ActionSpace, EstimateProvenance, Policy, PolicyEstimate};
use lcprobe::psychometric::{LikertBounds, PsychometricModel};
use proptest::prelude::*;
use proptest::sample::subsequence;

const N: usize = 22;

fn names() -> Vec<String> {
    ActionSpace::default_catalog().names().map(str::to_string).collect()
}

fn policy_strategy() -> impl Strategy<Value = Policy> {
    prop::collection::vec(0.0f64..1.0, N)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|w| Policy::from_weights(names().into_iter().zip(w).collect()).unwrap())
}

fn orientation_strategy() -> impl Strategy<Value = BTreeMap<String, f64>> {
    prop::collection::vec(-1.0f64..=1.0, N).prop_map(|f| names().into_iter().zip(f).collect())
}

fn provenance() -> EstimateProvenance {
    EstimateProvenance {
        backend_id: "t".into(),
        prompt_hash: "h".into(),
        template_hash: "t".into(),
        seed: 0,
        retry_budget: 3,
        timestamp: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tvd_is_a_metric(p in policy_strategy(), q in policy_strategy(), r in policy_strategy()) {
        let pq = tvd(&p, &q).unwrap();
        prop_assert!((pq - tvd(&q, &p).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert_eq!(tvd(&p, &p).unwrap(), 0.0);
        prop_assert!(tvd(&p, &r).unwrap() <= pq + tvd(&q, &r).unwrap() + 1e-12);
    }

    #[test]
    fn learner_centeredness_is_linear_and_bounded(
        p in policy_strategy(),
        q in policy_strategy(),
        f in orientation_strategy(),
        a in 0.0f64..=1.0,
    ) {
        let mixed: BTreeMap<String, f64> =
            names().into_iter().map(|n| { let v = a * p.get(&n) + (1.0 - a) * q.get(&n); (n, v) }).collect();
        let mixed = Policy::from_weights(mixed).unwrap();
        let lhs = learner_centeredness(&mixed, &f).unwrap();
        let rhs = a * learner_centeredness(&p, &f).unwrap() + (1.0 - a) * learner_centeredness(&q, &f).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&lhs));
    }

    #[test]
    fn mixtures_are_distributions(parts in prop::collection::vec(policy_strategy(), 1..6)) {
        let m = Policy::mixture(&parts).unwrap();
        prop_assert!(m.check().is_ok());
        let total: f64 = m.iter().map(|(_, v)| v).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn aggregation_ignores_trial_order(
        trials in prop::collection::vec(subsequence(names(), 5), 1..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let actions = ActionSpace::default_catalog();
        let n = trials.len();
        let a = PolicyEstimate::aggregate("s".into(), &actions, &trials, n, 5, provenance()).unwrap();
        let mut shuffled = trials.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = PolicyEstimate::aggregate("s".into(), &actions, &shuffled, n, 5, provenance()).unwrap();
        prop_assert_eq!(&a, &b);
        let total: f64 = a.probabilities.values().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(!a.degraded);
    }

    #[test]
    fn json_selections_parse_back(picks in subsequence(names(), 5)) {
        let actions = ActionSpace::default_catalog();
        let text = serde_json::json!({ "strategies": picks }).to_string();
        prop_assert_eq!(parse_selection(&text, &actions, 5).unwrap(), picks);
    }

    #[test]
    fn alpha_invariant_under_unit_and_rater_order(
        data in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.85, 1u8..=4), 12), 2..4),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let data: Vec<Vec<Option<f64>>> =
            data.into_iter().map(|r| r.into_iter().map(|v| v.map(f64::from)).collect()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut rng);
        let mut permuted: Vec<Vec<Option<f64>>> =
            data.iter().map(|r| order.iter().map(|&u| r[u]).collect()).collect();
        permuted.reverse();
        for metric in [DistanceMetric::Nominal, DistanceMetric::Ordinal] {
            match (krippendorff_alpha(&data, metric), krippendorff_alpha(&permuted, metric)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn clamping_is_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let bounds = LikertBounds::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bounds.clamp(lo) <= bounds.clamp(hi));
        prop_assert!((1.0..=7.0).contains(&bounds.clamp(a)));
    }

    #[test]
    fn quadrant_ties(r in 1.0f64..=5.0, i in 0.0f64..=1.0) {
        // relevance at threshold is high, influence at threshold is low
        prop_assert!(matches!(quadrant_classify(r, i, i, r).unwrap(), Quadrant::Neglected));
    }

    #[test]
    fn spearman_is_symmetric_and_rank_based(xs in prop::collection::vec(-10.0f64..10.0, 4..20), seed in any::<u64>()) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| (x * 1.7).sin() + i as f64 * 0.1).collect();
        let a = spearman(&xs, &ys, 50, seed).unwrap();
        let b = spearman(&ys, &xs, 50, seed).unwrap();
        match (a.rho, b.rho) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
        let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3)).collect();
        let c = spearman(&cubed, &ys, 50, seed).unwrap();
        if let (Some(x), Some(y)) = (a.rho, c.rho) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn profiles_are_deterministic_and_order_independent(seed in any::<u64>(), index in 0u64..1_000) {
        let m = PsychometricModel::mslq();
        let a = m.generate_profile(seed, index);
        prop_assert_eq!(&a, &m.generate_profile(seed, index));
        let z = m.sample_constructs(seed, index as usize + 1).unwrap();
        let ids: Vec<&String> = a.construct_scores.keys().collect();
        for c in m.constructs() {
            let pos = m.construct_position(&c.id).unwrap();
            prop_assert_eq!(a.construct_scores[&c.id], z[index as usize][pos]);
        }
        prop_assert_eq!(ids.len(), m.constructs().len());
    }

    #[test]
    fn archive_round_trips(seed in any::<u64>(), index in 0u64..100, with_nulls in any::<bool>()) {
        let m = PsychometricModel::mslq();
        let profile = m.generate_profile(seed, index);
        let nulls = if with_nulls { NullCharacteristic::catalog() } else { Vec::new() };
        let opts = AssembleOptions { nulls: &nulls, seed, ..AssembleOptions::default() };
        let ctx = assemble_context(&profile, &m, "Practice integrals.", &opts).unwrap();
        let records = vec![ArchiveRecord::new(profile, ctx)];
        let mut buf = Vec::new();
        write_archive(&mut buf, &records).unwrap();
        let back = read_archive(buf.as_slice()).unwrap();
        prop_assert_eq!(back, records);
    }
}
