//! Crate results checked against the independent implementations in
//! `common`.

mod common;

use std::collections::BTreeMap;

use lcprobe::expert::{krippendorff_alpha, DistanceMetric};
use lcprobe::gateway::{ScriptedBackend, ScriptedLaw};
use lcprobe::metrics::spearman;
use lcprobe::policy::{ActionSpace, PolicyEngine, PolicyState};
use lcprobe::psychometric::{ConstructSpec, ItemSpec, ModelError, PsychometricModel, StatisticsDocument};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn doc(sds: &[f64], corr: Vec<Vec<f64>>, loading: f64) -> StatisticsDocument {
    StatisticsDocument {
        schema_version: 1,
        source: None,
        constructs: sds
            .iter()
            .enumerate()
            .map(|(i, sd)| ConstructSpec { id: format!("c{i}"), name: format!("C{i}"), mean: 4.0 + i as f64, sd: *sd })
            .collect(),
        correlation: corr,
        items: (0..sds.len())
            .map(|i| ItemSpec { id: format!("i{i}"), construct: format!("c{i}"), loading, statement: "I try.".into() })
            .collect(),
        likert_bounds: [1.0, 7.0].into(),
    }
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

#[test]
fn correlated_constructs_match_independent_sampler() {
    let corr = vec![vec![1.0, 0.8, 0.1], vec![0.8, 1.0, 0.3], vec![0.1, 0.3, 1.0]];
    let sds = [1.0, 1.3, 0.7];
    let model = PsychometricModel::from_document(doc(&sds, corr.clone(), 0.8)).unwrap();
    let ours = model.sample_constructs(1, 50_000).unwrap();
    let means: Vec<f64> = model.constructs().iter().map(|c| c.mean).collect();
    let theirs = common::mvn_samples(&means, &sds, &corr, 50_000, 2);

    let r_ours = common::pearson(&column(&ours, 0), &column(&ours, 1));
    let r_theirs = common::pearson(&column(&theirs, 0), &column(&theirs, 1));
    assert!((0.77..=0.83).contains(&r_ours), "{r_ours}");
    assert!((r_ours - r_theirs).abs() < 0.02, "{r_ours} vs {r_theirs}");
    for (j, sd) in sds.iter().enumerate() {
        let (a, b) = (column(&ours, j), column(&theirs, j));
        assert!((common::mean(&a) - common::mean(&b)).abs() < 0.03 * sd);
    }
}

#[test]
fn identity_correlation_gives_independent_constructs() {
    let corr = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let model = PsychometricModel::from_document(doc(&[2.0, 0.5], corr, 0.5)).unwrap();
    let z = model.sample_constructs(8, 50_000).unwrap();
    assert!(common::pearson(&column(&z, 0), &column(&z, 1)).abs() <= 0.03);
    assert!((common::mean(&column(&z, 0)) - 4.0).abs() <= 0.02 * 2.0);
    assert!((common::mean(&column(&z, 1)) - 5.0).abs() <= 0.02 * 0.5);
}

#[test]
fn item_noise_matches_closed_form() {
    let model = PsychometricModel::from_document(doc(&[1.0], vec![vec![1.0]], 0.7)).unwrap();
    // conditional variance at a fixed construct score
    let raw: Vec<f64> = (0..50_000).map(|s| model.sample_items(&[4.0], s).unwrap()[0].raw).collect();
    let m = common::mean(&raw);
    let var = raw.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (raw.len() - 1) as f64;
    assert!((var - 0.51).abs() <= 0.02, "{var}");
    assert!((m - 0.7 * 4.0).abs() <= 0.02, "{m}");

    let profiles: Vec<_> = (0..50_000).map(|i| model.generate_profile(3, i)).collect();
    let z: Vec<f64> = profiles.iter().map(|p| p.construct_scores["c0"]).collect();
    let x: Vec<f64> = profiles.iter().map(|p| p.item_responses["i0"].raw).collect();
    let r = common::pearson(&x, &z);
    assert!((0.67..=0.73).contains(&r), "{r}");
}

fn equicorrelation(r: f64) -> Vec<Vec<f64>> {
    (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 } else { r }).collect()).collect()
}

#[test]
fn slightly_indefinite_matrix_is_repaired() {
    let corr = equicorrelation(-0.5 - 5e-10);
    let ev = common::jacobi_eigenvalues(&corr);
    assert!((ev[0] + 1e-9).abs() < 1e-12, "{ev:?}");
    let model = PsychometricModel::from_document(doc(&[1.0, 1.0, 1.0], corr, 0.5)).unwrap();
    let repair = model.repair().expect("repair recorded");
    assert!((repair.min_eigenvalue + 1e-9).abs() < 1e-12);
    assert!(model.sample_constructs(0, 10).unwrap().iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn clearly_indefinite_matrix_is_rejected() {
    let corr = equicorrelation(-0.5 - 1e-6);
    assert!(common::jacobi_eigenvalues(&corr)[0] < -1e-8);
    assert!(matches!(
        PsychometricModel::from_document(doc(&[1.0, 1.0, 1.0], corr, 0.5)),
        Err(ModelError::NotPositiveSemiDefinite { .. })
    ));
}

#[test]
fn jacobi_oracle_on_known_spectrum() {
    let ev = common::jacobi_eigenvalues(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
    assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
}

#[test]
fn bundled_statistics_are_positive_definite() {
    let m = PsychometricModel::mslq();
    let ev = common::jacobi_eigenvalues(&m.document().correlation);
    assert!(ev[0] > 0.0, "{ev:?}");
    assert!(m.repair().is_none());
}

#[test]
fn alpha_matches_pairwise_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for case in 0..200 {
        let raters = rng.gen_range(2..=4);
        let units = rng.gen_range(3..=25);
        let levels = rng.gen_range(2..=5);
        let data: Vec<Vec<Option<f64>>> = (0..raters)
            .map(|_| {
                (0..units)
                    .map(|_| if rng.gen_bool(0.15) { None } else { Some(rng.gen_range(1..=levels) as f64) })
                    .collect()
            })
            .collect();
        for (metric, ordinal) in [(DistanceMetric::Nominal, false), (DistanceMetric::Ordinal, true)] {
            let Ok(got) = krippendorff_alpha(&data, metric) else { continue };
            let want = common::alpha_oracle(&data, ordinal);
            assert!((got - want).abs() < 1e-9, "case {case} {metric:?}: {got} vs {want}");
        }
    }
}

#[test]
fn spearman_matches_rank_oracle_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.gen_range(3..=30);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let got = spearman(&xs, &ys, 10, 0).unwrap();
        match got.rho {
            Some(rho) => assert!((rho - common::spearman_oracle(&xs, &ys)).abs() < 1e-9),
            None => assert!(common::spearman_oracle(&xs, &ys).is_nan()),
        }
    }
}

#[test]
fn permutation_p_value_matches_exact_enumeration() {
    // n = 5 has 120 orderings; exactly two reach |rho| = 1
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
    let exact = 2.0 / 120.0;
    let p = spearman(&xs, &xs, 100_000, 5).unwrap().p_value.unwrap();
    assert!((p - exact).abs() < 0.003, "{p} vs {exact}");
}

#[test]
fn inclusion_oracle_sanity() {
    let uniform: BTreeMap<String, f64> = (0..6).map(|i| (format!("s{i}"), 1.0)).collect();
    for p in common::inclusion_policy(&uniform, 3).values() {
        assert!((p - 1.0 / 6.0).abs() < 1e-12);
    }
    let w = common::weights(&[("a", 5.0), ("b", 1.0), ("c", 1.0)]);
    let p = common::inclusion_policy(&w, 1);
    assert!((p["a"] - 5.0 / 7.0).abs() < 1e-12);
}

#[test]
fn estimator_converges_to_inclusion_marginals() {
    let actions = ActionSpace::default_catalog();
    let names: Vec<String> = actions.names().map(str::to_string).collect();
    let w: BTreeMap<String, f64> = names.iter().take(6).enumerate().map(|(i, n)| (n.clone(), 1.0 + i as f64)).collect();
    let oracle = common::inclusion_policy(&w, 3);
    let backend = ScriptedBackend::new(ScriptedLaw::wildcard(3, 1, w)).unwrap();
    let est = PolicyEngine::new(actions)
        .estimate(&backend, &PolicyState::ObjectiveOnly { objective: "o" }, 5_000, 3, 4)
        .unwrap();
    assert!(common::tvd_map(&est.probabilities, &oracle) < 0.02);
}

#[test]
fn expert_policy_as_law_drives_deviation_to_its_floor() {
    use lcprobe::{ExpertAnnotations, ExpertReference};
    let actions = ActionSpace::default_catalog();
    let a = ExpertAnnotations::from_path(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/annotations.example.json"),
        &actions,
        None,
    )
    .unwrap();
    let reference = ExpertReference::build(&a).unwrap();
    let engine = PolicyEngine::new(actions);
    let state = PolicyState::ObjectiveOnly { objective: "o" };
    let deviation = |ids: &[&str], n: usize| {
        let expert = reference.context_policy(ids).unwrap();
        let law = ScriptedLaw::wildcard(5, 3, expert.as_map().clone());
        let est = engine.estimate(&ScriptedBackend::new(law).unwrap(), &state, n, 5, 1).unwrap();
        (common::tvd_map(&est.probabilities, expert.as_map()), expert)
    };

    // both raters pick the same five strategies for task value, so every
    // draw is exactly the expert support
    assert_eq!(deviation(&["task_value"], 50).0, 0.0);

    // otherwise deviation converges to the without-replacement floor
    let ids = ["self_efficacy", "test_anxiety", "elaboration"];
    let (coarse, expert) = deviation(&ids, 200);
    let (fine, _) = deviation(&ids, 20_000);
    let floor = common::tvd_map(&common::inclusion_policy(expert.as_map(), 5), expert.as_map());
    assert!((fine - floor).abs() < 0.01, "{fine} vs floor {floor}");
    assert!((fine - floor).abs() <= (coarse - floor).abs() + 0.005, "{coarse} -> {fine}, floor {floor}");
}
