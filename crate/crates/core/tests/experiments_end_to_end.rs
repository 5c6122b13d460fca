//! Small end-to-end runs against the Monte Carlo oracle.

use proxbridge::env::{oracle_value, rollout, true_policy_value, ActionSampler, BehaviorSpec, EnvSpec};
use proxbridge::experiments::{make_target_policy, run_experiment, ExperimentSpec, TargetFixture};
use proxbridge::ope::{BaselineMode, EstimatorConfig};
use proxbridge::opl::{learn_policy, LearnerConfig};
use proxbridge::policy::{PolicyClass, PolicyKind};
use proxbridge::tuning::{cross_validate, CvPlan};

#[test]
fn near_behavior_tracks_the_behavior_policy_without_noise() {
    let env = EnvSpec::unconfounded();
    let behavior = BehaviorSpec::default();
    let (class, zeta) = make_target_policy(TargetFixture::NearBehavior, None).unwrap();
    let b = oracle_value(&env, ActionSampler::Behavior(&behavior), 2000, 0.9, 1e-3, 3).unwrap();
    let t = true_policy_value(&env, &class, &zeta, 2000, 0.9, 1e-3, 3).unwrap();
    let se = (b.se * b.se + t.se * t.se).sqrt();
    assert!((b.value - t.value).abs() < 2.0 * se, "behavior {b:?} vs target {t:?}");
}

#[test]
fn near_optimal_beats_near_behavior() {
    let env = EnvSpec::default();
    let value = |f| {
        let (class, zeta) = make_target_policy(f, None).unwrap();
        true_policy_value(&env, &class, &zeta, 1000, 0.9, 1e-3, 7).unwrap().value
    };
    assert!(value(TargetFixture::NearOptimal) > value(TargetFixture::NearBehavior) + 1.0);
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let spec = ExperimentSpec {
        sizes: vec![(6, 4), (8, 4), (10, 4)],
        replications: 1,
        methods: vec![BaselineMode::Proximal],
        targets: vec![TargetFixture::NearBehavior],
        ..ExperimentSpec::fig2()
    };
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.summary.cells.len(), 3);
    let truth = out.records[0].true_value;
    assert!(out.records.iter().all(|r| r.true_value == truth && r.status == "ok"));

    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    for f in ["results.csv", "summary.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn tuned_policy_beats_the_behavior_policy() {
    let env = EnvSpec::default();
    let behavior = BehaviorSpec::default();
    let d = rollout(&env, ActionSampler::Behavior(&behavior), 50, 25, 0.9, 12).unwrap();
    let class = PolicyClass::new(PolicyKind::GaussianLinear, 1, Default::default()).unwrap();
    let learner = LearnerConfig {
        max_iters: 30,
        ..Default::default()
    };
    let cv = cross_validate(&d, &class, &CvPlan::default(), &learner).unwrap();
    assert_eq!(cv.table.len(), 9 * 5);
    let tuned = LearnerConfig {
        estimator: EstimatorConfig {
            lambda: cv.lambda,
            mu: cv.mu,
            ..learner.estimator
        },
        ..learner
    };
    let res = learn_policy(&d, &class, &tuned, 0).unwrap();
    let learned = true_policy_value(&env, &class, &res.zeta, 1000, 0.9, 1e-3, 7).unwrap();
    let base = oracle_value(&env, ActionSampler::Behavior(&behavior), 1000, 0.9, 1e-3, 7).unwrap();
    assert!(learned.value > base.value, "learned {learned:?} vs behavior {base:?}");
}
