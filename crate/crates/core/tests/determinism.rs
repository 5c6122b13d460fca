//! Results must not depend on the number of worker threads.

use proxbridge::env::{rollout, ActionSampler, BehaviorSpec, EnvSpec};
use proxbridge::experiments::{run_experiment, ExperimentSpec, TargetFixture};
use proxbridge::ope::{BaselineMode, Estimator, EstimatorConfig};
use proxbridge::opl::{learn_policy, LearnerConfig};
use proxbridge::par;
use proxbridge::policy::{PolicyClass, PolicyKind};

#[test]
fn fits_and_learning_are_bitwise_stable_across_workers() {
    let run = || {
        let behavior = BehaviorSpec::default();
        let d = rollout(&EnvSpec::default(), ActionSampler::Behavior(&behavior), 30, 10, 0.9, 6).unwrap();
        let class = PolicyClass::new(PolicyKind::BetaLinear, 1, Default::default()).unwrap();
        let fit = Estimator::new(&d, &EstimatorConfig::default())
            .unwrap()
            .fit_closed_form(&class, &[0.2, 0.1, 0.3, -0.1])
            .unwrap();
        let learner = LearnerConfig {
            max_iters: 5,
            ..Default::default()
        };
        let learned = learn_policy(&d, &class, &learner, 1).unwrap();
        (d, fit.q.theta, fit.value.to_bits(), learned)
    };
    let one = par::with_workers(1, run);
    let three = par::with_workers(3, run);
    assert_eq!(one.0, three.0);
    assert_eq!(one.1, three.1);
    assert_eq!(one.2, three.2);
    assert_eq!(one.3, three.3);
}

#[test]
fn experiment_summaries_are_bitwise_stable_across_workers() {
    let spec = ExperimentSpec {
        sizes: vec![(8, 5), (10, 5)],
        replications: 2,
        methods: vec![BaselineMode::Proximal, BaselineMode::Mdp],
        targets: vec![TargetFixture::NearBehavior],
        ..ExperimentSpec::fig2()
    };
    let one = par::with_workers(1, || run_experiment(&spec)).unwrap();
    let three = par::with_workers(3, || run_experiment(&spec)).unwrap();
    assert_eq!(
        serde_json::to_string(&one.summary).unwrap(),
        serde_json::to_string(&three.summary).unwrap()
    );
    let estimates = |o: &proxbridge::experiments::ExperimentOutput| {
        o.records.iter().map(|r| r.estimate.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(estimates(&one), estimates(&three));
}
