//! Regenerates `fixtures/near_optimal.json`: a long Linear-Gaussian policy
//! learning run on a (100, 50) behavior dataset.
//!
//! cargo run --release -p proxbridge --example build_near_optimal [out]

use std::path::PathBuf;

use proxbridge::env::{rollout, true_policy_value, ActionSampler, BehaviorSpec, EnvSpec};
use proxbridge::opl::{learn_policy, LearnerConfig, PolicyCheckpoint};
use proxbridge::policy::{PolicyClass, PolicyKind};

const SEED: u64 = 20240601;

fn main() -> proxbridge::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/near_optimal.json")));
    let env = EnvSpec::default();
    let data = rollout(&env, ActionSampler::Behavior(&BehaviorSpec::default()), 100, 50, 0.9, SEED)?;
    let class = PolicyClass::new(PolicyKind::GaussianLinear, 1, env.action_interval)?;
    let learner = LearnerConfig {
        max_iters: 400,
        ..Default::default()
    };
    let result = learn_policy(&data, &class, &learner, SEED)?;
    let truth = true_policy_value(&env, &class, &result.zeta, 1000, 0.9, 1e-3, 7)?;
    eprintln!(
        "zeta = {:?}, estimated value {:.4}, Monte Carlo value {:.4} (se {:.4})",
        result.zeta, result.value, truth.value, truth.se
    );
    PolicyCheckpoint::new(&class, &result, &learner, SEED)?.save(&out)?;
    Ok(())
}
