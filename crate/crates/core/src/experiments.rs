//! Reproduction harness: OPE MSE sweeps, OPL comparisons and target-policy
//! fixtures.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::env::{rollout, true_policy_value, ActionSampler, BehaviorSpec, EnvSpec, OracleValue};
use crate::error::{Error, Result};
use crate::ope::{BaselineMode, Estimator, EstimatorConfig};
use crate::opl::{learn_with_estimator, LearnerConfig, PolicyCheckpoint};
use crate::par;
use crate::policy::{softplus_inv, PolicyClass, PolicyKind};
use crate::report::{config_hash, write_csv, write_json, VERSION};
use crate::rng::derive_seed;

const NEAR_OPTIMAL_JSON: &str = include_str!("../fixtures/near_optimal.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetFixture {
    NearBehavior,
    NearOptimal,
}

impl TargetFixture {
    pub fn label(self) -> &'static str {
        match self {
            TargetFixture::NearBehavior => "NearBehavior",
            TargetFixture::NearOptimal => "NearOptimal",
        }
    }
}

/// The behavior policy `clip(N(−s/3, 0.4²))` rewritten as a tanh-Gaussian in
/// `O`: the latent slope and scale match the first two action moments of the
/// clipped normal over the states the behavior policy visits.
pub const NEAR_BEHAVIOR_SLOPE: f64 = -0.3965;
pub const NEAR_BEHAVIOR_SCALE: f64 = 0.4697;

pub fn near_behavior() -> (PolicyClass, Vec<f64>) {
    let class = PolicyClass {
        kind: PolicyKind::GaussianLinear,
        obs_dim: 1,
        hidden: crate::policy::DEFAULT_HIDDEN,
        action_interval: Default::default(),
    };
    let sigma = NEAR_BEHAVIOR_SCALE - crate::policy::SIGMA_FLOOR;
    (class, vec![0.0, NEAR_BEHAVIOR_SLOPE, softplus_inv(sigma), 0.0])
}

fn parse_checkpoint(text: &str, origin: &Path) -> Result<PolicyCheckpoint> {
    let missing = || Error::MissingFixture {
        name: "NearOptimal".into(),
        path: origin.to_path_buf(),
    };
    if text.trim().is_empty() {
        return Err(missing());
    }
    let ck: PolicyCheckpoint = serde_json::from_str(text).map_err(|_| missing())?;
    ck.class.validate()?;
    ck.class.check_params(&ck.zeta)?;
    Ok(ck)
}

/// The target policy for `fixture`; `NearOptimal` reads the shipped
/// checkpoint, or `path` when given.
pub fn make_target_policy(fixture: TargetFixture, path: Option<&Path>) -> Result<(PolicyClass, Vec<f64>)> {
    match fixture {
        TargetFixture::NearBehavior => Ok(near_behavior()),
        TargetFixture::NearOptimal => {
            let ck = match path {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|_| Error::MissingFixture {
                        name: "NearOptimal".into(),
                        path: p.to_path_buf(),
                    })?;
                    parse_checkpoint(&text, p)?
                }
                None => parse_checkpoint(NEAR_OPTIMAL_JSON, Path::new("fixtures/near_optimal.json"))?,
            };
            Ok((ck.class, ck.zeta))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    OpeSweep,
    OplCompare,
    /// An OPE sweep on the unconfounded environment.
    Diagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub n_mc: usize,
    pub tail_tol: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_mc: 1000,
            tail_tol: 1e-3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub sizes: Vec<(usize, usize)>,
    pub replications: usize,
    pub methods: Vec<BaselineMode>,
    /// Policy classes learned in `OplCompare`.
    pub classes: Vec<PolicyKind>,
    /// Target policies evaluated in `OpeSweep` / `Diagnostic`.
    pub targets: Vec<TargetFixture>,
    pub seed: u64,
    pub gamma: f64,
    pub env: EnvSpec,
    pub behavior: BehaviorSpec,
    pub estimator: EstimatorConfig,
    pub learner: LearnerConfig,
    pub oracle: OracleConfig,
}

pub const DESK_REPLICATIONS: usize = 20;
pub const FULL_REPLICATIONS: usize = 50;

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::OpeSweep,
            sizes: vec![(25, 25), (50, 25), (75, 50), (100, 50)],
            replications: DESK_REPLICATIONS,
            methods: vec![BaselineMode::Proximal, BaselineMode::Mdpw, BaselineMode::Mdp],
            classes: vec![PolicyKind::BetaLinear, PolicyKind::GaussianLinear],
            targets: vec![TargetFixture::NearBehavior, TargetFixture::NearOptimal],
            seed: 2024,
            gamma: 0.9,
            env: EnvSpec::default(),
            behavior: BehaviorSpec::default(),
            estimator: EstimatorConfig::default(),
            learner: LearnerConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl ExperimentSpec {
    /// Figure-2 style sweep.
    pub fn fig2() -> Self {
        Self::default()
    }

    /// Table-1 style comparison at (100, 50).
    pub fn table1() -> Self {
        Self {
            kind: ExperimentKind::OplCompare,
            sizes: vec![(100, 50)],
            replications: 10,
            methods: vec![BaselineMode::Proximal, BaselineMode::Mdp],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&(n, t)| n < 1 || t < 1) {
            return Err(Error::Config("sizes must be nonempty with n, T >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be nonempty".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        match self.kind {
            ExperimentKind::OplCompare if self.classes.is_empty() => {
                return Err(Error::Config("classes must be nonempty".into()))
            }
            ExperimentKind::OpeSweep | ExperimentKind::Diagnostic if self.targets.is_empty() => {
                return Err(Error::Config("targets must be nonempty".into()))
            }
            _ => {}
        }
        if !(self.oracle.n_mc >= 2 && self.oracle.tail_tol > 0.0) {
            return Err(Error::Config("oracle needs n_mc >= 2 and tail_tol > 0".into()));
        }
        self.env.validate()?;
        self.behavior.validate(self.env.action_interval)?;
        self.estimator.validate()?;
        self.learner.validate()
    }

    fn environment(&self) -> EnvSpec {
        match self.kind {
            ExperimentKind::Diagnostic => EnvSpec {
                obs_noise_sd: 0.0,
                ..self.env
            },
            _ => self.env,
        }
    }
}

/// One `(cell, replication)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub target: String,
    pub method: String,
    pub class: String,
    pub n: usize,
    pub horizon: usize,
    pub replication: usize,
    pub seed: u64,
    /// Estimated value `Ĵ` (of the target, or of the learned policy).
    pub estimate: f64,
    /// Monte Carlo value of the target or learned policy.
    pub true_value: f64,
    pub true_value_se: f64,
    pub squared_error: f64,
    pub status: String,
    pub wall_time_s: f64,
}

/// Aggregate over replications of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: String,
    pub method: String,
    pub class: String,
    pub n: usize,
    pub horizon: usize,
    pub replications: usize,
    pub failed: usize,
    pub mean_estimate: f64,
    pub mean_true_value: f64,
    pub sd_true_value: f64,
    pub mse: f64,
    pub mse_ci_low: f64,
    pub mse_ci_high: f64,
    /// `MSE / truth²` (OPE only).
    pub relative_mse: f64,
    pub log_relative_mse: f64,
    pub log_relative_mse_ci_low: f64,
    pub log_relative_mse_ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub config_hash: String,
    pub kind: ExperimentKind,
    pub truths: BTreeMap<String, OracleValue>,
    pub cells: Vec<SummaryRow>,
    /// Table-1 layout: row label → `(n,T)` → `"mean (sd)"`.
    pub table: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub summary: Summary,
}

impl ExperimentOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("results.csv"), &self.records)?;
        write_csv(&dir.join("summary.csv"), &self.summary.cells)?;
        write_json(&dir.join("summary.json"), &self.summary)
    }
}

fn dataset_seed(spec: &ExperimentSpec, size: usize, rep: usize) -> u64 {
    derive_seed(derive_seed(spec.seed, size as u64), rep as u64)
}

fn simulate(spec: &ExperimentSpec, env: &EnvSpec, n: usize, t: usize, seed: u64) -> Result<Dataset> {
    rollout(env, ActionSampler::Behavior(&spec.behavior), n, t, spec.gamma, seed)
}

fn method_label(kind: ExperimentKind, mode: BaselineMode) -> String {
    match (kind, mode) {
        (ExperimentKind::OplCompare, BaselineMode::Proximal) => "Proposed".into(),
        _ => mode.label().into(),
    }
}

/// OPE sweep: every (size, replication) dataset is shared by all targets
/// and methods; truths are computed once per target.
pub fn run_ope_sweep(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let env = spec.environment();
    let mut truths = BTreeMap::new();
    let mut targets = Vec::new();
    for &t in &spec.targets {
        let (class, zeta) = make_target_policy(t, None)?;
        let o = &spec.oracle;
        let truth = true_policy_value(&env, &class, &zeta, o.n_mc, spec.gamma, o.tail_tol, o.seed)?;
        truths.insert(t.label().to_string(), truth);
        targets.push((t, class, zeta, truth));
    }
    let reps = spec.replications;
    let cells = spec.sizes.len() * reps;
    let per_cell = par::map_range(cells, |c| {
        let (si, rep) = (c / reps, c % reps);
        let (n, horizon) = spec.sizes[si];
        let seed = dataset_seed(spec, si, rep);
        let data = simulate(spec, &env, n, horizon, seed);
        let mut out = Vec::new();
        for &mode in &spec.methods {
            let started = Instant::now();
            let est = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                let cfg = EstimatorConfig { mode, ..spec.estimator };
                Estimator::new(d, &cfg).map_err(|e| e.to_string())
            });
            for (t, class, zeta, truth) in &targets {
                let fitted = est
                    .as_ref()
                    .map_err(|e| e.clone())
                    .and_then(|e| e.fit(class, zeta, None).map_err(|e| e.to_string()));
                let (estimate, status) = match fitted {
                    Ok(f) => (f.value, "ok".to_string()),
                    Err(e) => (f64::NAN, format!("failed: {e}")),
                };
                out.push(ResultRecord {
                    target: t.label().into(),
                    method: method_label(spec.kind, mode),
                    class: class.kind.label().into(),
                    n,
                    horizon,
                    replication: rep,
                    seed,
                    estimate,
                    true_value: truth.value,
                    true_value_se: truth.se,
                    squared_error: (estimate - truth.value).powi(2),
                    status,
                    wall_time_s: started.elapsed().as_secs_f64(),
                });
            }
        }
        out
    });
    let records: Vec<ResultRecord> = per_cell.into_iter().flatten().collect();
    finish(spec, records, truths)
}

/// OPL comparison: each method × class learns on the shared dataset and the
/// learned policy is scored with the Monte Carlo oracle.
pub fn run_opl_compare(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let env = spec.environment();
    let reps = spec.replications;
    let cells = spec.sizes.len() * reps;
    let per_cell = par::map_range(cells, |c| {
        let (si, rep) = (c / reps, c % reps);
        let (n, horizon) = spec.sizes[si];
        let seed = dataset_seed(spec, si, rep);
        let data = simulate(spec, &env, n, horizon, seed);
        let mut out = Vec::new();
        for (mi, &mode) in spec.methods.iter().enumerate() {
            let started = Instant::now();
            let cfg = EstimatorConfig { mode, ..spec.learner.estimator };
            let est = data
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|d| Estimator::new(d, &cfg).map_err(|e| e.to_string()));
            for (ci, &kind) in spec.classes.iter().enumerate() {
                let class = PolicyClass {
                    kind,
                    obs_dim: 1,
                    hidden: crate::policy::DEFAULT_HIDDEN,
                    action_interval: env.action_interval,
                };
                let learner = LearnerConfig { estimator: cfg, ..spec.learner };
                let run_seed = derive_seed(seed, (mi * spec.classes.len() + ci) as u64);
                let outcome = est.as_ref().map_err(|e| e.clone()).and_then(|e| {
                    let learned = learn_with_estimator(e, &class, &learner, run_seed).map_err(|e| e.to_string())?;
                    let o = &spec.oracle;
                    let truth = true_policy_value(&env, &class, &learned.zeta, o.n_mc, spec.gamma, o.tail_tol, o.seed)
                        .map_err(|e| e.to_string())?;
                    Ok((learned.value, truth))
                });
                let (estimate, truth, status) = match outcome {
                    Ok((v, t)) => (v, Some(t), "ok".to_string()),
                    Err(e) => (f64::NAN, None, format!("failed: {e}")),
                };
                let (tv, tse) = truth.map_or((f64::NAN, f64::NAN), |t| (t.value, t.se));
                out.push(ResultRecord {
                    target: "learned".into(),
                    method: method_label(spec.kind, mode),
                    class: kind.label().into(),
                    n,
                    horizon,
                    replication: rep,
                    seed: run_seed,
                    estimate,
                    true_value: tv,
                    true_value_se: tse,
                    squared_error: (estimate - tv).powi(2),
                    status,
                    wall_time_s: started.elapsed().as_secs_f64(),
                });
            }
        }
        out
    });
    let records: Vec<ResultRecord> = per_cell.into_iter().flatten().collect();
    finish(spec, records, BTreeMap::new())
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    match spec.kind {
        ExperimentKind::OpeSweep | ExperimentKind::Diagnostic => run_ope_sweep(spec),
        ExperimentKind::OplCompare => run_opl_compare(spec),
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn finish(
    spec: &ExperimentSpec,
    records: Vec<ResultRecord>,
    truths: BTreeMap<String, OracleValue>,
) -> Result<ExperimentOutput> {
    // Cells keyed in first-appearance order.
    let mut order: Vec<(String, String, String, usize, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, usize, usize), Vec<&ResultRecord>> = BTreeMap::new();
    for r in &records {
        let key = (r.target.clone(), r.method.clone(), r.class.clone(), r.n, r.horizon);
        let g = groups.entry(key.clone()).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(r);
    }
    order.sort_by(|a, b| (&a.0, &a.1, &a.2, a.3, a.4).cmp(&(&b.0, &b.1, &b.2, b.3, b.4)));
    let ope = spec.kind != ExperimentKind::OplCompare;
    let mut cells = Vec::new();
    let mut table: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for key in order {
        let g = &groups[&key];
        let ok: Vec<&&ResultRecord> = g.iter().filter(|r| r.status == "ok").collect();
        let est: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
        let tv: Vec<f64> = ok.iter().map(|r| r.true_value).collect();
        let se: Vec<f64> = ok.iter().map(|r| r.squared_error).collect();
        let (mean_estimate, _) = mean_sd(&est);
        let (mean_true_value, sd_true_value) = mean_sd(&tv);
        let (mse, mse_sd) = mean_sd(&se);
        let half = 1.96 * mse_sd / (se.len() as f64).sqrt();
        let (lo, hi) = (mse - half, mse + half);
        let (rel, lrel, llo, lhi) = if ope {
            let t2 = mean_true_value * mean_true_value;
            let l = |x: f64| if x > 0.0 { (x / t2).ln() } else { f64::NAN };
            (mse / t2, l(mse), l(lo), l(hi))
        } else {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        };
        if !ope {
            table
                .entry(format!("{}-{}", key.1, key.2))
                .or_default()
                .insert(format!("({},{})", key.3, key.4), format!("{mean_true_value:.2} ({sd_true_value:.2})"));
        }
        cells.push(SummaryRow {
            target: key.0.clone(),
            method: key.1.clone(),
            class: key.2.clone(),
            n: key.3,
            horizon: key.4,
            replications: g.len(),
            failed: g.len() - ok.len(),
            mean_estimate,
            mean_true_value,
            sd_true_value,
            mse,
            mse_ci_low: lo,
            mse_ci_high: hi,
            relative_mse: rel,
            log_relative_mse: lrel,
            log_relative_mse_ci_low: llo,
            log_relative_mse_ci_high: lhi,
        });
    }
    if !ope {
        for ext in ["IQL", "SAC", "CQL"] {
            let row = table.entry(ext.to_string()).or_default();
            for &(n, t) in &spec.sizes {
                row.insert(format!("({n},{t})"), "external".into());
            }
        }
    }
    Ok(ExperimentOutput {
        records,
        summary: Summary {
            version: VERSION.into(),
            config_hash: config_hash(spec)?,
            kind: spec.kind,
            truths,
            cells,
            table,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_behavior_is_symmetric_at_zero() {
        let (c, z) = near_behavior();
        for a in [0.1, 0.35, 0.8] {
            let p = c.density(&z, &[0.0], a).unwrap().value;
            let m = c.density(&z, &[0.0], -a).unwrap().value;
            assert!((p - m).abs() < 1e-12 * p.max(1.0));
        }
    }

    #[test]
    fn shipped_fixture_loads() {
        let (c, z) = make_target_policy(TargetFixture::NearOptimal, None).unwrap();
        assert_eq!(z.len(), c.n_params());
    }

    #[test]
    fn missing_fixture_path() {
        let r = make_target_policy(TargetFixture::NearOptimal, Some(Path::new("/nonexistent/fixture.json")));
        assert!(matches!(r, Err(Error::MissingFixture { .. })));
    }

    #[test]
    fn one_replication_gives_one_row_per_size() {
        let spec = ExperimentSpec {
            sizes: vec![(4, 3), (5, 3)],
            replications: 1,
            methods: vec![BaselineMode::Proximal],
            targets: vec![TargetFixture::NearBehavior],
            oracle: OracleConfig { n_mc: 20, ..Default::default() },
            ..Default::default()
        };
        let out = run_ope_sweep(&spec).unwrap();
        assert_eq!(out.summary.cells.len(), 2);
        assert_eq!(out.records.len(), 2);
    }
}
