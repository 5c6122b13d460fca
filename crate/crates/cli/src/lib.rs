//! Configuration resolution and subcommands for the `proxbridge` binary.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use proxbridge::data::{load_dataset, write_dataset, ActionInterval, Format, Schema};
use proxbridge::env::{rollout, ActionSampler, BehaviorSpec, EnvSpec};
use proxbridge::experiments::{make_target_policy, run_experiment, ExperimentSpec, TargetFixture, FULL_REPLICATIONS};
use proxbridge::ope::{Estimator, EstimatorConfig, EstimatorReport};
use proxbridge::opl::{learn_policy, write_trace, LearnerConfig, PolicyCheckpoint};
use proxbridge::par;
use proxbridge::policy::{PolicyClass, PolicyKind, DEFAULT_HIDDEN};
use proxbridge::report::write_json;
use proxbridge::tuning::{cross_validate, write_scores, CvPlan};

#[derive(Parser, Debug)]
#[command(name = "proxbridge", version, about = "Proximal bridge-function OPE/OPL for confounded POMDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value by dotted path, e.g. `estimator.lambda=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate behavior-policy trajectories to dataset.csv.
    Simulate,
    /// Fit a Q-bridge for a target policy and estimate its value.
    Ope,
    /// Learn a policy by gradient ascent on the estimated value.
    Opl,
    /// Cross-validate (lambda, mu).
    Cv,
    /// Run a reproduction experiment.
    Reproduce {
        #[arg(value_enum)]
        target: Figure,
        /// Reduced replications (the default).
        #[arg(long)]
        desk_scale: bool,
        /// The full 50 replications.
        #[arg(long, conflicts_with = "desk_scale")]
        full_scale: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig2,
    Table1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub horizon: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
    pub obs_dim: usize,
    pub proxy_dim: usize,
    pub action_interval: ActionInterval,
    pub gamma: f64,
}

/// Target policy for `ope`: a checkpoint file, explicit parameters, or a
/// named fixture, in that order of precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub fixture: Option<TargetFixture>,
    pub class: Option<PolicyClass>,
    pub zeta: Option<Vec<f64>>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses the library default.
    pub workers: usize,
    pub env: EnvSpec,
    pub behavior: BehaviorSpec,
    pub simulate: SimulateConfig,
    pub data: DataConfig,
    pub target: TargetConfig,
    pub policy: PolicyClass,
    pub estimator: EstimatorConfig,
    pub learner: LearnerConfig,
    pub tuning: CvPlan,
    pub experiment: ExperimentSpec,
}

impl RunConfig {
    fn defaults(experiment: ExperimentSpec) -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            workers: 0,
            env: EnvSpec::default(),
            behavior: BehaviorSpec::default(),
            simulate: SimulateConfig {
                n: 50,
                horizon: 25,
                gamma: 0.9,
            },
            data: DataConfig {
                path: None,
                format: None,
                obs_dim: 1,
                proxy_dim: 1,
                action_interval: ActionInterval::default(),
                gamma: 0.9,
            },
            target: TargetConfig {
                fixture: Some(TargetFixture::NearBehavior),
                class: None,
                zeta: None,
                checkpoint: None,
            },
            policy: PolicyClass {
                kind: PolicyKind::GaussianLinear,
                obs_dim: 1,
                hidden: DEFAULT_HIDDEN,
                action_interval: ActionInterval::default(),
            },
            estimator: EstimatorConfig::default(),
            learner: LearnerConfig::default(),
            tuning: CvPlan::default(),
            experiment,
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration (exit 1).
    Validation(String),
    /// A computation failed (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<proxbridge::Error> for CliError {
    fn from(e: proxbridge::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Recursively overlays `patch` onto `base`.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Applies `key.path=value`; the value is parsed as JSON, falling back to a
/// plain string.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(invalid(format!("--set has an empty key segment in `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Value::Array(items) = cur {
            let idx: usize = part
                .parse()
                .map_err(|_| invalid(format!("`{key}`: `{part}` is not an array index")))?;
            let len = items.len();
            let slot = items
                .get_mut(idx)
                .ok_or_else(|| invalid(format!("`{key}`: index {idx} out of range (len {len})")))?;
            if last {
                *slot = value;
                return Ok(());
            }
            cur = slot;
            continue;
        }
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| invalid(format!("`{key}`: `{part}` is not inside an object")))?;
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Defaults, then the config file, then `--set` overrides, then `--out`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let experiment = match &cli.command {
        Command::Reproduce { target, full_scale, .. } => {
            let mut spec = match target {
                Figure::Fig2 => ExperimentSpec::fig2(),
                Figure::Table1 => ExperimentSpec::table1(),
            };
            if *full_scale {
                spec.replications = FULL_REPLICATIONS;
            }
            spec
        }
        _ => ExperimentSpec::default(),
    };
    let mut tree = serde_json::to_value(RunConfig::defaults(experiment))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(invalid("the config file must contain a JSON object"));
        }
        merge(&mut tree, patch);
    }
    for s in &cli.set {
        apply_set(&mut tree, s)?;
    }
    let mut cfg: RunConfig = serde_path_to_error::deserialize(tree)
        .map_err(|e| invalid(format!("config key `{}`: {}", e.path(), e.inner())))?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<proxbridge::data::Dataset, CliError> {
    let path = cfg
        .data
        .path
        .as_deref()
        .ok_or_else(|| invalid("config key `data.path` is required"))?;
    let format = cfg.data.format.unwrap_or_else(|| Format::from_path(path));
    let schema = Schema {
        obs_dim: cfg.data.obs_dim,
        proxy_dim: cfg.data.proxy_dim,
        action_interval: cfg.data.action_interval,
        gamma: cfg.data.gamma,
    };
    if !path.exists() {
        return Err(invalid(format!("dataset {} does not exist", path.display())));
    }
    Ok(load_dataset(path, format, schema)?)
}

fn target_policy(t: &TargetConfig) -> Result<(PolicyClass, Vec<f64>), CliError> {
    if let Some(p) = &t.checkpoint {
        let ck = PolicyCheckpoint::load(p)?;
        return Ok((ck.class, ck.zeta));
    }
    match (&t.class, &t.zeta) {
        (Some(c), Some(z)) => {
            c.validate()?;
            c.check_params(z)?;
            Ok((*c, z.clone()))
        }
        (None, None) => {
            let f = t
                .fixture
                .ok_or_else(|| invalid("config `target` needs a fixture, a checkpoint, or class and zeta"))?;
            Ok(make_target_policy(f, None)?)
        }
        _ => Err(invalid("config keys `target.class` and `target.zeta` must be given together")),
    }
}

#[derive(Serialize)]
struct OpeOutput<'a> {
    #[serde(flatten)]
    report: &'a EstimatorReport,
    policy: PolicyClass,
    zeta: &'a [f64],
    iterations: usize,
    converged: bool,
}

fn run_command(cli: &Cli, cfg: &RunConfig) -> Result<String, CliError> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    write_json(&out.join("resolved_config.json"), cfg)?;
    match &cli.command {
        Command::Simulate => {
            let s = &cfg.simulate;
            let d = rollout(&cfg.env, ActionSampler::Behavior(&cfg.behavior), s.n, s.horizon, s.gamma, cfg.seed)?;
            let path = out.join("dataset.csv");
            write_dataset(&d, &path, Format::Csv)?;
            Ok(format!("wrote {} trajectories to {}", d.n(), path.display()))
        }
        Command::Ope => {
            let d = load_data(cfg)?;
            let (class, zeta) = target_policy(&cfg.target)?;
            let est = Estimator::new(&d, &cfg.estimator)?;
            let fit = est.fit(&class, &zeta, None)?;
            let report = EstimatorReport::new(&est, &fit);
            write_json(
                &out.join("estimator.json"),
                &OpeOutput {
                    report: &report,
                    policy: class,
                    zeta: &zeta,
                    iterations: fit.iterations,
                    converged: fit.converged,
                },
            )?;
            Ok(format!("J_hat = {}", fit.value))
        }
        Command::Opl => {
            let d = load_data(cfg)?;
            let learner = LearnerConfig {
                estimator: cfg.estimator,
                ..cfg.learner
            };
            let r = learn_policy(&d, &cfg.policy, &learner, cfg.seed)?;
            PolicyCheckpoint::new(&cfg.policy, &r, &learner, cfg.seed)?.save(&out.join("policy.json"))?;
            write_trace(&out.join("trace.csv"), &r.trace)?;
            Ok(format!(
                "J_hat = {} at iteration {} ({:?})",
                r.value, r.best_iteration, r.stop
            ))
        }
        Command::Cv => {
            let d = load_data(cfg)?;
            let learner = LearnerConfig {
                estimator: cfg.estimator,
                ..cfg.learner
            };
            let r = cross_validate(&d, &cfg.policy, &cfg.tuning, &learner)?;
            write_scores(&out.join("cv_scores.csv"), &r.table)?;
            let mut msg = format!("selected lambda = {}, mu = {}", r.lambda, r.mu);
            for w in &r.warnings {
                msg.push_str(&format!("\nwarning: {w}"));
            }
            Ok(msg)
        }
        Command::Reproduce { .. } => {
            let o = run_experiment(&cfg.experiment)?;
            o.write(out)?;
            Ok(format!(
                "wrote {} results and {} summary rows to {}",
                o.records.len(),
                o.summary.cells.len(),
                out.display()
            ))
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = resolve_config(&cli).and_then(|cfg| par::with_workers(cfg.workers, || run_command(&cli, &cfg)));
    match result {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

/// Reads `resolved_config.json` back from an output directory.
pub fn read_resolved(dir: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(dir.join("resolved_config.json"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn set_parses_json_and_falls_back_to_strings() {
        let mut v = json!({"a": {"b": 1}, "xs": [1, 2]});
        apply_set(&mut v, "a.b=2.5").unwrap();
        apply_set(&mut v, "a.c=hello").unwrap();
        apply_set(&mut v, "xs.1=7").unwrap();
        apply_set(&mut v, "new.deep=[1,2]").unwrap();
        assert_eq!(v, json!({"a": {"b": 2.5, "c": "hello"}, "xs": [1, 7], "new": {"deep": [1, 2]}}));
    }

    #[test]
    fn set_rejects_malformed_assignments() {
        let mut v = json!({"xs": [1], "n": 3});
        for bad in ["novalue", "=1", "a..b=1", "xs.5=1", "xs.k=1", "n.k=1"] {
            assert!(matches!(apply_set(&mut v, bad), Err(CliError::Validation(_))), "{bad}");
        }
    }

    #[test]
    fn merge_overlays_nested_objects() {
        let mut base = json!({"a": {"b": 1, "c": 2}, "d": [1, 2]});
        merge(&mut base, json!({"a": {"c": 3}, "d": [9]}));
        assert_eq!(base, json!({"a": {"b": 1, "c": 3}, "d": [9]}));
    }

    #[test]
    fn defaults_resolve_without_a_config() {
        let cli = Cli::try_parse_from(["proxbridge", "reproduce", "table1", "--full-scale"]).unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.experiment.replications, FULL_REPLICATIONS);
        assert_eq!(cfg.estimator, EstimatorConfig::default());
    }
}
