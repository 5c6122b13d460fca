//! Policy-gradient search over a parametric policy class.
//!
//! Each outer iteration refits the bridge at the current `ζ`, records
//! `Ĵ(ζ) = v̄(ζ)ᵀθ(ζ)` and ascends `ζ ← ζ + β₀/√j · ∇Ĵ`.

use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ope::{dot, mat_t_vec, mat_vec, spd_solve, Estimator, EstimatorConfig, Optimizer};
use crate::policy::{Family, Init, PolicyClass};
use crate::report::{config_hash, write_csv, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GradientMode {
    /// `∇v̄ᵀθ` with `θ` held fixed.
    #[default]
    FirstTerm,
    /// Adds `v̄ᵀ ∂θ/∂ζ` by differentiating the closed-form solve.
    FullImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Outer learning rate; `None` picks 1 for Gaussian and 10 for Beta classes.
    pub beta0: Option<f64>,
    pub max_iters: usize,
    /// Stop once `‖ζ_j − ζ_{j−1}‖ <= tol`.
    pub tol: f64,
    pub gradient_mode: GradientMode,
    pub estimator: EstimatorConfig,
    pub init: Init,
    /// Return the last iterate instead of the best recorded one.
    pub return_last: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            beta0: None,
            max_iters: 200,
            tol: 1e-4,
            gradient_mode: GradientMode::FirstTerm,
            estimator: EstimatorConfig::default(),
            init: Init::Auto,
            return_last: false,
        }
    }
}

impl LearnerConfig {
    pub fn beta0_for(&self, class: &PolicyClass) -> f64 {
        self.beta0.unwrap_or(match class.family() {
            Family::Beta => 10.0,
            Family::TanhGaussian => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta0 {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("beta0 must be >= 0, got {b}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        self.estimator.validate()
    }
}

/// `∇_ζ Ĵ` at a bridge `theta` fitted at `zeta`.
pub fn policy_value_grad(
    est: &Estimator,
    class: &PolicyClass,
    zeta: &[f64],
    theta: &[f64],
    mode: GradientMode,
) -> Result<Vec<f64>> {
    class.check_params(zeta)?;
    let p = class.n_params();
    let m = est.design.m();
    if theta.len() != m {
        return Err(Error::Shape(format!(
            "bridge has {} coefficients, expected {m}",
            theta.len()
        )));
    }
    let dv0 = est.design.initial_mean_jac(class, zeta, est.rule());
    let mut grad: Vec<f64> = (0..p)
        .map(|j| (0..m).map(|k| dv0[k * p + j] * theta[k]).sum())
        .collect();
    if mode == GradientMode::FirstTerm {
        return Ok(grad);
    }
    if !matches!(est.config.optimizer, Optimizer::ClosedForm) {
        return Err(Error::UnsupportedMode(
            "FullImplicit gradients need the closed-form bridge fit".into(),
        ));
    }
    let dtheta = implicit_theta_jac(est, class, zeta, theta)?;
    let v0 = est.design.initial_mean(class, zeta, est.rule());
    for (j, g) in grad.iter_mut().enumerate() {
        *g += dot(&v0, &dtheta[j]);
    }
    Ok(grad)
}

/// `∂θ/∂ζ_j` for each `j`, from
/// `H ∂θ = ∂Aᵀ(Gb − GAθ) − (GA)ᵀ(∂A θ)` with `∂A = −γ ∂Ψ̄`.
fn implicit_theta_jac(
    est: &Estimator,
    class: &PolicyClass,
    zeta: &[f64],
    theta: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let design = &est.design;
    let (n, m, p) = (design.n(), design.m(), class.n_params());
    let gamma = design.gamma;
    let terms = est.terms(class, zeta)?;
    let (h, _) = est.normal_equations(&terms);
    let ga_theta = mat_vec(terms.ga.as_ref(), theta);
    let u: Vec<f64> = est.g_r().iter().zip(&ga_theta).map(|(g, x)| g - x).collect();
    let jac = design.next_expected_jac(class, zeta, est.rule());

    // dA_p θ for every tuple, and Σ_i u_i dA_p[i, :].
    let mut da_theta = Mat::<f64>::zeros(n, p);
    let mut first = vec![vec![0.0; m]; p];
    for (i, ji) in jac.iter().enumerate() {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                let d = -gamma * ji[k * p + j];
                s += d * theta[k];
                first[j][k] += u[i] * d;
            }
            da_theta[(i, j)] = s;
        }
    }
    let rhs: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| da_theta[(i, j)]).collect();
            let second = mat_t_vec(terms.ga.as_ref(), &col);
            first[j].iter().zip(&second).map(|(a, b)| a - b).collect()
        })
        .collect();
    spd_solve(&h, &rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Tolerance,
    MaxIters,
    NonFiniteGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step_size: f64,
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub zeta: Vec<f64>,
    /// `Ĵ` at the returned `ζ` (the last recorded value when returning the
    /// last iterate).
    pub value: f64,
    pub best_iteration: usize,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
}

/// Gradient ascent on the estimated value.
pub fn learn_policy(d: &Dataset, class: &PolicyClass, learner: &LearnerConfig, seed: u64) -> Result<LearnResult> {
    learner.validate()?;
    class.validate()?;
    let est = Estimator::new(d, &learner.estimator)?;
    learn_with_estimator(&est, class, learner, seed)
}

pub fn learn_with_estimator(
    est: &Estimator,
    class: &PolicyClass,
    learner: &LearnerConfig,
    seed: u64,
) -> Result<LearnResult> {
    let beta0 = learner.beta0_for(class);
    let mut zeta = class.init(learner.init, seed);
    let mut best = (f64::NEG_INFINITY, zeta.clone(), 0);
    let mut trace = Vec::new();
    let mut theta: Option<Vec<f64>> = None;
    let mut stop = StopReason::MaxIters;
    for j in 1..=learner.max_iters {
        let at = |e: Error| Error::AtIteration {
            iteration: j,
            source: Box::new(e),
        };
        let fit = est.fit(class, &zeta, theta.as_deref()).map_err(at)?;
        let value = fit.value;
        if value > best.0 {
            best = (value, zeta.clone(), j);
        }
        let grad = policy_value_grad(est, class, &zeta, &fit.q.theta, learner.gradient_mode).map_err(at)?;
        theta = Some(fit.q.theta);
        let grad_norm = dot(&grad, &grad).sqrt();
        if !grad_norm.is_finite() || !value.is_finite() {
            trace.push(TraceRow {
                iteration: j,
                value,
                grad_norm,
                step_size: 0.0,
                displacement: 0.0,
            });
            stop = StopReason::NonFiniteGradient;
            break;
        }
        let step = beta0 / (j as f64).sqrt();
        let old = zeta.clone();
        for (z, g) in zeta.iter_mut().zip(&grad) {
            *z += step * g;
        }
        class.project(&mut zeta);
        let disp = old
            .iter()
            .zip(&zeta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        trace.push(TraceRow {
            iteration: j,
            value,
            grad_norm,
            step_size: step,
            displacement: disp,
        });
        if disp <= learner.tol {
            stop = StopReason::Tolerance;
            break;
        }
    }
    if trace.is_empty() {
        return Ok(LearnResult {
            value: f64::NAN,
            zeta,
            best_iteration: 0,
            trace,
            stop,
        });
    }
    if learner.return_last {
        let value = trace.last().map_or(f64::NAN, |r| r.value);
        let best_iteration = trace.len();
        return Ok(LearnResult {
            zeta,
            value,
            best_iteration,
            trace,
            stop,
        });
    }
    Ok(LearnResult {
        zeta: best.1,
        value: best.0,
        best_iteration: best.2,
        trace,
        stop,
    })
}

/// Serialized learned policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub class: PolicyClass,
    pub zeta: Vec<f64>,
    pub value: f64,
    pub trace: Vec<(usize, f64)>,
    pub config_hash: String,
    pub seed: u64,
}

impl PolicyCheckpoint {
    pub fn new(class: &PolicyClass, result: &LearnResult, learner: &LearnerConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            class: *class,
            zeta: result.zeta.clone(),
            value: result.value,
            trace: result.trace.iter().map(|r| (r.iteration, r.value)).collect(),
            config_hash: config_hash(learner)?,
            seed,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)?;
        ck.class.validate()?;
        ck.class.check_params(&ck.zeta)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    write_csv(path, trace)
}
