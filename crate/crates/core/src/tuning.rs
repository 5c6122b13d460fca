//! k-fold cross-validation over `(λ, μ)` grids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{split_kfold, Dataset};
use crate::error::{Error, Result};
use crate::ope::{BaselineMode, Estimator, EstimatorConfig};
use crate::opl::{learn_policy, LearnerConfig};
use crate::par;
use crate::policy::PolicyClass;
use crate::report::write_csv;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CvObjective {
    /// Maximize the validation-fold value of the policy learned on the
    /// training folds.
    #[default]
    OplValue,
    /// Minimize the validation-fold critic loss of a bridge fitted on the
    /// training folds at a fixed target policy.
    OpeLoss,
}

/// Critic regularization used to score validation losses, so that entries
/// with different `μ` are compared on the same scale.
pub const VALIDATION_MU: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvPlan {
    pub grid: Vec<GridPoint>,
    pub k: usize,
    pub objective: CvObjective,
    pub seed: u64,
    /// Target policy parameters for [`CvObjective::OpeLoss`].
    pub target_zeta: Option<Vec<f64>>,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            k: 5,
            objective: CvObjective::OplValue,
            seed: 0,
            target_zeta: None,
        }
    }
}

/// `λ, μ ∈ {1e-4, 1e-3, 1e-2}`, λ-major.
pub fn default_grid() -> Vec<GridPoint> {
    let vals = [1e-4, 1e-3, 1e-2];
    vals.iter()
        .flat_map(|&lambda| vals.iter().map(move |&mu| GridPoint { lambda, mu }))
        .collect()
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("the tuning grid is empty".into()));
        }
        for g in &self.grid {
            if !(g.mu > 0.0 && g.mu.is_finite()) || !(g.lambda >= 0.0 && g.lambda.is_finite()) {
                return Err(Error::Config(format!(
                    "grid entry (lambda={}, mu={}) needs lambda >= 0 and mu > 0",
                    g.lambda, g.mu
                )));
            }
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.objective == CvObjective::OpeLoss && self.target_zeta.is_none() {
            return Err(Error::Config("the OpeLoss objective needs target_zeta".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub lambda: f64,
    pub mu: f64,
    pub fold: usize,
    pub objective_value: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    pub mu: f64,
    /// Index of the selected entry in the grid.
    pub selected: usize,
    /// Fold-mean score per grid entry; `None` for invalid entries.
    pub means: Vec<Option<f64>>,
    pub table: Vec<ScoreRow>,
    pub warnings: Vec<String>,
}

fn with_tuning(base: &EstimatorConfig, g: GridPoint) -> EstimatorConfig {
    EstimatorConfig {
        lambda: g.lambda,
        mu: g.mu,
        ..*base
    }
}

fn score_cell(
    train: &Dataset,
    valid: &Dataset,
    class: &PolicyClass,
    plan: &CvPlan,
    learner: &LearnerConfig,
    g: GridPoint,
    seed: u64,
) -> Result<f64> {
    let est_cfg = with_tuning(&learner.estimator, g);
    match plan.objective {
        CvObjective::OplValue => {
            let l = LearnerConfig {
                estimator: est_cfg,
                ..*learner
            };
            let learned = learn_policy(train, class, &l, seed)?;
            let val_cfg = EstimatorConfig {
                mode: BaselineMode::Proximal,
                ..est_cfg
            };
            Ok(Estimator::new(valid, &val_cfg)?
                .fit_closed_form(class, &learned.zeta)?
                .value)
        }
        CvObjective::OpeLoss => {
            let zeta = plan.target_zeta.as_deref().unwrap_or(&[]);
            let fit = Estimator::new(train, &est_cfg)?.fit(class, zeta, None)?;
            let val_cfg = EstimatorConfig {
                mu: VALIDATION_MU,
                ..est_cfg
            };
            Ok(Estimator::new(valid, &val_cfg)?
                .loss(class, zeta, &fit.q.theta)?
                .critic)
        }
    }
}

/// Scores every `(grid entry, fold)` cell and selects the best entry.
///
/// Ties go to the earliest grid entry.
pub fn cross_validate(d: &Dataset, class: &PolicyClass, plan: &CvPlan, learner: &LearnerConfig) -> Result<CvResult> {
    plan.validate()?;
    learner.validate()?;
    let folds = split_kfold(d, plan.k, plan.seed)?;
    let k = folds.len();
    let cells = plan.grid.len() * k;
    let scores = par::map_range(cells, |c| {
        let (gi, fi) = (c / k, c % k);
        let seed = derive_seed(plan.seed, c as u64);
        score_cell(
            &folds[fi].train,
            &folds[fi].validation,
            class,
            plan,
            learner,
            plan.grid[gi],
            seed,
        )
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::EstimationFailure(format!("non-finite score {v}")))
            }
        })
    });

    let mut table = Vec::with_capacity(cells);
    let mut means = Vec::with_capacity(plan.grid.len());
    let mut warnings = Vec::new();
    for (gi, g) in plan.grid.iter().enumerate() {
        let mut sum = 0.0;
        let mut ok = true;
        for fi in 0..k {
            let (value, status) = match &scores[gi * k + fi] {
                Ok(v) => {
                    sum += v;
                    (*v, "ok".to_string())
                }
                Err(e) => {
                    ok = false;
                    warnings.push(format!(
                        "lambda={} mu={} fold={fi}: {e}",
                        g.lambda, g.mu
                    ));
                    (f64::NAN, format!("failed: {e}"))
                }
            };
            table.push(ScoreRow {
                lambda: g.lambda,
                mu: g.mu,
                fold: fi,
                objective_value: value,
                status,
            });
        }
        means.push(ok.then(|| sum / k as f64));
    }
    let better = |a: f64, b: f64| match plan.objective {
        CvObjective::OplValue => a > b,
        CvObjective::OpeLoss => a < b,
    };
    let mut selected: Option<(usize, f64)> = None;
    for (i, m) in means.iter().enumerate() {
        if let Some(v) = *m {
            if selected.is_none_or(|(_, b)| better(v, b)) {
                selected = Some((i, v));
            }
        }
    }
    let (selected, _) = selected.ok_or(Error::TuningFailure)?;
    Ok(CvResult {
        lambda: plan.grid[selected].lambda,
        mu: plan.grid[selected].mu,
        selected,
        means,
        table,
        warnings,
    })
}

pub fn write_scores(path: &Path, table: &[ScoreRow]) -> Result<()> {
    write_csv(path, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ActionInterval;
    use crate::env::{rollout, ActionSampler, BehaviorSpec, EnvSpec};
    use crate::policy::PolicyKind;

    fn setup() -> (Dataset, PolicyClass, LearnerConfig) {
        let d = rollout(
            &EnvSpec::default(),
            ActionSampler::Behavior(&BehaviorSpec::default()),
            10,
            4,
            0.9,
            2,
        )
        .unwrap();
        let c = PolicyClass::new(PolicyKind::GaussianLinear, 1, ActionInterval::default()).unwrap();
        let l = LearnerConfig { max_iters: 3, ..Default::default() };
        (d, c, l)
    }

    #[test]
    fn singleton_grid() {
        let (d, c, l) = setup();
        let g = GridPoint { lambda: 1e-3, mu: 1e-2 };
        let plan = CvPlan { grid: vec![g], k: 2, ..Default::default() };
        let r = cross_validate(&d, &c, &plan, &l).unwrap();
        assert_eq!((r.lambda, r.mu, r.selected), (1e-3, 1e-2, 0));
        assert_eq!(r.table.len(), 2);
    }

    #[test]
    fn duplicates_tie_to_first() {
        let (d, c, l) = setup();
        let a = GridPoint { lambda: 1e-2, mu: 1e-3 };
        let b = GridPoint { lambda: 1e-3, mu: 1e-3 };
        let plan = CvPlan { grid: vec![a, b, a], k: 2, ..Default::default() };
        let r = cross_validate(&d, &c, &plan, &l).unwrap();
        assert_eq!(r.means[0], r.means[2]);
        assert_ne!(r.selected, 2);
    }

    #[test]
    fn ope_loss_objective_selects_argmin() {
        let (d, c, l) = setup();
        let plan = CvPlan {
            k: 3,
            objective: CvObjective::OpeLoss,
            target_zeta: Some(vec![0.0, -0.3, -0.9, 0.0]),
            ..Default::default()
        };
        let r = cross_validate(&d, &c, &plan, &l).unwrap();
        let best = r.means.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.means[r.selected], Some(best));
    }

    #[test]
    fn empty_grid_rejected() {
        let (d, c, l) = setup();
        let plan = CvPlan { grid: vec![], ..Default::default() };
        assert!(matches!(cross_validate(&d, &c, &plan, &l), Err(Error::Config(_))));
    }
}
