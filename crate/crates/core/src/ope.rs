//! Minimax Q-bridge estimation.
//!
//! The bridge is linear in polynomial features, `q(x; θ) = ψ(x)ᵀθ`. For a
//! target policy `π_ζ` the Bellman residual of tuple `(i, t)` is
//!
//! ```text
//! φ_it(θ) = q(O_t, W_t, A_t) − R_t − γ ∫ π(a | O_{t+1}) q(O_{t+1}, W_{t+1}, a) da
//!         = (Aθ − b)_it,   A = Ψ − γ Ψ̄(ζ),   b = R
//! ```
//!
//! and the decoupled minimax loss is
//!
//! ```text
//! L(θ) = max_f { E_N[φ f] − ½ E_N[f²] − μ‖f‖²_H } + λ‖θ‖²  =  φᵀGφ + λθᵀθ,
//! G    = K (K + 2NμI)^{-1} / (2N),
//! ```
//!
//! with `K` the Gaussian kernel matrix over the critic inputs and `N = nT`.
//! In the eigenbasis of `K`, `φᵀGφ` equals the regularized kernel quadratic
//! form divided by `4μN²`.
//!
//! `ψ` is polynomial in the action, so `∫ π(a|o) ψ(o, w, a) da` only needs the
//! action moments `E_π[a^e | o]`; see [`PolicyClass::action_moments`].

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::data::{to_transition_tuples, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{
    kernel_matrix, median_heuristic, CriticOperator, FeatureMap, KernelSpec, NormalRule, Points,
    QuadratureRule, DEFAULT_MAX_PAIRS,
};
use crate::par;
use crate::policy::PolicyClass;
use crate::rng::rng_from_seed;

/// Which variables play the role of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BaselineMode {
    /// Critic on `(O_{t-1}, A_{t-1}, O_t, A_t)`, bridge on `(O_t, W_t, A_t)`.
    Proximal,
    /// `(O_t, W_t)` treated as a fully observed state.
    Mdpw,
    /// `O_t` treated as a fully observed state; `W_t` dropped.
    Mdp,
}

impl BaselineMode {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMode::Proximal => "PROXIMAL",
            BaselineMode::Mdpw => "MDPW",
            BaselineMode::Mdp => "MDP",
        }
    }

    fn uses_proxy(self) -> bool {
        !matches!(self, BaselineMode::Mdp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    /// Mini-batch size in tuples; `>= nT` means full batch.
    pub batch: usize,
    /// `α₀` in `α_j = α₀ / √j`.
    pub lr: f64,
    pub max_iters: usize,
    /// Stop once `‖θ_j − θ_{j−1}‖ <= tol`.
    #[serde(default = "default_sgd_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sgd_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Optimizer {
    #[default]
    ClosedForm,
    Sgd(SgdConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub lambda: f64,
    pub mu: f64,
    pub mode: BaselineMode,
    pub optimizer: Optimizer,
    /// Fixed critic bandwidth; `None` uses the median heuristic.
    pub bandwidth: Option<f64>,
    pub max_pairs: usize,
    pub bandwidth_seed: u64,
    pub feature_degree: usize,
    /// Latent-normal nodes for tanh-Gaussian action moments.
    pub quadrature_nodes: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            mu: 1e-3,
            mode: BaselineMode::Proximal,
            optimizer: Optimizer::ClosedForm,
            bandwidth: None,
            max_pairs: DEFAULT_MAX_PAIRS,
            bandwidth_seed: 0,
            feature_degree: 2,
            quadrature_nodes: 21,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be > 0, got {}", self.mu)));
        }
        if let Some(h) = self.bandwidth {
            KernelSpec::Gaussian { bandwidth: h }.validate()?;
        }
        if self.feature_degree < 1 || self.quadrature_nodes < 1 {
            return Err(Error::Config("feature_degree and quadrature_nodes must be >= 1".into()));
        }
        if let Optimizer::Sgd(s) = self.optimizer {
            if s.batch < 1 || !(s.lr >= 0.0) || !(s.tol > 0.0) {
                return Err(Error::Config(
                    "SGD needs batch >= 1, lr >= 0 and tol > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Fitted bridge coefficients together with the feature layout they index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBridge {
    pub theta: Vec<f64>,
    pub mode: BaselineMode,
    pub obs_dim: usize,
    pub proxy_dim: usize,
    pub degree: usize,
}

impl QBridge {
    pub fn zeros(mode: BaselineMode, obs_dim: usize, proxy_dim: usize, degree: usize) -> Result<Self> {
        let fm = feature_map(mode, obs_dim, proxy_dim, degree)?;
        Ok(Self {
            theta: vec![0.0; fm.dim()],
            mode,
            obs_dim,
            proxy_dim,
            degree,
        })
    }

    pub fn features(&self) -> Result<FeatureMap> {
        feature_map(self.mode, self.obs_dim, self.proxy_dim, self.degree)
    }

    /// `q(o, w, a)`; the proxy is ignored in MDP mode.
    pub fn eval(&self, o: &[f64], w: &[f64], a: f64) -> Result<f64> {
        let fm = self.features()?;
        let x = bridge_input(self.mode, o, w, a);
        Ok(fm.eval(&x).iter().zip(&self.theta).map(|(f, t)| f * t).sum())
    }

    /// `h₁²(q) = θᵀθ`.
    pub fn penalty(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum()
    }
}

fn feature_map(mode: BaselineMode, obs_dim: usize, proxy_dim: usize, degree: usize) -> Result<FeatureMap> {
    let w = if mode.uses_proxy() { proxy_dim } else { 0 };
    FeatureMap::new(obs_dim + w + 1, degree)
}

fn bridge_prefix(mode: BaselineMode, o: &[f64], w: &[f64]) -> Vec<f64> {
    let mut x = o.to_vec();
    if mode.uses_proxy() {
        x.extend_from_slice(w);
    }
    x
}

fn bridge_input(mode: BaselineMode, o: &[f64], w: &[f64], a: f64) -> Vec<f64> {
    let mut x = bridge_prefix(mode, o, w);
    x.push(a);
    x
}

/// Everything about a dataset the estimator needs that does not depend on
/// the target policy or the tuning parameters.
pub struct Design {
    pub mode: BaselineMode,
    pub gamma: f64,
    pub n_traj: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    pub proxy_dim: usize,
    pub features: FeatureMap,
    /// Critic inputs, one row per tuple.
    pub critic: Points,
    /// `ψ(O_t, W_t, A_t)`, `N x m`.
    pub psi: Mat<f64>,
    pub r: Vec<f64>,
    /// Policy inputs `O_{t+1}` and the per-tuple moment bases at
    /// `(O_{t+1}, W_{t+1})` (row-major `m x (degree+1)` blocks).
    next_obs: Points,
    next_basis: Vec<f64>,
    init_obs: Points,
    init_basis: Vec<f64>,
}

impl Design {
    pub fn new(d: &Dataset, mode: BaselineMode, degree: usize) -> Result<Self> {
        let tuples = to_transition_tuples(d)?;
        let features = feature_map(mode, d.obs_dim(), d.proxy_dim(), degree)?;
        let m = features.dim();
        let cols = degree + 1;
        let n = tuples.len();

        let mut critic = Vec::new();
        let mut r = Vec::with_capacity(n);
        let mut next_obs = Vec::with_capacity(n * d.obs_dim());
        let mut next_basis = vec![0.0; n * m * cols];
        let mut psi = Mat::<f64>::zeros(n, m);
        let mut buf = vec![0.0; m];
        for (i, tu) in tuples.iter().enumerate() {
            match mode {
                BaselineMode::Proximal => {
                    critic.extend_from_slice(&tu.o_prev);
                    critic.push(tu.a_prev);
                    critic.extend_from_slice(&tu.o);
                    critic.push(tu.a);
                }
                BaselineMode::Mdpw => {
                    critic.extend_from_slice(&tu.o);
                    critic.extend_from_slice(&tu.w);
                    critic.push(tu.a);
                }
                BaselineMode::Mdp => {
                    critic.extend_from_slice(&tu.o);
                    critic.push(tu.a);
                }
            }
            features.eval_into(&bridge_input(mode, &tu.o, &tu.w, tu.a), &mut buf);
            for (k, v) in buf.iter().enumerate() {
                psi[(i, k)] = *v;
            }
            r.push(tu.r);
            next_obs.extend_from_slice(&tu.o_next);
            features.moment_basis(
                &bridge_prefix(mode, &tu.o_next, &tu.w_next),
                &mut next_basis[i * m * cols..(i + 1) * m * cols],
            );
        }
        let critic_dim = match mode {
            BaselineMode::Proximal => 2 * d.obs_dim() + 2,
            BaselineMode::Mdpw => d.obs_dim() + d.proxy_dim() + 1,
            BaselineMode::Mdp => d.obs_dim() + 1,
        };

        let mut init_obs = Vec::with_capacity(d.n() * d.obs_dim());
        let mut init_basis = vec![0.0; d.n() * m * cols];
        for (i, (o, w)) in d.initial_pairs().enumerate() {
            init_obs.extend_from_slice(o);
            features.moment_basis(
                &bridge_prefix(mode, o, w),
                &mut init_basis[i * m * cols..(i + 1) * m * cols],
            );
        }
        Ok(Self {
            mode,
            gamma: d.gamma(),
            n_traj: d.n(),
            horizon: d.horizon(),
            obs_dim: d.obs_dim(),
            proxy_dim: d.proxy_dim(),
            features,
            critic: Points::new(critic_dim, critic)?,
            psi,
            r,
            next_obs: Points::new(d.obs_dim(), next_obs)?,
            next_basis,
            init_obs: Points::new(d.obs_dim(), init_obs)?,
            init_basis,
        })
    }

    /// Number of tuples `N = nT`.
    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn m(&self) -> usize {
        self.features.dim()
    }

    fn cols(&self) -> usize {
        self.features.degree() + 1
    }

    pub fn median_bandwidth(&self, max_pairs: usize, seed: u64) -> Result<f64> {
        median_heuristic(&self.critic, max_pairs, seed)
    }

    fn check_policy(&self, class: &PolicyClass, zeta: &[f64]) -> Result<()> {
        class.check_params(zeta)?;
        if class.obs_dim != self.obs_dim {
            return Err(Error::Shape(format!(
                "policy expects observations of dim {}, data has {}",
                class.obs_dim, self.obs_dim
            )));
        }
        Ok(())
    }

    /// `E_π[ψ(o, w, a)]` for each row of a (basis, obs) table.
    fn expected_features(
        &self,
        obs: &Points,
        basis: &[f64],
        class: &PolicyClass,
        zeta: &[f64],
        rule: &NormalRule,
    ) -> Mat<f64> {
        let (m, cols) = (self.m(), self.cols());
        let rows = par::map_range(obs.len(), |i| {
            let mut mom = vec![0.0; cols];
            class.action_moments(zeta, obs.row(i), rule, &mut mom);
            let b = &basis[i * m * cols..(i + 1) * m * cols];
            (0..m)
                .map(|k| (0..cols).map(|e| b[k * cols + e] * mom[e]).sum::<f64>())
                .collect::<Vec<f64>>()
        });
        Mat::from_fn(obs.len(), m, |i, k| rows[i][k])
    }

    /// Per-row `ζ`-Jacobians of `E_π[ψ]`, each `m x p` row-major.
    fn expected_features_jac(
        &self,
        obs: &Points,
        basis: &[f64],
        class: &PolicyClass,
        zeta: &[f64],
        rule: &NormalRule,
    ) -> Vec<Vec<f64>> {
        let (m, cols, p) = (self.m(), self.cols(), class.n_params());
        par::map_range(obs.len(), |i| {
            let mut mom = vec![0.0; cols];
            let mut jac = vec![0.0; cols * p];
            class.action_moments_jac(zeta, obs.row(i), rule, &mut mom, &mut jac);
            let b = &basis[i * m * cols..(i + 1) * m * cols];
            let mut out = vec![0.0; m * p];
            for k in 0..m {
                for e in 0..cols {
                    let c = b[k * cols + e];
                    if c != 0.0 {
                        for j in 0..p {
                            out[k * p + j] += c * jac[e * p + j];
                        }
                    }
                }
            }
            out
        })
    }

    /// `Ψ̄(ζ)`: expected next-state features, `N x m`.
    pub fn next_expected(&self, class: &PolicyClass, zeta: &[f64], rule: &NormalRule) -> Mat<f64> {
        self.expected_features(&self.next_obs, &self.next_basis, class, zeta, rule)
    }

    /// Per-tuple `ζ`-Jacobians of `Ψ̄`, each `m x p` row-major.
    pub fn next_expected_jac(&self, class: &PolicyClass, zeta: &[f64], rule: &NormalRule) -> Vec<Vec<f64>> {
        self.expected_features_jac(&self.next_obs, &self.next_basis, class, zeta, rule)
    }

    /// Mean over trajectories of `E_π[ψ(O_0, W_0, a)]`; `Ĵ = v̄ᵀθ`.
    pub fn initial_mean(&self, class: &PolicyClass, zeta: &[f64], rule: &NormalRule) -> Vec<f64> {
        let e = self.expected_features(&self.init_obs, &self.init_basis, class, zeta, rule);
        column_means(e.as_ref())
    }

    /// `ζ`-Jacobian (`m x p`, row-major) of [`Design::initial_mean`].
    pub fn initial_mean_jac(&self, class: &PolicyClass, zeta: &[f64], rule: &NormalRule) -> Vec<f64> {
        let per = self.expected_features_jac(&self.init_obs, &self.init_basis, class, zeta, rule);
        mean_rows(&per)
    }

    /// `A = Ψ − γ Ψ̄`.
    pub fn a_matrix(&self, pbar: MatRef<'_, f64>) -> Mat<f64> {
        let g = self.gamma;
        Mat::from_fn(self.n(), self.m(), |i, k| self.psi[(i, k)] - g * pbar[(i, k)])
    }
}

fn column_means(x: MatRef<'_, f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|k| (0..x.nrows()).map(|i| x[(i, k)]).sum::<f64>() / n)
        .collect()
}

/// Elementwise mean of equal-length vectors, summed in index order.
fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; len];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub(crate) fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|k| a[(i, k)] * x[k]).sum())
        .collect()
}

pub(crate) fn mat_t_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    (0..a.ncols())
        .map(|k| (0..a.nrows()).map(|i| a[(i, k)] * x[i]).sum())
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the small SPD system `h x = rhs`, adding jitter 1e-10 if needed.
pub(crate) fn spd_solve(h: &Mat<f64>, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = h.nrows();
    let mut sym = Mat::from_fn(m, m, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
    let factor = match sym.llt(Side::Lower) {
        Ok(f) => f,
        Err(_) => {
            let scale = (0..m).map(|i| sym[(i, i)].abs()).fold(1.0f64, f64::max);
            for i in 0..m {
                sym[(i, i)] += 1e-10 * scale;
            }
            sym.llt(Side::Lower).map_err(|_| {
                Error::EstimationFailure(
                    "the bridge normal equations are singular even after jitter; increase lambda".into(),
                )
            })?
        }
    };
    let b = Mat::from_fn(m, rhs.len(), |i, j| rhs[j][i]);
    let x = factor.solve(b.as_ref());
    let out: Vec<Vec<f64>> = (0..rhs.len())
        .map(|j| (0..m).map(|i| x[(i, j)]).collect())
        .collect();
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::EstimationFailure(
            "non-finite bridge coefficients; increase lambda".into(),
        ));
    }
    Ok(out)
}

/// Loss value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub critic: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Result of one bridge fit at a fixed target policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub q: QBridge,
    pub value: f64,
    pub loss: LossParts,
    /// Per-iteration loss (SGD only; empty for the closed form).
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Policy-dependent quantities at a given `ζ`.
pub struct PolicyTerms {
    pub a: Mat<f64>,
    pub ga: Mat<f64>,
    pub v0: Vec<f64>,
}

/// A dataset prepared for estimation at fixed `(mode, bandwidth, μ)`.
pub struct Estimator {
    pub design: Design,
    pub config: EstimatorConfig,
    pub bandwidth: f64,
    op: CriticOperator,
    g_psi: Mat<f64>,
    g_r: Vec<f64>,
    r_g_r: f64,
    rule: NormalRule,
}

impl Estimator {
    pub fn new(d: &Dataset, config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let design = Design::new(d, config.mode, config.feature_degree)?;
        Self::from_design(design, config)
    }

    pub fn from_design(design: Design, config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let bandwidth = match config.bandwidth {
            Some(h) => h,
            None => design.median_bandwidth(config.max_pairs, config.bandwidth_seed)?,
        };
        let k = kernel_matrix(&KernelSpec::Gaussian { bandwidth }, &design.critic);
        let op = CriticOperator::new(k, config.mu)?;
        let g_psi = op.apply(design.psi.as_ref());
        let g_r = op.apply_vec(&design.r);
        let r_g_r = dot(&design.r, &g_r);
        Ok(Self {
            rule: NormalRule::new(config.quadrature_nodes)?,
            design,
            config: *config,
            bandwidth,
            op,
            g_psi,
            g_r,
            r_g_r,
        })
    }

    pub fn operator(&self) -> &CriticOperator {
        &self.op
    }

    /// `G b` with `b` the reward vector.
    pub fn g_r(&self) -> &[f64] {
        &self.g_r
    }

    pub fn rule(&self) -> &NormalRule {
        &self.rule
    }

    pub fn mode(&self) -> BaselineMode {
        self.design.mode
    }

    pub fn terms(&self, class: &PolicyClass, zeta: &[f64]) -> Result<PolicyTerms> {
        self.design.check_policy(class, zeta)?;
        let pbar = self.design.next_expected(class, zeta, &self.rule);
        let g_pbar = self.op.apply(pbar.as_ref());
        let g = self.design.gamma;
        let ga = Mat::from_fn(self.design.n(), self.design.m(), |i, k| {
            self.g_psi[(i, k)] - g * g_pbar[(i, k)]
        });
        Ok(PolicyTerms {
            a: self.design.a_matrix(pbar.as_ref()),
            ga,
            v0: self.design.initial_mean(class, zeta, &self.rule),
        })
    }

    fn bridge(&self, theta: Vec<f64>) -> QBridge {
        QBridge {
            theta,
            mode: self.design.mode,
            obs_dim: self.design.obs_dim,
            proxy_dim: self.design.proxy_dim,
            degree: self.design.features.degree(),
        }
    }

    /// Normal equations `(AᵀGA + λI) θ = AᵀG b`.
    pub fn normal_equations(&self, t: &PolicyTerms) -> (Mat<f64>, Vec<f64>) {
        let mut h = t.a.as_ref().transpose() * t.ga.as_ref();
        for i in 0..h.nrows() {
            h[(i, i)] += self.config.lambda;
        }
        (h, mat_t_vec(t.a.as_ref(), &self.g_r))
    }

    /// Closed-form minimizer at a precomputed policy state.
    pub fn solve_terms(&self, t: &PolicyTerms) -> Result<(Vec<f64>, Mat<f64>)> {
        let (h, g) = self.normal_equations(t);
        let theta = spd_solve(&h, &[g])?.remove(0);
        Ok((theta, h))
    }

    pub fn fit_closed_form(&self, class: &PolicyClass, zeta: &[f64]) -> Result<FitResult> {
        let t = self.terms(class, zeta)?;
        let (theta, _) = self.solve_terms(&t)?;
        let loss = self.loss_from_terms(&t, &theta);
        let value = dot(&t.v0, &theta);
        Ok(FitResult {
            q: self.bridge(theta),
            value,
            loss,
            loss_trace: Vec::new(),
            iterations: 0,
            converged: true,
        })
    }

    pub fn fit(&self, class: &PolicyClass, zeta: &[f64], theta0: Option<&[f64]>) -> Result<FitResult> {
        match self.config.optimizer {
            Optimizer::ClosedForm => self.fit_closed_form(class, zeta),
            Optimizer::Sgd(s) => self.fit_sgd(class, zeta, &s, theta0),
        }
    }

    /// Residuals `φ = Aθ − b` in tuple order.
    pub fn residuals_from_terms(&self, t: &PolicyTerms, theta: &[f64]) -> Vec<f64> {
        let at = mat_vec(t.a.as_ref(), theta);
        at.iter().zip(&self.design.r).map(|(x, r)| x - r).collect()
    }

    pub fn residuals(&self, class: &PolicyClass, zeta: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let t = self.terms(class, zeta)?;
        Ok(self.residuals_from_terms(&t, theta))
    }

    /// `φᵀGφ + λθᵀθ` with `φᵀGφ = θᵀAᵀGAθ − 2θᵀAᵀGb + bᵀGb`.
    pub fn loss_from_terms(&self, t: &PolicyTerms, theta: &[f64]) -> LossParts {
        let ga_theta = mat_vec(t.ga.as_ref(), theta);
        let at = mat_vec(t.a.as_ref(), theta);
        let quad = dot(&at, &ga_theta) - 2.0 * dot(&at, &self.g_r) + self.r_g_r;
        let critic = quad.max(0.0);
        let penalty = self.config.lambda * dot(theta, theta);
        LossParts {
            critic,
            penalty,
            total: critic + penalty,
        }
    }

    /// Loss evaluated directly from the residual vector.
    pub fn loss(&self, class: &PolicyClass, zeta: &[f64], theta: &[f64]) -> Result<LossParts> {
        let phi = self.residuals(class, zeta, theta)?;
        let critic = self.op.quad(&phi);
        let penalty = self.config.lambda * dot(theta, theta);
        Ok(LossParts {
            critic,
            penalty,
            total: critic + penalty,
        })
    }

    /// `∇_θ L = 2AᵀG(Aθ − b) + 2λθ`.
    pub fn loss_grad(&self, class: &PolicyClass, zeta: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let t = self.terms(class, zeta)?;
        Ok(self.loss_grad_terms(&t, theta))
    }

    fn loss_grad_terms(&self, t: &PolicyTerms, theta: &[f64]) -> Vec<f64> {
        let ga_theta = mat_vec(t.ga.as_ref(), theta);
        let resid: Vec<f64> = ga_theta.iter().zip(&self.g_r).map(|(a, b)| a - b).collect();
        mat_t_vec(t.a.as_ref(), &resid)
            .iter()
            .zip(theta)
            .map(|(g, th)| 2.0 * g + 2.0 * self.config.lambda * th)
            .collect()
    }

    pub fn value(&self, class: &PolicyClass, zeta: &[f64], theta: &[f64]) -> Result<f64> {
        self.design.check_policy(class, zeta)?;
        Ok(dot(&self.design.initial_mean(class, zeta, &self.rule), theta))
    }

    /// Algorithm-1 style stochastic gradient descent.
    ///
    /// Each iteration draws `batch` distinct tuples, builds the critic
    /// operator on that batch (bandwidth frozen at the full-data value) and
    /// steps `θ ← θ − α₀/√j · ∇L_batch(θ)`. A full batch reuses the cached
    /// full-data operator.
    pub fn fit_sgd(
        &self,
        class: &PolicyClass,
        zeta: &[f64],
        s: &SgdConfig,
        theta0: Option<&[f64]>,
    ) -> Result<FitResult> {
        let t = self.terms(class, zeta)?;
        let n = self.design.n();
        let m = self.design.m();
        let mut theta = match theta0 {
            Some(t0) if t0.len() == m => t0.to_vec(),
            Some(t0) => {
                return Err(Error::Shape(format!(
                    "initial bridge has {} coefficients, expected {m}",
                    t0.len()
                )))
            }
            None => vec![0.0; m],
        };
        let full = s.batch >= n;
        let (h_full, g_full) = if full {
            let (h, g) = self.normal_equations(&t);
            (Some(h), g)
        } else {
            (None, Vec::new())
        };
        let mut rng = rng_from_seed(s.seed);
        let kernel = KernelSpec::Gaussian {
            bandwidth: self.bandwidth,
        };
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        for j in 1..=s.max_iters {
            iterations = j;
            let (grad, loss) = if let Some(h) = &h_full {
                // ∇ = 2(Hθ − AᵀGb) and L = θᵀHθ − 2θᵀAᵀGb + bᵀGb, with H
                // already including λI.
                let ht = mat_vec(h.as_ref(), &theta);
                let grad: Vec<f64> = ht.iter().zip(&g_full).map(|(a, b)| 2.0 * (a - b)).collect();
                let loss = dot(&theta, &ht) - 2.0 * dot(&theta, &g_full) + self.r_g_r;
                (grad, loss.max(0.0))
            } else {
                let idx = sample_indices(&mut rng, n, s.batch).into_vec();
                self.batch_grad(&t, &idx, &kernel, &theta)?
            };
            trace.push(loss);
            if !loss.is_finite() || loss > 1e6 {
                return Err(Error::Divergence { iteration: j, loss });
            }
            let step = s.lr / (j as f64).sqrt();
            let mut disp = 0.0;
            for (th, g) in theta.iter_mut().zip(&grad) {
                let d = step * g;
                *th -= d;
                disp += d * d;
            }
            if disp.sqrt() <= s.tol {
                converged = true;
                break;
            }
        }
        let loss = self.loss_from_terms(&t, &theta);
        let value = dot(&t.v0, &theta);
        Ok(FitResult {
            q: self.bridge(theta),
            value,
            loss,
            loss_trace: trace,
            iterations,
            converged,
        })
    }

    fn batch_grad(
        &self,
        t: &PolicyTerms,
        idx: &[usize],
        kernel: &KernelSpec,
        theta: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        let k = kernel_matrix(kernel, &self.design.critic.select(idx));
        let op = CriticOperator::new(k, self.config.mu)?;
        let m = self.design.m();
        let a_b = Mat::from_fn(idx.len(), m, |i, c| t.a[(idx[i], c)]);
        let phi: Vec<f64> = mat_vec(a_b.as_ref(), theta)
            .iter()
            .zip(idx)
            .map(|(x, &i)| x - self.design.r[i])
            .collect();
        let g_phi = op.apply_vec(&phi);
        let lam = self.config.lambda;
        let grad: Vec<f64> = mat_t_vec(a_b.as_ref(), &g_phi)
            .iter()
            .zip(theta)
            .map(|(g, th)| 2.0 * g + 2.0 * lam * th)
            .collect();
        let loss = dot(&phi, &g_phi).max(0.0) + lam * dot(theta, theta);
        Ok((grad, loss))
    }
}

/// Exported estimator summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mode: BaselineMode,
    pub lambda: f64,
    pub mu: f64,
    pub bandwidth: f64,
    pub theta: Vec<f64>,
    pub loss: LossParts,
    pub loss_trace: Vec<f64>,
    pub value: f64,
}

impl EstimatorReport {
    pub fn new(est: &Estimator, fit: &FitResult) -> Self {
        Self {
            mode: est.mode(),
            lambda: est.config.lambda,
            mu: est.config.mu,
            bandwidth: est.bandwidth,
            theta: fit.q.theta.clone(),
            loss: fit.loss,
            loss_trace: fit.loss_trace.clone(),
            value: fit.value,
        }
    }
}

/// `Σ_j weight_j π(node_j | o) q(o, w, node_j)` for an arbitrary integrand.
pub fn expected_q_with_rule(
    class: &PolicyClass,
    zeta: &[f64],
    o: &[f64],
    w: &[f64],
    q: impl Fn(&[f64], &[f64], f64) -> f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let mut total = 0.0;
    for (&a, &wt) in rule.nodes.iter().zip(&rule.weights) {
        total += wt * class.density(zeta, o, a)?.value * q(o, w, a);
    }
    Ok(total)
}

/// `∫ π(a|o) q(o, w, a) da` for a fitted bridge, through the action moments.
pub fn expected_q(
    class: &PolicyClass,
    zeta: &[f64],
    o: &[f64],
    w: &[f64],
    q: &QBridge,
    rule: &NormalRule,
) -> Result<f64> {
    class.check_params(zeta)?;
    let fm = q.features()?;
    let cols = q.degree + 1;
    let mut basis = vec![0.0; fm.dim() * cols];
    fm.moment_basis(&bridge_prefix(q.mode, o, w), &mut basis);
    let mut mom = vec![0.0; cols];
    class.action_moments(zeta, o, rule, &mut mom);
    Ok((0..fm.dim())
        .map(|k| q.theta[k] * (0..cols).map(|e| basis[k * cols + e] * mom[e]).sum::<f64>())
        .sum())
}

/// Bellman residuals of `q` at every tuple, `(i, t)` ordered.
pub fn residual_vector(
    q: &QBridge,
    d: &Dataset,
    class: &PolicyClass,
    zeta: &[f64],
    config: &EstimatorConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let design = Design::new(d, q.mode, q.degree)?;
    design.check_policy(class, zeta)?;
    check_theta(q, &design)?;
    let rule = NormalRule::new(config.quadrature_nodes)?;
    let pbar = design.next_expected(class, zeta, &rule);
    let a = design.a_matrix(pbar.as_ref());
    Ok(mat_vec(a.as_ref(), &q.theta)
        .iter()
        .zip(&design.r)
        .map(|(x, r)| x - r)
        .collect())
}

fn check_theta(q: &QBridge, design: &Design) -> Result<()> {
    if q.theta.len() != design.m() {
        return Err(Error::Shape(format!(
            "bridge has {} coefficients, the feature map has {}",
            q.theta.len(),
            design.m()
        )));
    }
    Ok(())
}

/// Decoupled minimax loss `φᵀGφ + λ θᵀθ` of `q`.
pub fn ustat_loss(
    q: &QBridge,
    d: &Dataset,
    class: &PolicyClass,
    zeta: &[f64],
    config: &EstimatorConfig,
) -> Result<LossParts> {
    let config = EstimatorConfig { mode: q.mode, feature_degree: q.degree, ..*config };
    let est = Estimator::new(d, &config)?;
    check_theta(q, &est.design)?;
    est.loss(class, zeta, &q.theta)
}

pub fn fit_q_closed_form(
    d: &Dataset,
    class: &PolicyClass,
    zeta: &[f64],
    config: &EstimatorConfig,
) -> Result<FitResult> {
    Estimator::new(d, config)?.fit_closed_form(class, zeta)
}

pub fn fit_q_sgd(
    d: &Dataset,
    class: &PolicyClass,
    zeta: &[f64],
    config: &EstimatorConfig,
) -> Result<FitResult> {
    let Optimizer::Sgd(s) = config.optimizer else {
        return Err(Error::Config("fit_q_sgd needs an Sgd optimizer".into()));
    };
    Estimator::new(d, config)?.fit_sgd(class, zeta, &s, None)
}

/// `Ĵ(π) = mean_i ∫ π(a | O_0^i) q(O_0^i, W_0^i, a) da`.
pub fn estimate_policy_value(
    q: &QBridge,
    d: &Dataset,
    class: &PolicyClass,
    zeta: &[f64],
    config: &EstimatorConfig,
) -> Result<f64> {
    let rule = NormalRule::new(config.quadrature_nodes)?;
    let mut total = 0.0;
    for (o, w) in d.initial_pairs() {
        total += expected_q(class, zeta, o, w, q, &rule)?;
    }
    Ok(total / d.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ActionInterval;
    use crate::env::{rollout, ActionSampler, BehaviorSpec, EnvSpec};
    use crate::numerics::gauss_legendre_rule;
    use crate::policy::{softplus_inv, PolicyKind};

    fn small(n: usize, t: usize, gamma: f64) -> Dataset {
        rollout(
            &EnvSpec::default(),
            ActionSampler::Behavior(&BehaviorSpec::default()),
            n,
            t,
            gamma,
            11,
        )
        .unwrap()
    }

    fn uniform_beta() -> (PolicyClass, Vec<f64>) {
        let c = PolicyClass::new(PolicyKind::BetaLinear, 1, ActionInterval::default()).unwrap();
        (c, vec![softplus_inv(1.0), 0.0, softplus_inv(1.0), 0.0])
    }

    fn gauss() -> (PolicyClass, Vec<f64>) {
        let c = PolicyClass::new(PolicyKind::GaussianLinear, 1, ActionInterval::default()).unwrap();
        (c, vec![0.1, -0.3, -0.7, 0.2])
    }

    #[test]
    fn expected_q_examples() {
        let (c, z) = uniform_beta();
        let rule = gauss_legendre_rule(21, (-1.0, 1.0)).unwrap();
        let o = [0.3];
        let w = [-0.2];
        type Q<'a> = &'a dyn Fn(&[f64], &[f64], f64) -> f64;
        let e = |q: Q<'_>| expected_q_with_rule(&c, &z, &o, &w, q, &rule).unwrap();
        assert!((e(&|_, _, _| 2.5) - 2.5).abs() < 1e-12);
        assert!(e(&|_, _, a| a).abs() < 1e-12);
        assert!((e(&|_, _, a| a * a) - 1.0 / 3.0).abs() < 1e-12);

        // Same integrals through the bridge representation.
        let nr = NormalRule::new(21).unwrap();
        let mut q = QBridge::zeros(BaselineMode::Proximal, 1, 1, 2).unwrap();
        q.theta[9] = 1.0; // a²
        assert!((expected_q(&c, &z, &o, &w, &q, &nr).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        q.theta[9] = 0.0;
        q.theta[3] = 1.0; // a
        assert!(expected_q(&c, &z, &o, &w, &q, &nr).unwrap().abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let d = small(3, 4, 0.9);
        let (c, z) = gauss();
        let cfg = EstimatorConfig::default();
        let tuples = to_transition_tuples(&d).unwrap();
        let mut q = QBridge::zeros(BaselineMode::Proximal, 1, 1, 2).unwrap();
        let phi = residual_vector(&q, &d, &c, &z, &cfg).unwrap();
        for (p, tu) in phi.iter().zip(&tuples) {
            assert_eq!(*p, -tu.r);
        }
        q.theta[0] = 1.7;
        let phi = residual_vector(&q, &d, &c, &z, &cfg).unwrap();
        for (p, tu) in phi.iter().zip(&tuples) {
            assert!((p - (1.7 * 0.1 - tu.r)).abs() < 1e-12);
        }
        let d0 = d.with_gamma(0.0).unwrap();
        q.theta = (0..10).map(|k| 0.1 * k as f64 - 0.3).collect();
        let phi = residual_vector(&q, &d0, &c, &z, &cfg).unwrap();
        for (p, tu) in phi.iter().zip(&tuples) {
            let want = q.eval(&tu.o, &tu.w, tu.a).unwrap() - tu.r;
            assert!((p - want).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_loss_example() {
        // One tuple with r = 1, q ≡ 0, λ = 0: the critic term is
        // max_c { -c - c²/2 - μc² } = 1 / (2 + 4μ).
        let traj = crate::data::Trajectory {
            episode: 0,
            steps: vec![
                crate::data::Step { obs: vec![0.0], proxy: vec![0.0], action: 0.0, reward: 0.0 },
                crate::data::Step { obs: vec![0.5], proxy: vec![0.1], action: 0.2, reward: 1.0 },
            ],
            terminal_obs: vec![0.3],
            terminal_proxy: vec![0.0],
        };
        let d = Dataset::new(vec![traj], EnvSpec::default().schema(0.9)).unwrap();
        let (c, z) = gauss();
        let mu = 0.3;
        let cfg = EstimatorConfig { lambda: 0.0, mu, bandwidth: Some(1.0), ..Default::default() };
        let q = QBridge::zeros(BaselineMode::Proximal, 1, 1, 2).unwrap();
        let loss = ustat_loss(&q, &d, &c, &z, &cfg).unwrap();
        assert!((loss.total - 1.0 / (2.0 + 4.0 * mu)).abs() < 1e-14);
        assert!((loss.total - (1.0 / (2.0 * mu) + 1.0f64).recip() / (4.0 * mu)).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_system_gives_zero() {
        let mut d = small(4, 3, 0.9);
        let trajs: Vec<_> = d
            .trajectories()
            .iter()
            .cloned()
            .map(|mut t| {
                t.steps.iter_mut().for_each(|s| s.reward = 0.0);
                t
            })
            .collect();
        d = Dataset::new(trajs, *d.schema()).unwrap();
        let (c, z) = gauss();
        let fit = fit_q_closed_form(&d, &c, &z, &EstimatorConfig::default()).unwrap();
        assert!(fit.q.theta.iter().all(|t| t.abs() < 1e-12));
    }

    #[test]
    fn closed_form_is_a_minimizer() {
        let d = small(6, 5, 0.9);
        let (c, z) = gauss();
        let cfg = EstimatorConfig { lambda: 1e-3, ..Default::default() };
        let est = Estimator::new(&d, &cfg).unwrap();
        let fit = est.fit_closed_form(&c, &z).unwrap();
        let base = est.loss(&c, &z, &fit.q.theta).unwrap().total;
        assert!((base - fit.loss.total).abs() < 1e-10 * base.max(1e-12));
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let pert: Vec<f64> = fit
                .q
                .theta
                .iter()
                .map(|t| t + 1e-3 * rand::Rng::random_range(&mut rng, -1.0..1.0))
                .collect();
            assert!(est.loss(&c, &z, &pert).unwrap().total >= base - 1e-14);
        }
    }

    #[test]
    fn constant_bridge_value() {
        let d = small(3, 2, 0.9);
        let (c, z) = gauss();
        let mut q = QBridge::zeros(BaselineMode::Proximal, 1, 1, 2).unwrap();
        q.theta[0] = -2.5;
        let v = estimate_policy_value(&q, &d, &c, &z, &EstimatorConfig::default()).unwrap();
        assert!((v + 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_step_sgd_keeps_theta() {
        let d = small(3, 3, 0.9);
        let (c, z) = gauss();
        let sgd = SgdConfig { batch: 1000, lr: 0.0, max_iters: 50, tol: 1e-6, seed: 0 };
        let cfg = EstimatorConfig { optimizer: Optimizer::Sgd(sgd), ..Default::default() };
        let fit = fit_q_sgd(&d, &c, &z, &cfg).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
        assert!(fit.q.theta.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn full_batch_gradient_matches_batch_route() {
        let d = small(3, 4, 0.9);
        let (c, z) = gauss();
        let est = Estimator::new(&d, &EstimatorConfig::default()).unwrap();
        let t = est.terms(&c, &z).unwrap();
        let theta: Vec<f64> = (0..10).map(|k| (k as f64 * 0.37).sin()).collect();
        let full = est.loss_grad_terms(&t, &theta);
        let idx: Vec<usize> = (0..est.design.n()).collect();
        let kernel = KernelSpec::Gaussian { bandwidth: est.bandwidth };
        let (batch, _) = est.batch_grad(&t, &idx, &kernel, &theta).unwrap();
        for (a, b) in full.iter().zip(&batch) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}
