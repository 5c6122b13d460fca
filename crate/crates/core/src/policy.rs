//! Stochastic policy classes over a bounded scalar action.
//!
//! Every class maps the observation `o` to two "heads" and then to a
//! distribution on the action interval `[lo, hi]`:
//!
//! * Beta family: `a = lo + (hi - lo) b`, `b ~ Beta(α, β)`.
//! * Tanh-Gaussian family: `a = mid + half · tanh(u)`, `u ~ N(μ, σ²)`.
//!
//! | class            | heads                                                     |
//! |------------------|-----------------------------------------------------------|
//! | `BetaLinear`     | `α = softplus(ζ₁ᵀx)`, `β = softplus(ζ₂ᵀx)`, `x = [1, o]`    |
//! | `GaussianLinear` | `μ = ζ₁ᵀx`, `σ = softplus(ζ₂ᵀx) + σ_floor`                  |
//! | `BetaMlp`        | as `BetaLinear` with a one-hidden-layer tanh MLP for `ζᵀx`  |
//! | `GaussianMlp`    | as `GaussianLinear` with the same MLP                      |
//! | `BetaExpit`      | `α = 1 + ζ₁·expit(ζ₂ᵀx)`, `β = 1 + ζ₃·expit(ζ₄ᵀx)`           |

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;

use crate::data::ActionInterval;
use crate::error::{Error, Result};
use crate::numerics::NormalRule;
use crate::rng::rng_from_seed;

/// Added to the softplus standard deviation of the Gaussian head.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Boundary actions are pulled this far inside the interval (in unit scale).
pub const BOUNDARY_EPS: f64 = 1e-9;
pub const DEFAULT_HIDDEN: usize = 32;
/// Upper limit of the scale parameters of `BetaExpit`; `α, β ∈ [1, 21]`.
pub const EXPIT_CAP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    BetaLinear,
    GaussianLinear,
    BetaMlp,
    GaussianMlp,
    BetaExpit,
}

impl PolicyKind {
    pub fn family(self) -> Family {
        match self {
            PolicyKind::GaussianLinear | PolicyKind::GaussianMlp => Family::TanhGaussian,
            _ => Family::Beta,
        }
    }

    pub fn is_mlp(self) -> bool {
        matches!(self, PolicyKind::BetaMlp | PolicyKind::GaussianMlp)
    }

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::BetaLinear => "Linear-Beta",
            PolicyKind::GaussianLinear => "Linear-Gaussian",
            PolicyKind::BetaMlp => "MLP-Beta",
            PolicyKind::GaussianMlp => "MLP-Gaussian",
            PolicyKind::BetaExpit => "Expit-Beta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Beta,
    TanhGaussian,
}

/// A named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyClass {
    pub kind: PolicyKind,
    pub obs_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub action_interval: ActionInterval,
}

/// Density value plus whether the action had to be pulled off the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    pub log: f64,
    pub clamped: bool,
}

/// How to initialize `ζ` before learning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Init {
    /// Zeros for linear classes, `N(0, 0.1²)` for MLP classes.
    #[default]
    Auto,
    Zeros,
    Random { sd: f64 },
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus, for building parameters with a prescribed head.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PolicyClass {
    pub fn new(kind: PolicyKind, obs_dim: usize, action_interval: ActionInterval) -> Result<Self> {
        let c = Self {
            kind,
            obs_dim,
            hidden: DEFAULT_HIDDEN,
            action_interval,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_hidden(mut self, hidden: usize) -> Result<Self> {
        self.hidden = hidden;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 {
            return Err(Error::Config("policy needs obs_dim >= 1".into()));
        }
        if self.kind.is_mlp() && self.hidden == 0 {
            return Err(Error::Config("MLP policy needs at least one hidden unit".into()));
        }
        ActionInterval::new(self.action_interval.lo, self.action_interval.hi)?;
        Ok(())
    }

    pub fn family(&self) -> Family {
        self.kind.family()
    }

    fn basis_dim(&self) -> usize {
        self.obs_dim + 1
    }

    pub fn n_params(&self) -> usize {
        let d = self.basis_dim();
        let h = self.hidden;
        match self.kind {
            PolicyKind::BetaLinear | PolicyKind::GaussianLinear => 2 * d,
            PolicyKind::BetaMlp | PolicyKind::GaussianMlp => h * self.obs_dim + h + 2 * h + 2,
            PolicyKind::BetaExpit => 2 * d + 2,
        }
    }

    pub fn layout(&self) -> Vec<Segment> {
        let d = self.basis_dim();
        let h = self.hidden;
        let names: Vec<(&str, usize)> = match self.kind {
            PolicyKind::BetaLinear => vec![("alpha", d), ("beta", d)],
            PolicyKind::GaussianLinear => vec![("mean", d), ("scale", d)],
            PolicyKind::BetaMlp | PolicyKind::GaussianMlp => vec![
                ("hidden_weights", h * self.obs_dim),
                ("hidden_bias", h),
                ("head1_weights", h),
                ("head1_bias", 1),
                ("head2_weights", h),
                ("head2_bias", 1),
            ],
            PolicyKind::BetaExpit => vec![
                ("alpha_scale", 1),
                ("alpha", d),
                ("beta_scale", 1),
                ("beta", d),
            ],
        };
        let mut off = 0;
        names
            .into_iter()
            .map(|(name, len)| {
                let s = Segment {
                    name: name.to_string(),
                    offset: off,
                    len,
                };
                off += len;
                s
            })
            .collect()
    }

    pub fn check_params(&self, zeta: &[f64]) -> Result<()> {
        if zeta.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} with obs_dim {} expects {} parameters, got {}",
                self.kind.label(),
                self.obs_dim,
                self.n_params(),
                zeta.len()
            )));
        }
        if zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::Validation("policy parameters must be finite".into()));
        }
        if self.kind == PolicyKind::BetaExpit {
            let d = self.basis_dim();
            for &s in &[zeta[0], zeta[d + 1]] {
                if !(0.0..=EXPIT_CAP).contains(&s) {
                    return Err(Error::Domain(format!(
                        "Expit-Beta scale parameters must lie in [0, {EXPIT_CAP}], got {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Projects `ζ` onto the feasible set (a no-op except for `BetaExpit`).
    pub fn project(&self, zeta: &mut [f64]) {
        if self.kind == PolicyKind::BetaExpit {
            let d = self.basis_dim();
            zeta[0] = zeta[0].clamp(0.0, EXPIT_CAP);
            zeta[d + 1] = zeta[d + 1].clamp(0.0, EXPIT_CAP);
        }
    }

    pub fn init(&self, init: Init, seed: u64) -> Vec<f64> {
        let p = self.n_params();
        let sd = match init {
            Init::Zeros => 0.0,
            Init::Random { sd } => sd,
            Init::Auto if self.kind.is_mlp() => 0.1,
            Init::Auto => 0.0,
        };
        if sd == 0.0 {
            return vec![0.0; p];
        }
        let mut rng = rng_from_seed(seed);
        let mut z: Vec<f64> = (0..p)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.project(&mut z);
        z
    }

    /// Pre-activations `(z₁, z₂)` and, if `jac` is given, their gradients
    /// written row-major as `jac[0..p]`, `jac[p..2p]`.
    fn preactivations(&self, zeta: &[f64], o: &[f64], jac: Option<&mut [f64]>) -> [f64; 2] {
        let p = self.n_params();
        match self.kind {
            PolicyKind::BetaLinear | PolicyKind::GaussianLinear | PolicyKind::BetaExpit => {
                let d = self.basis_dim();
                let (s1, s2) = if self.kind == PolicyKind::BetaExpit {
                    (1, d + 2)
                } else {
                    (0, d)
                };
                let lin = |s: usize| zeta[s] + dot(&zeta[s + 1..s + d], o);
                let z = [lin(s1), lin(s2)];
                if let Some(jac) = jac {
                    jac.fill(0.0);
                    for (row, s) in [(0, s1), (1, s2)] {
                        jac[row * p + s] = 1.0;
                        jac[row * p + s + 1..row * p + s + d].copy_from_slice(o);
                    }
                }
                z
            }
            PolicyKind::BetaMlp | PolicyKind::GaussianMlp => {
                let (h, d_o) = (self.hidden, self.obs_dim);
                let w1 = &zeta[..h * d_o];
                let b1 = &zeta[h * d_o..h * d_o + h];
                let v1_off = h * d_o + h;
                let c1_off = v1_off + h;
                let v2_off = c1_off + 1;
                let c2_off = v2_off + h;
                let hid: Vec<f64> = (0..h)
                    .map(|k| (b1[k] + dot(&w1[k * d_o..(k + 1) * d_o], o)).tanh())
                    .collect();
                let z = [
                    dot(&zeta[v1_off..v1_off + h], &hid) + zeta[c1_off],
                    dot(&zeta[v2_off..v2_off + h], &hid) + zeta[c2_off],
                ];
                if let Some(jac) = jac {
                    jac.fill(0.0);
                    for (row, v_off, c_off) in [(0, v1_off, c1_off), (1, v2_off, c2_off)] {
                        let r = &mut jac[row * p..(row + 1) * p];
                        for k in 0..h {
                            let back = zeta[v_off + k] * (1.0 - hid[k] * hid[k]);
                            for j in 0..d_o {
                                r[k * d_o + j] = back * o[j];
                            }
                            r[h * d_o + k] = back;
                            r[v_off + k] = hid[k];
                        }
                        r[c_off] = 1.0;
                    }
                }
                z
            }
        }
    }

    /// Distribution parameters: `(α, β)` for Beta classes, `(μ, σ)` for
    /// tanh-Gaussian classes. With `jac`, also their `ζ`-gradients
    /// (row-major `2 x p`).
    pub fn heads(&self, zeta: &[f64], o: &[f64], jac: Option<&mut [f64]>) -> [f64; 2] {
        let p = self.n_params();
        match jac {
            None => {
                let z = self.preactivations(zeta, o, None);
                self.link(zeta, z, None)
            }
            Some(jac) => {
                let z = self.preactivations(zeta, o, Some(jac));
                let mut dlink = [0.0; 2];
                let heads = self.link(zeta, z, Some(&mut dlink));
                for (row, &dl) in dlink.iter().enumerate() {
                    for v in &mut jac[row * p..(row + 1) * p] {
                        *v *= dl;
                    }
                }
                if self.kind == PolicyKind::BetaExpit {
                    // The scale parameters enter multiplicatively, not
                    // through the pre-activation.
                    let d = self.basis_dim();
                    jac[0] = expit(z[0]);
                    jac[p + d + 1] = expit(z[1]);
                }
                heads
            }
        }
    }

    /// Maps pre-activations to distribution parameters; `dlink` receives the
    /// derivative of each head with respect to its own pre-activation.
    fn link(&self, zeta: &[f64], z: [f64; 2], dlink: Option<&mut [f64; 2]>) -> [f64; 2] {
        let (heads, d) = match self.kind {
            PolicyKind::BetaLinear | PolicyKind::BetaMlp => (
                [softplus(z[0]), softplus(z[1])],
                [expit(z[0]), expit(z[1])],
            ),
            PolicyKind::GaussianLinear | PolicyKind::GaussianMlp => {
                ([z[0], softplus(z[1]) + SIGMA_FLOOR], [1.0, expit(z[1])])
            }
            PolicyKind::BetaExpit => {
                let s1 = zeta[0];
                let s2 = zeta[self.basis_dim() + 1];
                let (e1, e2) = (expit(z[0]), expit(z[1]));
                (
                    [1.0 + s1 * e1, 1.0 + s2 * e2],
                    [s1 * e1 * (1.0 - e1), s2 * e2 * (1.0 - e2)],
                )
            }
        };
        if let Some(out) = dlink {
            *out = d;
        }
        heads
    }

    /// Unit-scale coordinate of `a` (`b ∈ [0,1]` for Beta, `y ∈ [-1,1]` for
    /// tanh-Gaussian), pulled inside the open interval if it sits on the
    /// boundary.
    fn unit_coordinate(&self, a: f64) -> Result<(f64, bool)> {
        let iv = self.action_interval;
        if !(a >= iv.lo && a <= iv.hi) {
            return Err(Error::Domain(format!(
                "action {a} outside [{}, {}]",
                iv.lo, iv.hi
            )));
        }
        let (x, lo) = match self.family() {
            Family::Beta => ((a - iv.lo) / iv.width(), 0.0),
            Family::TanhGaussian => ((a - iv.mid()) / iv.half_width(), -1.0),
        };
        Ok(if x <= lo {
            (lo + BOUNDARY_EPS, true)
        } else if x >= 1.0 {
            (1.0 - BOUNDARY_EPS, true)
        } else {
            (x, false)
        })
    }

    /// Log-density and its gradient with respect to the two heads.
    fn log_density_heads(&self, heads: [f64; 2], unit: f64) -> (f64, [f64; 2]) {
        let iv = self.action_interval;
        match self.family() {
            Family::Beta => {
                let [al, be] = heads;
                let lb = unit.ln();
                let l1b = (-unit).ln_1p();
                let log = (al - 1.0) * lb + (be - 1.0) * l1b - ln_beta(al, be) - iv.width().ln();
                let dab = digamma(al + be);
                (log, [lb - digamma(al) + dab, l1b - digamma(be) + dab])
            }
            Family::TanhGaussian => {
                let [mu, sigma] = heads;
                let u = unit.atanh();
                let zs = (u - mu) / sigma;
                let log = -0.5 * zs * zs
                    - sigma.ln()
                    - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    - iv.half_width().ln()
                    - ((1.0 - unit) * (1.0 + unit)).ln();
                (log, [zs / sigma, (zs * zs - 1.0) / sigma])
            }
        }
    }

    pub fn density(&self, zeta: &[f64], o: &[f64], a: f64) -> Result<DensityValue> {
        self.check_params(zeta)?;
        self.check_obs(o)?;
        let (unit, clamped) = self.unit_coordinate(a)?;
        let heads = self.heads(zeta, o, None);
        let (log, _) = self.log_density_heads(heads, unit);
        Ok(DensityValue {
            value: log.exp(),
            log,
            clamped,
        })
    }

    /// `∇_ζ π(a | o; ζ) = π · ∇_ζ log π`.
    pub fn grad_zeta_density(&self, zeta: &[f64], o: &[f64], a: f64) -> Result<Vec<f64>> {
        let mut g = self.grad_zeta_log_density(zeta, o, a)?;
        let d = self.density(zeta, o, a)?.value;
        for v in &mut g {
            *v *= d;
        }
        Ok(g)
    }

    pub fn grad_zeta_log_density(&self, zeta: &[f64], o: &[f64], a: f64) -> Result<Vec<f64>> {
        self.check_params(zeta)?;
        self.check_obs(o)?;
        let p = self.n_params();
        let (unit, _) = self.unit_coordinate(a)?;
        let mut jac = vec![0.0; 2 * p];
        let heads = self.heads(zeta, o, Some(&mut jac));
        let (_, dh) = self.log_density_heads(heads, unit);
        Ok((0..p).map(|k| dh[0] * jac[k] + dh[1] * jac[p + k]).collect())
    }

    fn check_obs(&self, o: &[f64]) -> Result<()> {
        if o.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "policy expects observations of dim {}, got {}",
                self.obs_dim,
                o.len()
            )));
        }
        Ok(())
    }

    /// Draws an action; the result always lies in the closed action interval.
    pub fn sample<R: Rng + ?Sized>(&self, zeta: &[f64], o: &[f64], rng: &mut R) -> f64 {
        let iv = self.action_interval;
        let [h1, h2] = self.heads(zeta, o, None);
        let a = match self.family() {
            Family::Beta => {
                let b = BetaDist::new(h1, h2)
                    .map(|d| d.sample(rng))
                    .unwrap_or(0.5);
                iv.lo + iv.width() * b
            }
            Family::TanhGaussian => {
                let z: f64 = rng.sample(StandardNormal);
                iv.mid() + iv.half_width() * (h1 + h2 * z).tanh()
            }
        };
        a.clamp(iv.lo, iv.hi)
    }

    /// Raw action moments `E[a^e]`, `e = 0..=degree`, written to `out`.
    ///
    /// Beta moments are exact. Tanh-Gaussian moments integrate over the
    /// latent normal with `rule`, which is exact up to the rule's accuracy
    /// for the smooth integrand `tanh(μ + σz)^e`.
    pub fn action_moments(&self, zeta: &[f64], o: &[f64], rule: &NormalRule, out: &mut [f64]) {
        let heads = self.heads(zeta, o, None);
        self.moments_from_heads(heads, rule, out, None);
    }

    /// Moments plus their `ζ`-Jacobian, row-major `(degree + 1) x p`.
    pub fn action_moments_jac(
        &self,
        zeta: &[f64],
        o: &[f64],
        rule: &NormalRule,
        out: &mut [f64],
        jac: &mut [f64],
    ) {
        let p = self.n_params();
        let mut hjac = vec![0.0; 2 * p];
        let heads = self.heads(zeta, o, Some(&mut hjac));
        let n = out.len();
        let mut dh = vec![0.0; 2 * n];
        self.moments_from_heads(heads, rule, out, Some(&mut dh));
        for e in 0..n {
            let (d1, d2) = (dh[2 * e], dh[2 * e + 1]);
            let row = &mut jac[e * p..(e + 1) * p];
            for k in 0..p {
                row[k] = d1 * hjac[k] + d2 * hjac[p + k];
            }
        }
    }

    /// Moments as functions of the heads; `dh[2e + j]` = `∂E[a^e]/∂head_j`.
    fn moments_from_heads(
        &self,
        heads: [f64; 2],
        rule: &NormalRule,
        out: &mut [f64],
        mut dh: Option<&mut [f64]>,
    ) {
        let iv = self.action_interval;
        let n = out.len();
        match self.family() {
            Family::Beta => {
                let [al, be] = heads;
                // E[b^k] and its log-derivatives in α and β.
                let mut mb = vec![1.0; n];
                let mut la = vec![0.0; n];
                let mut lbt = vec![0.0; n];
                for k in 1..n {
                    let i = (k - 1) as f64;
                    mb[k] = mb[k - 1] * (al + i) / (al + be + i);
                    la[k] = la[k - 1] + 1.0 / (al + i) - 1.0 / (al + be + i);
                    lbt[k] = lbt[k - 1] - 1.0 / (al + be + i);
                }
                let w = iv.width();
                for e in 0..n {
                    // a^e = Σ_k C(e,k) lo^{e-k} w^k b^k
                    let (mut m, mut da, mut db) = (0.0, 0.0, 0.0);
                    let mut binom = 1.0;
                    for k in 0..=e {
                        let c = binom * iv.lo.powi((e - k) as i32) * w.powi(k as i32);
                        m += c * mb[k];
                        da += c * mb[k] * la[k];
                        db += c * mb[k] * lbt[k];
                        binom = binom * (e - k) as f64 / (k + 1) as f64;
                    }
                    out[e] = m;
                    if let Some(dh) = dh.as_deref_mut() {
                        dh[2 * e] = da;
                        dh[2 * e + 1] = db;
                    }
                }
            }
            Family::TanhGaussian => {
                let [mu, sigma] = heads;
                let (mid, half) = (iv.mid(), iv.half_width());
                out.fill(0.0);
                if let Some(dh) = dh.as_deref_mut() {
                    dh.fill(0.0);
                }
                for (&z, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    let t = (mu + sigma * z).tanh();
                    let a = mid + half * t;
                    let da = half * (1.0 - t * t);
                    let mut pow = 1.0; // a^e
                    let mut pow_m1 = 0.0; // e · a^{e-1}
                    for e in 0..n {
                        out[e] += wt * pow;
                        if let Some(dh) = dh.as_deref_mut() {
                            dh[2 * e] += wt * pow_m1 * da;
                            dh[2 * e + 1] += wt * pow_m1 * da * z;
                        }
                        pow_m1 = (e + 1) as f64 * pow;
                        pow *= a;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gauss_legendre_rule;
    use crate::rng::rng_from_seed;

    fn class(kind: PolicyKind) -> PolicyClass {
        PolicyClass::new(kind, 1, ActionInterval::default()).unwrap()
    }

    /// ζ for BetaLinear giving softplus(ζ₁ᵀx) = α, softplus(ζ₂ᵀx) = β at any o.
    fn beta_zeta(al: f64, be: f64) -> Vec<f64> {
        vec![softplus_inv(al), 0.0, softplus_inv(be), 0.0]
    }

    #[test]
    fn uniform_beta_density() {
        let c = class(PolicyKind::BetaLinear);
        let z = beta_zeta(1.0, 1.0);
        for a in [-0.99, -0.3, 0.0, 0.7] {
            assert!((c.density(&z, &[0.4], a).unwrap().value - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_two_two_at_center() {
        let c = class(PolicyKind::BetaLinear);
        let d = c.density(&beta_zeta(2.0, 2.0), &[0.0], 0.0).unwrap();
        assert!((d.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn gaussian_boundary_is_clamped() {
        let c = class(PolicyKind::GaussianLinear);
        let d = c.density(&[0.0; 4], &[0.0], 1.0).unwrap();
        assert!(d.clamped && d.value.is_finite());
        assert!(matches!(c.density(&[0.0; 4], &[0.0], 1.5), Err(Error::Domain(_))));
        assert!(!c.density(&[0.0; 4], &[0.0], 0.2).unwrap().clamped);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(class(PolicyKind::BetaLinear).n_params(), 4);
        assert_eq!(class(PolicyKind::BetaExpit).n_params(), 6);
        assert_eq!(class(PolicyKind::GaussianMlp).n_params(), 32 + 32 + 64 + 2);
        let c = PolicyClass::new(PolicyKind::BetaMlp, 3, ActionInterval::default()).unwrap();
        let lay = c.layout();
        assert_eq!(lay.last().map(|s| s.offset + s.len), Some(c.n_params()));
    }

    #[test]
    fn uniform_sampler_mean() {
        let c = class(PolicyKind::BetaLinear);
        let z = beta_zeta(1.0, 1.0);
        let mut rng = rng_from_seed(9);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| c.sample(&z, &[0.0], &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (1.0 / 3.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se);
    }

    #[test]
    fn saturated_gaussian_concentrates() {
        let c = class(PolicyKind::GaussianLinear);
        let z = [5.0, 0.0, softplus_inv(0.3), 0.0];
        let mut rng = rng_from_seed(2);
        let near = (0..1000).filter(|_| c.sample(&z, &[0.0], &mut rng) > 0.99).count();
        assert!(near > 950);
    }

    #[test]
    fn legendre_normalization_for_smooth_densities() {
        let c = class(PolicyKind::BetaLinear);
        let rule = gauss_legendre_rule(41, (-1.0, 1.0)).unwrap();
        let z = beta_zeta(3.0, 4.0);
        let total = rule.integrate(|a| c.density(&z, &[0.3], a).unwrap().value);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn moments_match_sampling_moments() {
        let rule = NormalRule::new(40).unwrap();
        for kind in [PolicyKind::BetaLinear, PolicyKind::GaussianLinear] {
            let c = class(kind);
            let z = [0.3, -0.2, 0.1, 0.4];
            let mut m = [0.0; 3];
            c.action_moments(&z, &[0.5], &rule, &mut m);
            let mut rng = rng_from_seed(1);
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| c.sample(&z, &[0.5], &mut rng)).collect();
            let m1 = xs.iter().sum::<f64>() / n as f64;
            let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            assert!((m[0] - 1.0).abs() < 1e-12);
            assert!((m[1] - m1).abs() < 0.01, "{kind:?} {} {m1}", m[1]);
            assert!((m[2] - m2).abs() < 0.01, "{kind:?} {} {m2}", m[2]);
        }
    }

    #[test]
    fn expit_projection() {
        let c = class(PolicyKind::BetaExpit);
        let mut z = vec![25.0, 0.0, 0.0, -3.0, 0.0, 0.0];
        c.project(&mut z);
        assert_eq!(z[0], EXPIT_CAP);
        assert_eq!(z[3], 0.0);
        assert!(c.check_params(&z).is_ok());
        assert!(c.check_params(&[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).is_err());
    }
}
