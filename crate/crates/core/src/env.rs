//! The synthetic confounded POMDP.
//!
//! ```text
//! S_0     ~ U(s0_low, s0_high)
//! O_t     = S_t + N(0, obs_sd²)
//! W_t     = c_ws S_t + c_wo O_t + N(0, proxy_sd²)
//! R_t     = A_t (r_o O_t + r_w W_t + r_s S_t) − pen A_t²
//! S_{t+1} = t_o O_t + t_a A_t + N(0, trans_sd²)
//! ```
//!
//! The behavior policy sees the latent `S_t`; target policies only see `O_t`.

use rand::Rng;
use rand_distr::{StandardNormal, Uniform, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{ActionInterval, Dataset, Schema, Step, Trajectory};
use crate::error::{Error, Result};
use crate::par;
use crate::policy::PolicyClass;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    pub s0_low: f64,
    pub s0_high: f64,
    pub obs_noise_sd: f64,
    pub proxy_state_coef: f64,
    pub proxy_obs_coef: f64,
    pub proxy_noise_sd: f64,
    pub reward_obs_coef: f64,
    pub reward_proxy_coef: f64,
    pub reward_state_coef: f64,
    pub action_penalty: f64,
    pub trans_obs_coef: f64,
    pub trans_action_coef: f64,
    pub trans_noise_sd: f64,
    pub action_interval: ActionInterval,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            s0_low: -0.5,
            s0_high: 0.5,
            obs_noise_sd: 1.0,
            proxy_state_coef: 1.0,
            proxy_obs_coef: -0.5,
            proxy_noise_sd: 0.3,
            reward_obs_coef: 1.0,
            reward_proxy_coef: -0.2,
            reward_state_coef: -0.8,
            action_penalty: 0.8,
            trans_obs_coef: 0.8,
            trans_action_coef: -0.3,
            trans_noise_sd: 0.1,
            action_interval: ActionInterval::default(),
        }
    }
}

impl EnvSpec {
    /// The same process with `O_t = S_t` exactly (no confounding).
    pub fn unconfounded() -> Self {
        Self {
            obs_noise_sd: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sds = [self.obs_noise_sd, self.proxy_noise_sd, self.trans_noise_sd];
        if sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("noise standard deviations must be finite and >= 0".into()));
        }
        if !(self.s0_low < self.s0_high) {
            return Err(Error::Config(format!(
                "initial-state bounds must satisfy s0_low < s0_high, got [{}, {}]",
                self.s0_low, self.s0_high
            )));
        }
        ActionInterval::new(self.action_interval.lo, self.action_interval.hi)?;
        Ok(())
    }

    pub fn schema(&self, gamma: f64) -> Schema {
        Schema {
            obs_dim: 1,
            proxy_dim: 1,
            action_interval: self.action_interval,
            gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorSpec {
    pub state_coef: f64,
    pub sd: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        Self {
            state_coef: -1.0 / 3.0,
            sd: 0.4,
            clip_lo: -1.0,
            clip_hi: 1.0,
        }
    }
}

impl BehaviorSpec {
    pub fn validate(&self, interval: ActionInterval) -> Result<()> {
        if !(self.sd > 0.0) {
            return Err(Error::Config(format!("behavior sd must be > 0, got {}", self.sd)));
        }
        if !(self.clip_lo < self.clip_hi && interval.contains(self.clip_lo) && interval.contains(self.clip_hi)) {
            return Err(Error::Config(format!(
                "behavior clip bounds [{}, {}] must lie inside the action interval",
                self.clip_lo, self.clip_hi
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.state_coef * s + self.sd * z).clamp(self.clip_lo, self.clip_hi)
    }
}

/// Who picks actions during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum ActionSampler<'a> {
    /// Latent-aware behavior policy; sees `S_t`.
    Behavior(&'a BehaviorSpec),
    /// Observation-only target policy.
    Target { class: &'a PolicyClass, zeta: &'a [f64] },
    /// Always the same action.
    Fixed(f64),
}

impl ActionSampler<'_> {
    fn act<R: Rng + ?Sized>(&self, s: f64, o: &[f64], rng: &mut R) -> f64 {
        match self {
            ActionSampler::Behavior(b) => b.sample(s, rng),
            ActionSampler::Target { class, zeta } => class.sample(zeta, o, rng),
            ActionSampler::Fixed(a) => *a,
        }
    }

    fn validate(&self, spec: &EnvSpec) -> Result<()> {
        match self {
            ActionSampler::Behavior(b) => b.validate(spec.action_interval),
            ActionSampler::Target { class, zeta } => {
                class.check_params(zeta)?;
                if class.obs_dim != 1 {
                    return Err(Error::Shape(format!(
                        "the environment emits scalar observations; policy expects dim {}",
                        class.obs_dim
                    )));
                }
                if class.action_interval != spec.action_interval {
                    return Err(Error::Config(
                        "policy and environment action intervals differ".into(),
                    ));
                }
                Ok(())
            }
            ActionSampler::Fixed(a) => {
                if spec.action_interval.contains(*a) {
                    Ok(())
                } else {
                    Err(Error::Validation(format!("fixed action {a} outside the action interval")))
                }
            }
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    // Always consume a draw so the stream layout does not depend on sd.
    let z: f64 = rng.sample(StandardNormal);
    sd * z
}

/// `(O, W)` emitted from latent state `s`.
pub fn observe<R: Rng + ?Sized>(spec: &EnvSpec, s: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let o = s + normal(rng, spec.obs_noise_sd);
    let w = spec.proxy_state_coef * s + spec.proxy_obs_coef * o + normal(rng, spec.proxy_noise_sd);
    (vec![o], vec![w])
}

pub fn env_reset<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> (f64, Vec<f64>, Vec<f64>) {
    let s = Uniform::new(spec.s0_low, spec.s0_high)
        .map(|u| u.sample(rng))
        .unwrap_or(spec.s0_low);
    let (o, w) = observe(spec, s, rng);
    (s, o, w)
}

pub fn reward(spec: &EnvSpec, s: f64, o: &[f64], w: &[f64], a: f64) -> f64 {
    a * (spec.reward_obs_coef * o[0] + spec.reward_proxy_coef * w[0] + spec.reward_state_coef * s)
        - spec.action_penalty * a * a
}

/// One transition; returns `(R_t, S_{t+1}, O_{t+1}, W_{t+1})`.
pub fn env_step<R: Rng + ?Sized>(
    spec: &EnvSpec,
    s: f64,
    o: &[f64],
    w: &[f64],
    a: f64,
    rng: &mut R,
) -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
    if !spec.action_interval.contains(a) {
        return Err(Error::Validation(format!(
            "action {a} outside [{}, {}]",
            spec.action_interval.lo, spec.action_interval.hi
        )));
    }
    let r = reward(spec, s, o, w, a);
    let s_next = spec.trans_obs_coef * o[0] + spec.trans_action_coef * a + normal(rng, spec.trans_noise_sd);
    let (o_next, w_next) = observe(spec, s_next, rng);
    Ok((r, s_next, o_next, w_next))
}

/// Simulates one trajectory with steps `0..=horizon` and its terminal pair.
fn simulate_one(
    spec: &EnvSpec,
    sampler: &ActionSampler<'_>,
    horizon: usize,
    seed: u64,
    index: usize,
) -> Result<(Trajectory, Vec<f64>)> {
    let mut rng = substream(seed, index as u64);
    let (mut s, mut o, mut w) = env_reset(spec, &mut rng);
    let mut steps = Vec::with_capacity(horizon + 1);
    let mut latents = Vec::with_capacity(horizon + 2);
    for _ in 0..=horizon {
        let a = sampler.act(s, &o, &mut rng);
        let (r, s2, o2, w2) = env_step(spec, s, &o, &w, a, &mut rng)?;
        latents.push(s);
        steps.push(Step {
            obs: std::mem::replace(&mut o, o2),
            proxy: std::mem::replace(&mut w, w2),
            action: a,
            reward: r,
        });
        s = s2;
    }
    latents.push(s);
    Ok((
        Trajectory {
            episode: index as u64,
            steps,
            terminal_obs: o,
            terminal_proxy: w,
        },
        latents,
    ))
}

/// `n` trajectories with actions at `t = 0..=T` plus the terminal
/// `(O_{T+1}, W_{T+1})`. Trajectory `i` uses its own random stream, so the
/// output does not depend on the worker count.
pub fn rollout(
    spec: &EnvSpec,
    sampler: ActionSampler<'_>,
    n: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    sampler.validate(spec)?;
    if n < 1 || horizon < 1 {
        return Err(Error::Config(format!("rollout needs n >= 1 and T >= 1, got n={n}, T={horizon}")));
    }
    let trajectories = par::map_range(n, |i| simulate_one(spec, &sampler, horizon, seed, i).map(|t| t.0))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(trajectories, spec.schema(gamma))
}

/// Fraction of actions sitting exactly on a clip bound.
pub fn clip_fraction(d: &Dataset, behavior: &BehaviorSpec) -> f64 {
    let total = d.n() * (d.horizon() + 1);
    let clipped = d
        .trajectories()
        .iter()
        .flat_map(|t| &t.steps)
        .filter(|s| s.action <= behavior.clip_lo || s.action >= behavior.clip_hi)
        .count();
    clipped as f64 / total as f64
}

/// Conservative per-step bound on `|R_t|`: 6-sigma noise ranges and the
/// action bounds propagated to the fixed point of the state recursion.
pub fn reward_bound(spec: &EnvSpec) -> Result<f64> {
    let k = 6.0;
    let a_max = spec.action_interval.lo.abs().max(spec.action_interval.hi.abs());
    let c = spec.trans_obs_coef.abs();
    if c >= 1.0 {
        return Err(Error::Config(format!(
            "state recursion is not contracting (|trans_obs_coef| = {c}); no finite reward bound"
        )));
    }
    let s0 = spec.s0_low.abs().max(spec.s0_high.abs());
    let drive = c * k * spec.obs_noise_sd + spec.trans_action_coef.abs() * a_max + k * spec.trans_noise_sd;
    let s_max = s0.max(drive / (1.0 - c));
    let o_max = s_max + k * spec.obs_noise_sd;
    let w_max = spec.proxy_state_coef.abs() * s_max + spec.proxy_obs_coef.abs() * o_max + k * spec.proxy_noise_sd;
    Ok(a_max
        * (spec.reward_obs_coef.abs() * o_max
            + spec.reward_proxy_coef.abs() * w_max
            + spec.reward_state_coef.abs() * s_max)
        + spec.action_penalty.abs() * a_max * a_max)
}

/// Smallest `H` with `γ^{H+1} R_bound / (1 − γ) <= tail_tol`.
pub fn oracle_horizon(gamma: f64, r_bound: f64, tail_tol: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount {gamma} outside [0, 1)")));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::Config(format!("tail tolerance must be > 0, got {tail_tol}")));
    }
    if gamma == 0.0 {
        return Ok(0);
    }
    let mut h = 0usize;
    while gamma.powi(h as i32 + 1) * r_bound / (1.0 - gamma) > tail_tol {
        h += 1;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub se: f64,
    pub horizon: usize,
    pub r_bound: f64,
    pub n_mc: usize,
}

/// Monte Carlo value of `sampler`: mean of `Σ_{t=0}^{H} γ^t R_t` over `n_mc`
/// fresh trajectories, with its standard error.
pub fn oracle_value(
    spec: &EnvSpec,
    sampler: ActionSampler<'_>,
    n_mc: usize,
    gamma: f64,
    tail_tol: f64,
    seed: u64,
) -> Result<OracleValue> {
    spec.validate()?;
    sampler.validate(spec)?;
    if n_mc < 2 {
        return Err(Error::Config("the oracle needs n_mc >= 2".into()));
    }
    let r_bound = reward_bound(spec)?;
    let horizon = oracle_horizon(gamma, r_bound, tail_tol)?;
    let returns = par::map_range(n_mc, |i| -> Result<f64> {
        let mut rng = substream(seed, i as u64);
        let (mut s, mut o, mut w) = env_reset(spec, &mut rng);
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..=horizon {
            let a = sampler.act(s, &o, &mut rng);
            let (r, s2, o2, w2) = env_step(spec, s, &o, &w, a, &mut rng)?;
            ret += disc * r;
            disc *= gamma;
            s = s2;
            o = o2;
            w = w2;
        }
        Ok(ret)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok(OracleValue {
        value: mean,
        se: (var / n).sqrt(),
        horizon,
        r_bound,
        n_mc,
    })
}

pub fn true_policy_value(
    spec: &EnvSpec,
    class: &PolicyClass,
    zeta: &[f64],
    n_mc: usize,
    gamma: f64,
    tail_tol: f64,
    seed: u64,
) -> Result<OracleValue> {
    oracle_value(spec, ActionSampler::Target { class, zeta }, n_mc, gamma, tail_tol, seed)
}
