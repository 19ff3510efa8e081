//! Off-policy actor-critic training: SAC with a fixed temperature (including
//! the `alpha = 0` variant) and TD3 with or without target smoothing.
//!
//! Actions are handled in unit space `[-1, 1]` per dimension; tasks map them
//! to their own ranges. Critics see `(state, unit action)` stacked.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::demand::DemandScenario;
use crate::env::{self, project_action, EnvState, InventoryEnv, Policy, RewardMode};
use crate::nn::{column, vstack, Adam, Mlp};
use crate::seed::{Rng as SeedRng, SeedStream};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Pre-tanh values are clamped to this magnitude inside the log-density
/// correction term.
pub const PRE_TANH_CLAMP: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

// ---------------------------------------------------------------------------
// Replay buffer

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

/// A sampled minibatch, one transition per column.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub rewards: Vec<f64>,
    pub next_states: DMatrix<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let ns = ts[0].state.len();
        let na = ts[0].action.len();
        let b = ts.len();
        Self {
            states: DMatrix::from_fn(ns, b, |i, j| ts[j].state[i]),
            actions: DMatrix::from_fn(na, b, |i, j| ts[j].action[i]),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states: DMatrix::from_fn(ns, b, |i, j| ts[j].next_state[i]),
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }

    fn dump(&self) -> String {
        let mut s = String::new();
        for j in 0..self.len() {
            s.push_str(&format!(
                "\n  s={:?} a={:?} r={} s'={:?} done={}",
                self.states.column(j).as_slice(),
                self.actions.column(j).as_slice(),
                self.rewards[j],
                self.next_states.column(j).as_slice(),
                self.dones[j]
            ));
        }
        s
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be > 0");
        Self {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.data.is_empty(), "sampling from an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.data.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch {
        let idx = self.sample_indices(n, rng);
        let ts: Vec<&Transition> = idx.iter().map(|&i| &self.data[i]).collect();
        Batch::from_transitions(&ts)
    }
}

// ---------------------------------------------------------------------------
// Actor and critics

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorHead {
    /// Raw network output.
    Linear,
    /// `tanh` of the output.
    Tanh,
    /// Outputs `[mean; log_std]`; actions are `tanh(mean + std * eps)`.
    TanhGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    pub head: ActorHead,
}

/// Reparameterized tanh-Gaussian sample for a batch.
#[derive(Debug, Clone)]
pub struct GaussianSample {
    /// Squashed actions, `act_dim x batch`.
    pub actions: DMatrix<f64>,
    /// `log pi(a|s)` per sample, including the tanh correction.
    pub log_probs: Vec<f64>,
    pre_tanh: DMatrix<f64>,
    log_std: DMatrix<f64>,
    std_clamped: DMatrix<bool>,
}

/// `tanh` of the clamped pre-activation; strictly inside (-1, 1).
pub fn squash(x: f64) -> f64 {
    x.clamp(-PRE_TANH_CLAMP, PRE_TANH_CLAMP).tanh()
}

/// Derivative of [`squash`] given its output `y` and input `x`.
fn d_squash(x: f64, y: f64) -> f64 {
    if x.abs() >= PRE_TANH_CLAMP {
        0.0
    } else {
        1.0 - y * y
    }
}

fn log_one_minus_tanh_sq(x: f64) -> f64 {
    let x = x.clamp(-PRE_TANH_CLAMP, PRE_TANH_CLAMP);
    // log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x))
    let m = -2.0 * x;
    let softplus = if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    };
    2.0 * (std::f64::consts::LN_2 - x - softplus)
}

fn d_log_one_minus_tanh_sq(x: f64) -> f64 {
    if x.abs() >= PRE_TANH_CLAMP {
        0.0
    } else {
        -2.0 * x.tanh()
    }
}

impl Actor {
    /// Builds an actor for `obs_dim -> act_dim` with the given hidden sizes.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        head: ActorHead,
        rng: &mut R,
    ) -> Result<Self> {
        let out = match head {
            ActorHead::TanhGaussian => 2 * act_dim,
            _ => act_dim,
        };
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        Ok(Self {
            net: Mlp::new(&sizes, rng)?,
            head,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.layout().input_dim()
    }

    pub fn act_dim(&self) -> usize {
        match self.head {
            ActorHead::TanhGaussian => self.net.layout().output_dim() / 2,
            _ => self.net.layout().output_dim(),
        }
    }

    /// Deterministic action: the (squashed) mean.
    pub fn mean_action(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let out = self.net.forward_batch(states)?;
        Ok(match self.head {
            ActorHead::Linear => out,
            ActorHead::Tanh => out.map(squash),
            ActorHead::TanhGaussian => out.rows(0, self.act_dim()).map(squash),
        })
    }

    /// Gaussian sample with standard-normal `noise` (`act_dim x batch`).
    pub fn sample(&self, states: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<GaussianSample> {
        let out = self.net.forward_batch(states)?;
        self.sample_from_output(&out, noise)
    }

    fn sample_from_output(&self, out: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<GaussianSample> {
        if self.head != ActorHead::TanhGaussian {
            return Err(Error::Shape("stochastic sampling needs a tanh-Gaussian actor".into()));
        }
        let a = self.act_dim();
        let b = out.ncols();
        if noise.shape() != (a, b) {
            return Err(Error::Shape(format!(
                "noise is {:?}, expected ({a}, {b})",
                noise.shape()
            )));
        }
        let mean = out.rows(0, a);
        let raw_ls = out.rows(a, a);
        let log_std = raw_ls.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let std_clamped = raw_ls.map(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let pre_tanh = DMatrix::from_fn(a, b, |i, j| mean[(i, j)] + log_std[(i, j)].exp() * noise[(i, j)]);
        let actions = pre_tanh.map(squash);
        let log_probs = (0..b)
            .map(|j| {
                (0..a)
                    .map(|i| {
                        let e = noise[(i, j)];
                        -0.5 * e * e - log_std[(i, j)] - HALF_LN_2PI - log_one_minus_tanh_sq(pre_tanh[(i, j)])
                    })
                    .sum()
            })
            .collect();
        Ok(GaussianSample {
            actions,
            log_probs,
            pre_tanh,
            log_std,
            std_clamped,
        })
    }
}

/// Action-value function over a batch of (state, action) pairs.
pub trait QFunction: Sync {
    fn q(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<Vec<f64>>;

    /// Values and their gradient with respect to the actions.
    fn q_and_action_grad(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)>;
}

/// MLP critic on stacked `[state; action]` inputs with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim + act_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::new(&sizes, rng)?,
        })
    }

    /// Squared-error regression step towards `targets`; returns the loss
    /// `mean (Q - y)^2` and the parameter gradient.
    pub fn regression_grad(
        &self,
        states: &DMatrix<f64>,
        actions: &DMatrix<f64>,
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let x = vstack(states, actions);
        let tr = self.net.forward_trace(&x)?;
        let b = targets.len() as f64;
        let mut loss = 0.0;
        let d = DMatrix::from_fn(1, targets.len(), |_, j| {
            let r = tr.output[(0, j)] - targets[j];
            loss += r * r;
            2.0 * r / b
        });
        let (g, _) = self.net.backward(&tr, &d)?;
        Ok((loss / b, g))
    }
}

impl QFunction for Critic {
    fn q(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward_batch(&vstack(states, actions))?.as_slice().to_vec())
    }

    fn q_and_action_grad(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let tr = self.net.forward_trace(&vstack(states, actions))?;
        let ones = DMatrix::from_element(1, states.ncols(), 1.0);
        let dx = self
            .net
            .layout()
            .backward_input(&self.net.params().values, &tr, &ones)?;
        let grad = dx.rows(states.nrows(), actions.nrows()).into_owned();
        Ok((tr.output.as_slice().to_vec(), grad))
    }
}

/// Elementwise minimum of two critics, with the action gradient of whichever
/// attains the minimum for each sample (ties go to the first).
pub fn min_q_and_grad(
    q1: &dyn QFunction,
    q2: &dyn QFunction,
    states: &DMatrix<f64>,
    actions: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (v1, g1) = q1.q_and_action_grad(states, actions)?;
    let (v2, g2) = q2.q_and_action_grad(states, actions)?;
    let mut g = g1;
    let v = v1
        .iter()
        .zip(&v2)
        .enumerate()
        .map(|(j, (&a, &b))| {
            if b < a {
                g.set_column(j, &g2.column(j));
                b
            } else {
                a
            }
        })
        .collect();
    Ok((v, g))
}

// ---------------------------------------------------------------------------
// Objectives

/// Value and parameter gradient of the SAC actor objective on a batch.
#[derive(Debug, Clone)]
pub struct ActorObjective {
    /// `entropy_term - q_term`.
    pub loss: f64,
    /// `alpha * mean log pi`; exactly 0 when `alpha == 0`.
    pub entropy_term: f64,
    /// `mean min(Q1, Q2)` at the sampled actions.
    pub q_term: f64,
    pub mean_log_prob: f64,
    pub grad: Vec<f64>,
    pub actions: DMatrix<f64>,
}

/// `E[alpha * log pi(a|s) - min(Q1, Q2)(s, a)]` with `a = tanh(mu + std * noise)`.
/// The noise matrix is supplied by the caller so the same draw can be reused.
pub fn sac_actor_objective(
    actor: &Actor,
    states: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    q1: &dyn QFunction,
    q2: &dyn QFunction,
    alpha: f64,
    with_grad: bool,
) -> Result<ActorObjective> {
    if states.ncols() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let tr = actor.net.forward_trace(states)?;
    let s = actor.sample_from_output(&tr.output, noise)?;
    let b = states.ncols();
    let bf = b as f64;
    let mean_log_prob = s.log_probs.iter().sum::<f64>() / bf;
    let entropy_term = if alpha == 0.0 { 0.0 } else { alpha * mean_log_prob };
    let (qv, dq) = if with_grad {
        min_q_and_grad(q1, q2, states, &s.actions)?
    } else {
        let v1 = q1.q(states, &s.actions)?;
        let v2 = q2.q(states, &s.actions)?;
        let v = v1.iter().zip(&v2).map(|(a, b)| a.min(*b)).collect();
        (v, DMatrix::zeros(0, 0))
    };
    let q_term = qv.iter().sum::<f64>() / bf;
    let loss = entropy_term - q_term;
    let grad = if with_grad {
        let a = actor.act_dim();
        let mut d_out = DMatrix::zeros(2 * a, b);
        for j in 0..b {
            for i in 0..a {
                let x = s.pre_tanh[(i, j)];
                let y = s.actions[(i, j)];
                let dx = -alpha * d_log_one_minus_tanh_sq(x) - dq[(i, j)] * d_squash(x, y);
                d_out[(i, j)] = dx / bf;
                if !s.std_clamped[(i, j)] {
                    let sig_eps = s.log_std[(i, j)].exp() * noise[(i, j)];
                    d_out[(a + i, j)] = (-alpha + dx * sig_eps) / bf;
                }
            }
        }
        actor.net.backward(&tr, &d_out)?.0
    } else {
        Vec::new()
    };
    Ok(ActorObjective {
        loss,
        entropy_term,
        q_term,
        mean_log_prob,
        grad,
        actions: s.actions,
    })
}

/// `-mean Q(s, pi(s))` for a deterministic actor, with its gradient.
pub fn deterministic_actor_objective(
    actor: &Actor,
    states: &DMatrix<f64>,
    q: &dyn QFunction,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if actor.head == ActorHead::TanhGaussian {
        return Err(Error::Shape(
            "deterministic objective needs a Linear or Tanh actor".into(),
        ));
    }
    if states.ncols() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let bf = states.ncols() as f64;
    let tr = actor.net.forward_trace(states)?;
    let acts = match actor.head {
        ActorHead::Tanh => tr.output.map(squash),
        _ => tr.output.clone(),
    };
    if !with_grad {
        let v = q.q(states, &acts)?;
        return Ok((-v.iter().sum::<f64>() / bf, Vec::new()));
    }
    let (v, dq) = q.q_and_action_grad(states, &acts)?;
    let mut d_out = dq.map(|g| -g / bf);
    if actor.head == ActorHead::Tanh {
        for j in 0..d_out.ncols() {
            for i in 0..d_out.nrows() {
                d_out[(i, j)] *= d_squash(tr.output[(i, j)], acts[(i, j)]);
            }
        }
    }
    let (g, _) = actor.net.backward(&tr, &d_out)?;
    Ok((-v.iter().sum::<f64>() / bf, g))
}

/// Clipped Gaussian target-smoothing noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing {
    pub std: f64,
    pub clip: f64,
}

/// `clamp(std * z, -clip, clip)` for `z ~ N(0, 1)`, shaped `rows x cols`.
pub fn clipped_noise<R: Rng + ?Sized>(rows: usize, cols: usize, s: Smoothing, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        (s.std * z).clamp(-s.clip, s.clip)
    })
}

/// TD3 critic targets `r + gamma * (1 - done) * min(Q1', Q2')(s', a')` with
/// `a' = clamp(pi'(s') + eps, -1, 1)`; `eps` is clipped noise when
/// `smoothing` is set and zero otherwise.
pub fn td3_target<R: Rng + ?Sized>(
    batch: &Batch,
    target_q1: &dyn QFunction,
    target_q2: &dyn QFunction,
    target_actor: &Actor,
    smoothing: Option<Smoothing>,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut next = target_actor.mean_action(&batch.next_states)?;
    if let Some(s) = smoothing {
        let eps = clipped_noise(next.nrows(), next.ncols(), s, rng);
        next.zip_apply(&eps, |a, e| *a = (*a + e).clamp(-1.0, 1.0));
    }
    let v1 = target_q1.q(&batch.next_states, &next)?;
    let v2 = target_q2.q(&batch.next_states, &next)?;
    Ok((0..batch.len())
        .map(|j| {
            let boot = if batch.dones[j] { 0.0 } else { gamma * v1[j].min(v2[j]) };
            batch.rewards[j] + boot
        })
        .collect())
}

/// SAC critic targets `r + gamma * (1 - done) * (min(Q1', Q2')(s', a') - alpha log pi(a'|s'))`
/// with `a'` sampled from the current actor using `noise`.
#[allow(clippy::too_many_arguments)]
pub fn sac_target(
    batch: &Batch,
    target_q1: &dyn QFunction,
    target_q2: &dyn QFunction,
    actor: &Actor,
    noise: &DMatrix<f64>,
    alpha: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    let s = actor.sample(&batch.next_states, noise)?;
    let v1 = target_q1.q(&batch.next_states, &s.actions)?;
    let v2 = target_q2.q(&batch.next_states, &s.actions)?;
    Ok((0..batch.len())
        .map(|j| {
            let soft = v1[j].min(v2[j]) - if alpha == 0.0 { 0.0 } else { alpha * s.log_probs[j] };
            batch.rewards[j] + if batch.dones[j] { 0.0 } else { gamma * soft }
        })
        .collect())
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::Shape(format!(
            "soft update between {} and {} parameters",
            target.len(),
            online.len()
        )));
    }
    if tau == 1.0 {
        target.copy_from_slice(online);
    } else if tau != 0.0 {
        for (t, o) in target.iter_mut().zip(online) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

/// Monte-Carlo entropy estimate `-mean log pi` on a fixed batch and noise.
pub fn policy_entropy(actor: &Actor, states: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<f64> {
    let s = actor.sample(states, noise)?;
    Ok(-s.log_probs.iter().sum::<f64>() / s.log_probs.len() as f64)
}

/// Standard-normal matrix.
pub fn gaussian_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Sac,
    SacDeterministic,
    Td3,
    Td3NoSmooth,
}

impl Algorithm {
    pub fn is_sac(self) -> bool {
        matches!(self, Algorithm::Sac | Algorithm::SacDeterministic)
    }

    pub fn head(self) -> ActorHead {
        if self.is_sac() {
            ActorHead::TanhGaussian
        } else {
            ActorHead::Tanh
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sac => "sac",
            Algorithm::SacDeterministic => "sac-det",
            Algorithm::Td3 => "td3",
            Algorithm::Td3NoSmooth => "td3-nosmooth",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(Algorithm::Sac),
            "sac-det" | "sac-deterministic" => Ok(Algorithm::SacDeterministic),
            "td3" => Ok(Algorithm::Td3),
            "td3-nosmooth" => Ok(Algorithm::Td3NoSmooth),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (expected sac, sac-det, td3, td3-nosmooth)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    /// SAC temperature; forced to 0 for `sac-det`.
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    pub smoothing_std: f64,
    pub smoothing_clip: f64,
    /// TD3 behaviour noise std in unit action space.
    pub exploration_std: f64,
    pub batch_size: usize,
    /// Gradient updates per environment step after warm-up.
    pub updates_per_step: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Anneal both learning rates linearly to 0 over the training run.
    pub lr_decay: bool,
    pub buffer_capacity: usize,
    /// Uniformly random actions for this many initial steps.
    pub start_steps: usize,
    /// No gradient updates before this many steps.
    pub update_after: usize,
    /// 0 disables periodic evaluation.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: SeedStream,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sac,
            alpha: 0.2,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            smoothing_std: 0.2,
            smoothing_clip: 0.5,
            exploration_std: 0.1,
            batch_size: 256,
            updates_per_step: 1,
            hidden: vec![64, 64],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            lr_decay: false,
            buffer_capacity: 1_000_000,
            start_steps: 1000,
            update_after: 1000,
            eval_interval: 5000,
            eval_episodes: 5,
            seed: SeedStream::new(0),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be >= 1".into());
        }
        if !(self.smoothing_clip >= 0.0) || !(self.smoothing_std >= 0.0) || !(self.exploration_std >= 0.0) {
            return bad("noise stds and clip must be >= 0".into());
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.updates_per_step == 0 {
            return bad("batch_size, updates_per_step and buffer_capacity must be >= 1".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be > 0".into());
        }
        Ok(())
    }

    /// Temperature actually used by the objective.
    pub fn effective_alpha(&self) -> f64 {
        match self.algorithm {
            Algorithm::Sac => self.alpha,
            _ => 0.0,
        }
    }

    pub fn smoothing(&self) -> Option<Smoothing> {
        match self.algorithm {
            Algorithm::Td3 => Some(Smoothing {
                std: self.smoothing_std,
                clip: self.smoothing_clip,
            }),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Tasks

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// An episodic control problem with unit-space actions.
pub trait Task {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, seed: SeedStream) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Mean episode cost (lower is better) of the actor's mean action.
    fn evaluate(&self, actor: &Actor, episodes: usize, seed: SeedStream) -> Result<f64>;
}

/// Single-step bandit with reward `-(a - target)^2`.
#[derive(Debug, Clone)]
pub struct BanditTask {
    pub target: f64,
}

impl Task for BanditTask {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: SeedStream) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let d = action[0] - self.target;
        Ok(StepOutcome {
            obs: vec![1.0],
            reward: -d * d,
            done: true,
        })
    }

    fn evaluate(&self, actor: &Actor, _episodes: usize, _seed: SeedStream) -> Result<f64> {
        let a = actor.mean_action(&column(&[1.0]))?[(0, 0)];
        Ok((a - self.target).powi(2))
    }
}

/// Maps inventory states to network features and unit actions to shipments.
#[derive(Debug, Clone, PartialEq)]
pub struct InventoryEncoding {
    pub dims: env::Dims,
    pub horizon: usize,
    depot_scale: Vec<f64>,
    store_scale: f64,
    /// Upper end of the shipment range per action entry.
    pub action_max: Vec<f64>,
}

impl InventoryEncoding {
    /// Depot stock is scaled by its initial value, store stock by the largest
    /// mean demand, time by the horizon. Shipments span `[0, 2 * max_t mean]`
    /// per (product, store).
    pub fn new(env: &InventoryEnv, scenario: &DemandScenario) -> Self {
        let dims = env.dims();
        let depot_scale = env
            .initial
            .depot
            .iter()
            .map(|&q| if q > 0.0 { q } else { 1.0 })
            .collect();
        let m = scenario.max_mean();
        let store_scale = if m > 0.0 { m } else { 1.0 };
        let mut action_max = vec![0.0; dims.action_len()];
        for i in 0..dims.products {
            for r in 0..dims.stores {
                let peak = (0..scenario.horizon())
                    .map(|t| scenario.mean(i, r, t))
                    .fold(0.0, f64::max);
                for d in 0..dims.depots {
                    action_max[dims.a_idx(i, r, d)] = 2.0 * peak;
                }
            }
        }
        Self {
            dims,
            horizon: env.horizon(),
            depot_scale,
            store_scale,
            action_max,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.dims.depot_len() + self.dims.store_len() + 1
    }

    pub fn features(&self, s: &EnvState) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.obs_dim());
        f.extend(s.depot.iter().zip(&self.depot_scale).map(|(q, sc)| q / sc));
        f.extend(s.store.iter().map(|i| i / self.store_scale));
        f.push(s.t as f64 / self.horizon as f64);
        f
    }

    /// Affine map from `(-1, 1)` to `(0, action_max)`.
    pub fn to_raw(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.action_max)
            .map(|(y, m)| 0.5 * (y + 1.0) * m)
            .collect()
    }
}

/// How a trained actor picks actions when used as a fixed policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Mean,
    Stochastic,
}

/// Adapts an actor into an inventory [`Policy`].
pub struct ActorPolicy<'a> {
    pub actor: &'a Actor,
    pub encoding: &'a InventoryEncoding,
    pub mode: EvalMode,
    pub rng: SeedRng,
}

impl<'a> ActorPolicy<'a> {
    pub fn mean(actor: &'a Actor, encoding: &'a InventoryEncoding) -> Self {
        Self {
            actor,
            encoding,
            mode: EvalMode::Mean,
            rng: SeedStream::new(0).rng(),
        }
    }
}

impl Policy for ActorPolicy<'_> {
    fn act(&mut self, state: &EnvState) -> Vec<f64> {
        let x = column(&self.encoding.features(state));
        let unit = match (self.mode, self.actor.head) {
            (EvalMode::Stochastic, ActorHead::TanhGaussian) => {
                let noise = gaussian_noise(self.actor.act_dim(), 1, &mut self.rng);
                self.actor.sample(&x, &noise).expect("actor matches encoding").actions
            }
            _ => self.actor.mean_action(&x).expect("actor matches encoding"),
        };
        self.encoding.to_raw(unit.as_slice())
    }
}

/// The inventory environment as a training task.
pub struct InventoryTask {
    pub env: InventoryEnv,
    pub scenario: DemandScenario,
    pub encoding: InventoryEncoding,
    state: EnvState,
    rng: SeedRng,
    cost: f64,
    discount: f64,
}

impl InventoryTask {
    pub fn new(env: InventoryEnv, scenario: DemandScenario) -> Result<Self> {
        env.check_scenario(&scenario)?;
        let encoding = InventoryEncoding::new(&env, &scenario);
        let state = env.initial.clone();
        Ok(Self {
            env,
            scenario,
            encoding,
            state,
            rng: SeedStream::new(0).rng(),
            cost: 0.0,
            discount: 1.0,
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }
}

impl Task for InventoryTask {
    fn obs_dim(&self) -> usize {
        self.encoding.obs_dim()
    }

    fn act_dim(&self) -> usize {
        self.env.dims().action_len()
    }

    fn reset(&mut self, seed: SeedStream) -> Result<Vec<f64>> {
        self.state = self.env.initial.clone();
        self.rng = seed.rng();
        self.cost = 0.0;
        self.discount = 1.0;
        Ok(self.encoding.features(&self.state))
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let params = &self.env.params;
        let raw = self.encoding.to_raw(action);
        let shipped = project_action(params.dims, &raw, &self.state);
        let u = self.scenario.sample_period(self.state.t, &mut self.rng)?;
        let (next, c) = env::step(&self.state, &shipped, &u, params)?;
        self.cost += self.discount * c;
        self.discount *= params.gamma;
        self.state = next;
        let done = self.state.t == params.horizon;
        let mut period_cost = c;
        if done {
            let term = env::terminal_cost(&self.state, params)?;
            self.cost += self.discount * term;
            period_cost += term;
        }
        let reward = match self.env.reward.mode {
            RewardMode::Terminal if done => self.env.reward.episode_reward(self.cost),
            RewardMode::Terminal => 0.0,
            RewardMode::PerPeriod => -period_cost / self.env.reward.k,
        };
        Ok(StepOutcome {
            obs: self.encoding.features(&self.state),
            reward,
            done,
        })
    }

    fn evaluate(&self, actor: &Actor, episodes: usize, seed: SeedStream) -> Result<f64> {
        let mut pol = ActorPolicy::mean(actor, &self.encoding);
        let mut total = 0.0;
        for e in 0..episodes.max(1) as u64 {
            total += env::run_episode(&mut pol, &self.scenario, &self.env, seed.index(e))?.total_cost;
        }
        Ok(total / episodes.max(1) as f64)
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub eval_cost: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// `-mean log pi` of the last actor batch; NaN for deterministic actors.
    pub entropy: f64,
}

pub fn write_log<W: Write>(mut w: W, rows: &[LogRow]) -> Result<()> {
    writeln!(w, "step,eval_cost,actor_loss,critic_loss,entropy")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step, r.eval_cost, r.actor_loss, r.critic_loss, r.entropy
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
    pub log: Vec<LogRow>,
    pub critic_updates: usize,
    pub actor_updates: usize,
}

/// Networks, optimizers and targets of one agent.
pub struct Learner {
    pub config: AgentConfig,
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
    target_actor: Actor,
    target1: Critic,
    target2: Critic,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    rng: SeedRng,
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub last_actor_loss: f64,
    pub last_critic_loss: f64,
    pub last_entropy: f64,
}

impl Learner {
    pub fn new(obs_dim: usize, act_dim: usize, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut init = config.seed.derive("init").rng();
        let actor = Actor::new(obs_dim, act_dim, &config.hidden, config.algorithm.head(), &mut init)?;
        let critic1 = Critic::new(obs_dim, act_dim, &config.hidden, &mut init)?;
        let critic2 = Critic::new(obs_dim, act_dim, &config.hidden, &mut init)?;
        Ok(Self {
            actor_opt: Adam::new(actor.net.params().len(), config.actor_lr),
            critic1_opt: Adam::new(critic1.net.params().len(), config.critic_lr),
            critic2_opt: Adam::new(critic2.net.params().len(), config.critic_lr),
            target_actor: actor.clone(),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            rng: config.seed.derive("updates").rng(),
            config,
            critic_updates: 0,
            actor_updates: 0,
            last_actor_loss: f64::NAN,
            last_critic_loss: f64::NAN,
            last_entropy: f64::NAN,
        })
    }

    /// One gradient update (critics every call, actor subject to the policy
    /// delay for TD3 variants).
    pub fn update(&mut self, batch: &Batch, step: usize) -> Result<()> {
        let cfg = &self.config;
        let a = self.actor.act_dim();
        let b = batch.len();
        let targets = if cfg.algorithm.is_sac() {
            let noise = gaussian_noise(a, b, &mut self.rng);
            sac_target(
                batch,
                &self.target1,
                &self.target2,
                &self.actor,
                &noise,
                cfg.effective_alpha(),
                cfg.gamma,
            )?
        } else {
            td3_target(
                batch,
                &self.target1,
                &self.target2,
                &self.target_actor,
                cfg.smoothing(),
                cfg.gamma,
                &mut self.rng,
            )?
        };
        let (l1, g1) = self.critic1.regression_grad(&batch.states, &batch.actions, &targets)?;
        let (l2, g2) = self.critic2.regression_grad(&batch.states, &batch.actions, &targets)?;
        let critic_loss = 0.5 * (l1 + l2);
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("critic loss {critic_loss}; batch:{}", batch.dump()),
            });
        }
        self.critic1_opt.step(self.critic1.net.params_mut(), &g1);
        self.critic2_opt.step(self.critic2.net.params_mut(), &g2);
        self.critic_updates += 1;
        self.last_critic_loss = critic_loss;

        let tau = cfg.tau;
        if cfg.algorithm.is_sac() {
            let noise = gaussian_noise(a, b, &mut self.rng);
            let obj = sac_actor_objective(
                &self.actor,
                &batch.states,
                &noise,
                &self.critic1,
                &self.critic2,
                cfg.effective_alpha(),
                true,
            )?;
            if !obj.loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("actor loss {}; batch:{}", obj.loss, batch.dump()),
                });
            }
            self.actor_opt.step(self.actor.net.params_mut(), &obj.grad);
            self.actor_updates += 1;
            self.last_actor_loss = obj.loss;
            self.last_entropy = -obj.mean_log_prob;
            soft_update(self.target1.net.params_mut(), &self.critic1.net.params().values, tau)?;
            soft_update(self.target2.net.params_mut(), &self.critic2.net.params().values, tau)?;
        } else if self.critic_updates.is_multiple_of(cfg.policy_delay) {
            let (loss, g) = deterministic_actor_objective(&self.actor, &batch.states, &self.critic1, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("actor loss {loss}; batch:{}", batch.dump()),
                });
            }
            self.actor_opt.step(self.actor.net.params_mut(), &g);
            self.actor_updates += 1;
            self.last_actor_loss = loss;
            soft_update(self.target_actor.net.params_mut(), &self.actor.net.params().values, tau)?;
            soft_update(self.target1.net.params_mut(), &self.critic1.net.params().values, tau)?;
            soft_update(self.target2.net.params_mut(), &self.critic2.net.params().values, tau)?;
        }
        Ok(())
    }

    /// Scales both learning rates to `fraction` of their configured values.
    pub fn scale_learning_rates(&mut self, fraction: f64) {
        self.actor_opt.lr = self.config.actor_lr * fraction;
        self.critic1_opt.lr = self.config.critic_lr * fraction;
        self.critic2_opt.lr = self.config.critic_lr * fraction;
    }

    /// Behaviour action in unit space.
    pub fn explore<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let x = column(obs);
        let a = self.actor.act_dim();
        if self.config.algorithm.is_sac() {
            let noise = gaussian_noise(a, 1, rng);
            Ok(self.actor.sample(&x, &noise)?.actions.as_slice().to_vec())
        } else {
            let m = self.actor.mean_action(&x)?;
            Ok(m.iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    (v + self.config.exploration_std * z).clamp(-1.0, 1.0)
                })
                .collect())
        }
    }
}

/// Runs `steps` environment interactions with `updates_per_step` gradient
/// updates per step once warm-up is over. Episodes are reseeded from the `episodes` stream.
pub fn train<T: Task + ?Sized>(task: &mut T, config: &AgentConfig, steps: usize) -> Result<TrainOutput> {
    let mut learner = Learner::new(task.obs_dim(), task.act_dim(), config.clone())?;
    let episodes = config.seed.derive("episodes");
    let eval_seed = config.seed.derive("eval");
    let mut explore_rng = config.seed.derive("explore").rng();
    let mut sample_rng = config.seed.derive("replay").rng();
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut episode = 0u64;
    let mut obs = task.reset(episodes.index(episode))?;
    let mut log = Vec::new();
    for step in 0..steps {
        let action = if step < config.start_steps {
            (0..task.act_dim())
                .map(|_| explore_rng.random_range(-1.0..1.0))
                .collect()
        } else {
            learner.explore(&obs, &mut explore_rng)?
        };
        let out = task.step(&action)?;
        buffer.push(Transition {
            state: obs,
            action,
            reward: out.reward,
            next_state: out.obs.clone(),
            done: out.done,
        });
        obs = out.obs;
        if out.done {
            episode += 1;
            obs = task.reset(episodes.index(episode))?;
        }
        if step + 1 >= config.update_after && buffer.len() >= config.batch_size.min(buffer.capacity()) {
            if config.lr_decay {
                learner.scale_learning_rates(1.0 - step as f64 / steps as f64);
            }
            for _ in 0..config.updates_per_step {
                let batch = buffer.sample(config.batch_size, &mut sample_rng);
                learner.update(&batch, step)?;
            }
        }
        if config.eval_interval > 0 && (step + 1) % config.eval_interval == 0 {
            log.push(LogRow {
                step: step + 1,
                eval_cost: task.evaluate(&learner.actor, config.eval_episodes, eval_seed)?,
                actor_loss: learner.last_actor_loss,
                critic_loss: learner.last_critic_loss,
                entropy: learner.last_entropy,
            });
        }
    }
    Ok(TrainOutput {
        actor: learner.actor,
        critic1: learner.critic1,
        critic2: learner.critic2,
        log,
        critic_updates: learner.critic_updates,
        actor_updates: learner.actor_updates,
    })
}
