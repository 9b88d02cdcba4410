//! Twin-delayed deterministic policy gradient agent.
//!
//! Actor and critics are ordinary [`NetworkSpec`] MLPs evaluated on the same
//! tape engine as the pruned models. Critics see `concat(s, a)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

use crate::autodiff::Tape;
use crate::model::{
    self, record, record_from, Activation, Checkpoint, CheckpointError, Differentiate, ForwardMode, InitScheme, Layer,
    Mask, ModelError, NetworkSpec, Parameters,
};
use crate::rl_env::{EnvError, Environment};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("episode {episode}: {source}")]
    Env { episode: usize, source: EnvError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid agent config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Td3Config {
    pub lr: f64,
    pub start_steps: usize,
    pub max_steps: usize,
    pub batch: usize,
    pub exploration: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    pub replay: usize,
    pub hidden: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            start_steps: 2_000,
            max_steps: 200_000,
            batch: 256,
            exploration: 0.1,
            gamma: 0.99,
            tau: 0.01,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            replay: 100_000,
            hidden: 256,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("learning rate must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch == 0 || self.policy_delay == 0 || self.replay == 0 || self.hidden == 0 {
            return bad("batch, policy delay, replay size and hidden width must be positive");
        }
        if self.exploration < 0.0 || self.policy_noise < 0.0 || self.noise_clip < 0.0 {
            return bad("noise scales must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next: Vec<f64>,
    pub done: bool,
}

/// Minibatch of transitions stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next: Tensor,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(items: &[Transition]) -> Self {
        let (ds, da) = (items[0].state.len(), items[0].action.len());
        Self {
            states: rows(items.iter().flat_map(|t| t.state.iter().copied()).collect(), ds),
            actions: rows(items.iter().flat_map(|t| t.action.iter().copied()).collect(), da),
            rewards: items.iter().map(|t| t.reward).collect(),
            next: rows(items.iter().flat_map(|t| t.next.iter().copied()).collect(), ds),
            done: items.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
///
/// Storage is flat and sized on the first push, so long runs do not keep
/// millions of small allocations alive between the large update temporaries.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    dims: (usize, usize),
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next: Vec<f64>,
    done: Vec<bool>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            dims: (0, 0),
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next: Vec::new(),
            done: Vec::new(),
            cursor: 0,
        }
    }

    /// # Panics
    /// If the state or action width differs from the first transition's.
    pub fn push(&mut self, t: Transition) {
        if self.rewards.is_empty() {
            let (ds, da) = (t.state.len(), t.action.len());
            self.dims = (ds, da);
            self.states.reserve_exact(self.capacity * ds);
            self.next.reserve_exact(self.capacity * ds);
            self.actions.reserve_exact(self.capacity * da);
            self.rewards.reserve_exact(self.capacity);
            self.done.reserve_exact(self.capacity);
        }
        let (ds, da) = self.dims;
        assert!(t.state.len() == ds && t.next.len() == ds && t.action.len() == da, "transition width changed");
        if self.rewards.len() < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.next.extend_from_slice(&t.next);
            self.rewards.push(t.reward);
            self.done.push(t.done);
        } else {
            let i = self.cursor;
            self.states[i * ds..(i + 1) * ds].copy_from_slice(&t.state);
            self.actions[i * da..(i + 1) * da].copy_from_slice(&t.action);
            self.next[i * ds..(i + 1) * ds].copy_from_slice(&t.next);
            self.rewards[i] = t.reward;
            self.done[i] = t.done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn get(&self, i: usize) -> Transition {
        let (ds, da) = self.dims;
        Transition {
            state: self.states[i * ds..(i + 1) * ds].to_vec(),
            action: self.actions[i * da..(i + 1) * da].to_vec(),
            reward: self.rewards[i],
            next: self.next[i * ds..(i + 1) * ds].to_vec(),
            done: self.done[i],
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Batch {
        let (ds, da) = self.dims;
        let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..self.len())).collect();
        let gather = |src: &[f64], w: usize| rows(picks.iter().flat_map(|&i| src[i * w..(i + 1) * w].iter().copied()).collect(), w);
        Batch {
            states: gather(&self.states, ds),
            actions: gather(&self.actions, da),
            rewards: picks.iter().map(|&i| self.rewards[i]).collect(),
            next: gather(&self.next, ds),
            done: picks.iter().map(|&i| self.done[i]).collect(),
        }
    }
}

/// Adaptive-moment optimizer over a network's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One step on `params` (weights then biases) with gradients in the same order.
    pub fn step(&mut self, params: &mut Parameters, gw: &[f64], gb: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let nw = params.weights.len();
        let values = params.weights.iter_mut().chain(params.biases.iter_mut());
        let grads = gw.iter().chain(gb);
        for (i, (p, g)) in values.zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        debug_assert_eq!(self.m.len(), nw + params.biases.len());
    }
}

/// `target ← τ·online + (1 − τ)·target`.
pub fn polyak(target: &mut Parameters, online: &Parameters, tau: f64) {
    let pairs = target
        .weights
        .iter_mut()
        .zip(&online.weights)
        .chain(target.biases.iter_mut().zip(&online.biases));
    for (t, o) in pairs {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

/// `y = r + γ(1 − done)·min(q1, q2)`.
pub fn td_target(reward: f64, q1: f64, q2: f64, done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

pub fn actor_spec(state_dim: usize, action_dim: usize, hidden: usize) -> NetworkSpec {
    let mut spec = NetworkSpec::mlp(&[state_dim], &[hidden, hidden], action_dim, Activation::Tanh);
    spec.layers.push(Layer::Tanh);
    spec
}

pub fn critic_spec(state_dim: usize, action_dim: usize, hidden: usize) -> NetworkSpec {
    NetworkSpec::mlp(&[state_dim + action_dim], &[hidden, hidden], 1, Activation::Tanh)
}

fn rows(data: Vec<f64>, width: usize) -> Tensor {
    Tensor::from_vec(&[data.len() / width, width], data)
}

fn eval(p: &Parameters, x: &Tensor) -> Result<Tensor, ModelError> {
    model::forward_with(p, &p.weights, x)
}

fn concat_rows(s: &Tensor, a: &Tensor) -> Tensor {
    let (n, ds, da) = (s.shape()[0], s.shape()[1], a.shape()[1]);
    let mut out = Vec::with_capacity(n * (ds + da));
    for i in 0..n {
        out.extend_from_slice(&s.data()[i * ds..(i + 1) * ds]);
        out.extend_from_slice(&a.data()[i * da..(i + 1) * da]);
    }
    Tensor::from_vec(&[n, ds + da], out)
}

fn flatten_grads(tape_grads: &mut crate::autodiff::Gradients, g: &model::Graph) -> (Vec<f64>, Vec<f64>) {
    let gw = g.weights.iter().flat_map(|&v| tape_grads.take(v).into_data()).collect();
    let gb = g.biases.iter().flat_map(|&v| tape_grads.take(v).into_data()).collect();
    (gw, gb)
}

const ALL: Differentiate = Differentiate { weights: true, biases: true, input: false };

/// Mean squared error of `critic(sa)` against `y`, with gradients.
pub fn critic_loss_grad(critic: &Parameters, sa: Tensor, y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), ModelError> {
    let mut tape = Tape::new();
    let g = record(&mut tape, critic.spec(), critic.layout(), &critic.weights, &critic.biases, sa, ForwardMode::Standard, ALL)?;
    let target = tape.constant(Tensor::from_vec(&[y.len(), 1], y.to_vec()));
    let diff = tape.sub(g.output, target)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean(sq);
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let (gw, gb) = flatten_grads(&mut grads, &g);
    Ok((value, gw, gb))
}

/// Gradient of `−mean Q(s, π(s))` with respect to the actor.
pub fn actor_loss_grad(
    actor: &Parameters,
    critic: &Parameters,
    states: Tensor,
) -> Result<(f64, Vec<f64>, Vec<f64>), ModelError> {
    let mut tape = Tape::new();
    let s = tape.constant(states.clone());
    let g = record(&mut tape, actor.spec(), actor.layout(), &actor.weights, &actor.biases, states, ForwardMode::Standard, ALL)?;
    let sa = tape.concat_cols(s, g.output).map_err(ModelError::from)?;
    let q = record_from(
        &mut tape,
        critic.spec(),
        critic.layout(),
        &critic.weights,
        &critic.biases,
        sa,
        ForwardMode::Standard,
        Differentiate::default(),
    )?;
    let mean = tape.mean(q.output);
    let loss = tape.scale(mean, -1.0);
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let (gw, gb) = flatten_grads(&mut grads, &g);
    Ok((value, gw, gb))
}

fn param_len(p: &Parameters) -> usize {
    p.weights.len() + p.biases.len()
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: Td3Config,
    pub actor: Parameters,
    pub actor_target: Parameters,
    pub critic1: Parameters,
    pub critic2: Parameters,
    pub critic1_target: Parameters,
    pub critic2_target: Parameters,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    updates: u64,
}

const ENTRIES: [&str; 6] = ["actor", "actor_target", "critic1", "critic2", "critic1_target", "critic2_target"];

impl Agent {
    pub fn new(state_dim: usize, action_dim: usize, cfg: Td3Config, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let a_spec = actor_spec(state_dim, action_dim, cfg.hidden);
        let c_spec = critic_spec(state_dim, action_dim, cfg.hidden);
        let init = |spec: &NetworkSpec, label: &str| Parameters::init_with(spec, seed::derive(seed, label), InitScheme::FanInUniform);
        let actor = init(&a_spec, "actor")?;
        let critic1 = init(&c_spec, "critic1")?;
        let critic2 = init(&c_spec, "critic2")?;
        Ok(Self::from_nets(cfg, actor.clone(), actor, critic1.clone(), critic2.clone(), critic1, critic2))
    }

    fn from_nets(
        cfg: Td3Config,
        actor: Parameters,
        actor_target: Parameters,
        critic1: Parameters,
        critic2: Parameters,
        critic1_target: Parameters,
        critic2_target: Parameters,
    ) -> Self {
        Self {
            actor_opt: Adam::new(cfg.lr, param_len(&actor)),
            critic1_opt: Adam::new(cfg.lr, param_len(&critic1)),
            critic2_opt: Adam::new(cfg.lr, param_len(&critic2)),
            cfg,
            actor,
            actor_target,
            critic1,
            critic2,
            critic1_target,
            critic2_target,
            updates: 0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.actor.spec().input[0]
    }

    pub fn action_dim(&self) -> usize {
        self.actor.spec().classes
    }

    /// Update calls performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Deterministic policy output, in `(−1, 1)`.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(eval(&self.actor, &rows(state.to_vec(), state.len()))?.into_data())
    }

    /// Policy output plus `N(0, σ²)` noise, clipped to `[−1, 1]`.
    pub fn select_action(&self, state: &[f64], sigma: f64, rng: &mut impl Rng) -> Result<Vec<f64>, ModelError> {
        let mut a = self.act(state)?;
        for v in &mut a {
            let z: f64 = StandardNormal.sample(rng);
            *v = (*v + sigma * z).clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    /// Smoothed twin-minimum bootstrap targets for a batch.
    pub fn critic_targets(&self, batch: &Batch, rng: &mut impl Rng) -> Result<Vec<f64>, ModelError> {
        let next = &batch.next;
        let mut a = eval(&self.actor_target, next)?;
        let c = self.cfg.noise_clip;
        for v in a.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = (*v + (self.cfg.policy_noise * z).clamp(-c, c)).clamp(-1.0, 1.0);
        }
        let sa = concat_rows(next, &a);
        let q1 = eval(&self.critic1_target, &sa)?;
        let q2 = eval(&self.critic2_target, &sa)?;
        Ok((0..batch.len())
            .map(|i| td_target(batch.rewards[i], q1.data()[i], q2.data()[i], batch.done[i], self.cfg.gamma))
            .collect())
    }

    /// One TD3 update: critics every call, actor and targets every `policy_delay` calls.
    ///
    /// Returns the mean critic loss.
    pub fn update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<f64, ModelError> {
        let y = self.critic_targets(batch, rng)?;
        let states = batch.states.clone();
        let sa = concat_rows(&states, &batch.actions);
        let (l1, gw, gb) = critic_loss_grad(&self.critic1, sa.clone(), &y)?;
        self.critic1_opt.step(&mut self.critic1, &gw, &gb);
        let (l2, gw, gb) = critic_loss_grad(&self.critic2, sa, &y)?;
        self.critic2_opt.step(&mut self.critic2, &gw, &gb);
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.policy_delay as u64) {
            let (_, gw, gb) = actor_loss_grad(&self.actor, &self.critic1, states)?;
            self.actor_opt.step(&mut self.actor, &gw, &gb);
            let tau = self.cfg.tau;
            polyak(&mut self.critic1_target, &self.critic1, tau);
            polyak(&mut self.critic2_target, &self.critic2, tau);
            polyak(&mut self.actor_target, &self.actor, tau);
        }
        Ok(0.5 * (l1 + l2))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (name, p) in ENTRIES.iter().zip(self.nets()) {
            ck.push(name, p.clone(), Mask::ones(p));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: Td3Config) -> Result<Self, AgentError> {
        cfg.validate()?;
        let get = |name: &str| ck.get(name).map(|e| e.params.clone());
        Ok(Self::from_nets(
            cfg,
            get(ENTRIES[0])?,
            get(ENTRIES[1])?,
            get(ENTRIES[2])?,
            get(ENTRIES[3])?,
            get(ENTRIES[4])?,
            get(ENTRIES[5])?,
        ))
    }

    fn nets(&self) -> [&Parameters; 6] {
        [&self.actor, &self.actor_target, &self.critic1, &self.critic2, &self.critic1_target, &self.critic2_target]
    }
}

/// Summary of one training episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Environment steps taken so far, including this episode.
    pub steps: usize,
    pub length: usize,
    pub total_reward: f64,
    pub mean_reward: f64,
    pub r1_mean: f64,
    pub r2_mean: f64,
    pub r3_mean: f64,
}

pub fn write_curve(curve: &[EpisodeStats], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in curve {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct Accum {
    length: usize,
    total: f64,
    terms: [f64; 3],
}

impl Accum {
    fn finish(&mut self, episode: usize, steps: usize) -> EpisodeStats {
        let n = self.length.max(1) as f64;
        let s = EpisodeStats {
            episode,
            steps,
            length: self.length,
            total_reward: self.total,
            mean_reward: self.total / n,
            r1_mean: self.terms[0] / n,
            r2_mean: self.terms[1] / n,
            r3_mean: self.terms[2] / n,
        };
        *self = Accum::default();
        s
    }
}

pub fn episode_seed(root: u64, episode: usize) -> u64 {
    seed::derive(root, &format!("episode/{episode}"))
}

/// Trains an agent for `cfg.max_steps` environment steps.
///
/// Curriculum progress passed to `reset` is `steps / max_steps`. Actions are
/// uniform in `[−1, 1]` for the first `start_steps` steps; updates start once
/// those are collected.
pub fn train_agent<E: Environment>(env: &mut E, cfg: &Td3Config, seed: u64) -> Result<(Agent, Vec<EpisodeStats>), AgentError> {
    let mut agent = Agent::new(env.state_dim(), env.action_dim(), cfg.clone(), seed::derive(seed, "td3/init"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "td3/rng"));
    let mut buffer = ReplayBuffer::new(cfg.replay);
    let mut curve = Vec::new();
    let mut episode = 0;
    let env_err = |episode| move |source| AgentError::Env { episode, source };
    let mut state = env.reset(episode_seed(seed, 0), 0.0).map_err(env_err(0))?;
    let mut acc = Accum::default();
    for step in 0..cfg.max_steps {
        let action: Vec<f64> = if step < cfg.start_steps {
            (0..env.action_dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect()
        } else {
            agent.select_action(&state, cfg.exploration, &mut rng)?
        };
        let out = env.step(&action).map_err(env_err(episode))?;
        acc.length += 1;
        acc.total += out.reward;
        for (a, t) in acc.terms.iter_mut().zip(out.terms) {
            *a += t;
        }
        buffer.push(Transition {
            state: std::mem::take(&mut state),
            action,
            reward: out.reward,
            next: out.state.clone(),
            done: out.done,
        });
        if step >= cfg.start_steps && buffer.len() >= cfg.batch {
            let batch = buffer.sample(&mut rng, cfg.batch);
            agent.update(&batch, &mut rng)?;
        }
        if out.done {
            curve.push(acc.finish(episode, step + 1));
            episode += 1;
            let progress = (step + 1) as f64 / cfg.max_steps as f64;
            state = env.reset(episode_seed(seed, episode), progress).map_err(env_err(episode))?;
        } else {
            state = out.state;
        }
    }
    Ok((agent, curve))
}

/// Episode returns of `policy` over `episodes` episodes with seeds derived from `seed`.
pub fn evaluate_policy<E: Environment>(
    env: &mut E,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>, ModelError>,
    episodes: usize,
    seed: u64,
    progress: f64,
) -> Result<Vec<f64>, AgentError> {
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let err = |source| AgentError::Env { episode: ep, source };
        let mut state = env.reset(episode_seed(seed, ep), progress).map_err(err)?;
        let mut total = 0.0;
        loop {
            let a = policy(&state)?;
            let out = env.step(&a).map_err(err)?;
            total += out.reward;
            if out.done {
                break;
            }
            state = out.state;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Uniform-random policy over `[−1, 1]^dim`.
pub fn random_policy(dim: usize, seed: u64) -> impl FnMut(&[f64]) -> Result<Vec<f64>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |_| Ok((0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
}

/// Difference of means `a − b` and its Welch standard error.
pub fn welch(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, var / n)
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    (ma - mb, (va + vb).sqrt())
}

/// A tiny contextual task: `r = −Σ(a_i − s_i/2)²`, `s ~ U[−1,1]^dim`, fixed-length episodes.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub dim: usize,
    pub length: usize,
    rng: ChaCha8Rng,
    state: Vec<f64>,
    t: usize,
}

impl ToyEnv {
    pub fn new(dim: usize, length: usize) -> Self {
        Self { dim, length, rng: ChaCha8Rng::seed_from_u64(0), state: vec![0.0; dim], t: 0 }
    }

    fn draw(&mut self) {
        let rng = &mut self.rng;
        self.state = (0..self.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    }
}

impl Environment for ToyEnv {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn action_dim(&self) -> usize {
        self.dim
    }

    fn reset(&mut self, seed: u64, _progress: f64) -> Result<Vec<f64>, EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.draw();
        Ok(self.state.clone())
    }

    fn step(&mut self, action: &[f64]) -> Result<crate::rl_env::Step, EnvError> {
        let reward = -self.state.iter().zip(action).map(|(s, a)| (a - s / 2.0).powi(2)).sum::<f64>();
        self.t += 1;
        self.draw();
        Ok(crate::rl_env::Step { state: self.state.clone(), reward, done: self.t >= self.length, terms: [0.0; 3] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Td3Config {
        Td3Config { hidden: 16, batch: 8, start_steps: 0, ..Td3Config::default() }
    }

    fn transitions(n: usize, ds: usize, da: usize, seed: u64) -> Vec<Transition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Transition {
                state: (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: (0..da).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                reward: -rng.gen_range(0.0..1.0),
                next: (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                done: i % 3 == 0,
            })
            .collect()
    }

    #[test]
    fn target_arithmetic() {
        assert!((td_target(0.0, -2.0, -5.0, false, 0.99) + 4.95).abs() < 1e-12);
        assert_eq!(td_target(-1.5, 3.0, 4.0, true, 0.99), -1.5);
        assert_eq!(td_target(-1.5, 3.0, 4.0, false, 0.0), -1.5);
    }

    #[test]
    fn polyak_is_convex_combination() {
        let spec = critic_spec(1, 1, 2);
        let online = Parameters::from_parts(&spec, vec![1.0; 10], vec![1.0; 5]).unwrap();
        let mut target = Parameters::from_parts(&spec, vec![0.0; 10], vec![0.0; 5]).unwrap();
        polyak(&mut target, &online, 0.01);
        assert!(target.weights.iter().chain(&target.biases).all(|&v| v == 0.01));
    }

    #[test]
    fn actions_bounded_and_deterministic() {
        let agent = Agent::new(7, 3, small(), 1).unwrap();
        let s = [0.3, -2.0, 5.0, 1.0, 0.0, 0.5, 0.9];
        let a = agent.act(&s).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, agent.act(&s).unwrap());
        assert!(a.iter().all(|v| v.abs() < 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let noisy = agent.select_action(&s, 5.0, &mut rng).unwrap();
            assert!(noisy.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn twin_critics_start_different() {
        let agent = Agent::new(7, 3, small(), 1).unwrap();
        let probe = rows(vec![0.1; 10], 10);
        let q1 = eval(&agent.critic1, &probe).unwrap();
        let q2 = eval(&agent.critic2, &probe).unwrap();
        assert_ne!(q1, q2);
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for (i, t) in transitions(5, 1, 1, 0).into_iter().enumerate() {
            b.push(Transition { reward: -(i as f64), ..t });
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| b.get(i).reward).collect();
        assert_eq!(rewards, vec![-3.0, -4.0, -2.0]);
    }

    #[test]
    fn sampled_rows_match_stored_transitions() {
        let data = transitions(6, 3, 2, 4);
        let mut b = ReplayBuffer::new(10);
        data.iter().cloned().for_each(|t| b.push(t));
        let batch = b.sample(&mut ChaCha8Rng::seed_from_u64(1), 20);
        for r in 0..batch.len() {
            let i = data.iter().position(|t| t.reward == batch.rewards[r]).unwrap();
            assert_eq!(Batch::from_transitions(&data[i..=i]).states.data(), &batch.states.data()[r * 3..r * 3 + 3]);
            assert_eq!(&data[i].action[..], &batch.actions.data()[r * 2..r * 2 + 2]);
            assert_eq!(&data[i].next[..], &batch.next.data()[r * 3..r * 3 + 3]);
            assert_eq!(data[i].done, batch.done[r]);
        }
    }

    #[test]
    fn actor_changes_only_on_delayed_steps() {
        let mut agent = Agent::new(2, 1, small(), 3).unwrap();
        let batch = Batch::from_transitions(&transitions(8, 2, 1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (actor0, critic0) = (agent.actor.clone(), agent.critic1.clone());
        agent.update(&batch, &mut rng).unwrap();
        assert_eq!(agent.actor, actor0);
        assert_ne!(agent.critic1, critic0);
        agent.update(&batch, &mut rng).unwrap();
        assert_ne!(agent.actor, actor0);
    }

    /// Independent deterministic-policy-gradient step built from the primitives.
    fn ddpg_step(
        actor: &mut Parameters,
        critic: &mut Parameters,
        actor_opt: &mut Adam,
        critic_opt: &mut Adam,
        data: &[Transition],
        gamma: f64,
    ) {
        let next = rows(data.iter().flat_map(|t| t.next.clone()).collect(), 2);
        let a_next = eval(actor, &next).unwrap();
        let q_next = eval(critic, &concat_rows(&next, &a_next)).unwrap();
        let y: Vec<f64> = data
            .iter()
            .zip(q_next.data())
            .map(|(t, q)| if t.done { t.reward } else { t.reward + gamma * q })
            .collect();
        let s = rows(data.iter().flat_map(|t| t.state.clone()).collect(), 2);
        let a = rows(data.iter().flat_map(|t| t.action.clone()).collect(), 1);
        let (_, gw, gb) = critic_loss_grad(critic, concat_rows(&s, &a), &y).unwrap();
        critic_opt.step(critic, &gw, &gb);
        let (_, gw, gb) = actor_loss_grad(actor, critic, s).unwrap();
        actor_opt.step(actor, &gw, &gb);
    }

    #[test]
    fn degenerates_to_ddpg() {
        let cfg = Td3Config { policy_noise: 0.0, tau: 1.0, policy_delay: 1, ..small() };
        let mut agent = Agent::new(2, 1, cfg.clone(), 5).unwrap();
        agent.critic2 = agent.critic1.clone();
        agent.critic2_target = agent.critic1.clone();
        agent.critic1_target = agent.critic1.clone();
        let mut actor = agent.actor.clone();
        let mut critic = agent.critic1.clone();
        let mut aopt = Adam::new(cfg.lr, param_len(&actor));
        let mut copt = Adam::new(cfg.lr, param_len(&critic));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for round in 0..3 {
            let data = transitions(8, 2, 1, round);
            agent.update(&Batch::from_transitions(&data), &mut rng).unwrap();
            ddpg_step(&mut actor, &mut critic, &mut aopt, &mut copt, &data, cfg.gamma);
            assert_eq!(agent.critic1, critic);
            assert_eq!(agent.critic2, critic);
            assert_eq!(agent.actor, actor);
            assert_eq!(agent.actor_target, actor);
            assert_eq!(agent.critic1_target, critic);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let agent = Agent::new(7, 3, small(), 2).unwrap();
        let ck = Checkpoint::from_bytes(&agent.to_checkpoint().to_bytes()).unwrap();
        let back = Agent::from_checkpoint(&ck, small()).unwrap();
        assert_eq!(back.actor, agent.actor);
        assert_eq!(back.critic2_target, agent.critic2_target);
    }

    #[test]
    fn welch_standard_error() {
        let (d, se) = welch(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        assert_eq!(d, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
