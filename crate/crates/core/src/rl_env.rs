//! A pruning run exposed as an episodic control problem.
//!
//! Each step the agent picks fusion weights, one pruning iteration runs, and
//! the reward penalizes drift of the pruned network's loss and gradient norm
//! from the dense network, plus any gap between effective and scheduled
//! sparsity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::metrics::{balanced_batch, FusionWeights, Metric, Normalization};
use crate::model::{ModelError, NetworkSpec, Parameters};
use crate::pruner::{PanningRun, PruneError, PruneTrace, Resampler, RunSettings};
use crate::seed;

pub const STATE_DIM: usize = 7;
pub const ACTION_DIM: usize = 3;
pub const ALPHA: f64 = 100.0;
/// Upper clamp for reference-normalized quantities.
pub const NORM_CLAMP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    Finished,
    #[error("step called before reset")]
    NotReset,
    #[error("episode aborted at t = {t}: {reason}")]
    Aborted { t: usize, reason: String },
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid environment config: {0}")]
    Config(String),
}

/// Normalized observation `(L, ΔL, L_s, ΔL_s, ρ_t, ρ_e, t/T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvState {
    pub loss: f64,
    pub delta_loss: f64,
    pub sparse_loss: f64,
    pub sparse_delta: f64,
    pub rho_t: f64,
    pub rho_e: f64,
    pub t: f64,
}

impl EnvState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.loss, self.delta_loss, self.sparse_loss, self.sparse_delta, self.rho_t, self.rho_e, self.t]
    }
}

/// `x / reference`, clamped to `[0, NORM_CLAMP]`.
pub fn normalize_against(x: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        return if x == 0.0 { 1.0 } else { NORM_CLAMP };
    }
    (x / reference).clamp(0.0, NORM_CLAMP)
}

/// Reward terms. `total = −(r1 + r2 + r3 + r_done)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reward {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r_done: f64,
    pub total: f64,
    pub done: bool,
}

/// Reward for arriving in `state` after step `t` of `t_max`.
pub fn reward(state: &EnvState, t: usize, t_max: usize, alpha: f64) -> Reward {
    let r1 = (state.loss - state.sparse_loss).abs();
    let r2 = (state.delta_loss - state.sparse_delta).abs();
    let r3 = alpha * (state.rho_e - state.rho_t).abs();
    let collapsed = state.rho_e == 1.0;
    let r_done = if collapsed { t_max.saturating_sub(t) as f64 } else { 0.0 };
    Reward { r1, r2, r3, r_done, total: -(r1 + r2 + r3 + r_done), done: collapsed || t >= t_max }
}

/// `p_i = (a_i + 1)/2` after clipping `a` to `[−1, 1]`.
///
/// An action that maps to all-zero weights falls back to equal weights.
pub fn action_to_weights(a: &[f64; ACTION_DIM]) -> FusionWeights {
    let p = a.map(|v| (v.clamp(-1.0, 1.0) + 1.0) / 2.0);
    if p.iter().all(|&v| v == 0.0) {
        let third = 1.0 / 3.0;
        return FusionWeights { synflow: third, snip: third, grasp: third };
    }
    FusionWeights { synflow: p[0], snip: p[1], grasp: p[2] }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, inclusive: bool) -> f64 {
    let (a, b) = (lo.ln(), hi.ln());
    let x = if inclusive { rng.gen_range(a..=b) } else { rng.gen_range(a..b) };
    x.exp()
}

/// Curriculum over target ratios.
///
/// `Pr[ρ_T > 0.99] = 0.1 + 0.6u`. Below that, `1 − ρ_T` is log-uniform on
/// `[1 − 0.99, 1 − min]`; above, on `[1 − max, 0.01)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curriculum {
    pub min_target: f64,
    pub max_target: f64,
    pub split: f64,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self { min_target: 0.8, max_target: 0.9999, split: 0.99 }
    }
}

impl Curriculum {
    pub fn high_probability(u: f64) -> f64 {
        0.1 + 0.6 * u.clamp(0.0, 1.0)
    }

    pub fn sample(&self, rng: &mut impl Rng, u: f64) -> f64 {
        if rng.gen_bool(Self::high_probability(u)) {
            1.0 - log_uniform(rng, 1.0 - self.max_target, 1.0 - self.split, false)
        } else {
            1.0 - log_uniform(rng, 1.0 - self.split, 1.0 - self.min_target, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub spec: NetworkSpec,
    pub iterations: usize,
    pub alpha: f64,
    pub curriculum: Curriculum,
    /// Overrides curriculum sampling when set.
    pub fixed_target: Option<f64>,
    pub classes: usize,
    pub per_class: usize,
    pub grasp: Metric,
    pub normalization: Normalization,
    pub resample: bool,
}

impl EnvConfig {
    pub fn new(spec: NetworkSpec, iterations: usize) -> Self {
        Self {
            classes: spec.classes,
            spec,
            iterations,
            alpha: ALPHA,
            curriculum: Curriculum::default(),
            fixed_target: None,
            per_class: 10,
            grasp: Metric::GraspModified,
            normalization: Normalization::Sum,
            resample: false,
        }
    }

    /// Small MLP on synthetic blobs: a cheap stand-in target for agent training.
    pub fn reduced() -> (Self, Dataset) {
        let spec = NetworkSpec::mlp(&[64], &[64, 64, 64], 10, crate::model::Activation::Relu);
        let data = crate::data::synthetic_classification(10, 40, 64, 4.0, 0x5eed);
        (Self::new(spec, 20), data)
    }
}

/// Episodic environment interface used by the agent.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Starts an episode; `progress ∈ [0,1]` is the curriculum position.
    fn reset(&mut self, seed: u64, progress: f64) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// `(r1, r2, r3)` for diagnostics; zero where not applicable.
    pub terms: [f64; 3],
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub t: usize,
    pub state: [f64; STATE_DIM],
    pub action: [f64; ACTION_DIM],
    pub p: [f64; 3],
    pub reward: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r_done: f64,
    pub done: bool,
}

pub struct PanningEnv {
    config: EnvConfig,
    dataset: Arc<Dataset>,
    run: Option<PanningRun>,
    target: f64,
    done: bool,
    log: Vec<LogEntry>,
    trace: PruneTrace,
}

impl PanningEnv {
    pub fn new(config: EnvConfig, dataset: Arc<Dataset>) -> Result<Self, EnvError> {
        config.spec.validate()?;
        if config.iterations == 0 {
            return Err(EnvError::Config("iterations must be at least 1".into()));
        }
        if config.classes > dataset.classes {
            return Err(EnvError::Config(format!(
                "{} classes requested, dataset has {}",
                config.classes, dataset.classes
            )));
        }
        Ok(Self { config, dataset, run: None, target: 0.0, done: false, log: Vec::new(), trace: PruneTrace::default() })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Target ratio of the current episode.
    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn run(&self) -> Option<&PanningRun> {
        self.run.as_ref()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Pruning records of the current episode.
    pub fn trace(&self) -> &PruneTrace {
        &self.trace
    }

    pub fn write_log(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Starts an episode with a freshly initialized target network.
    pub fn reset_episode(&mut self, seed: u64, progress: f64) -> Result<EnvState, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "env/target"));
        self.target = match self.config.fixed_target {
            Some(t) => t,
            None => self.config.curriculum.sample(&mut rng, progress),
        };
        let target = self.target;
        let params = Parameters::init(&self.config.spec, seed::derive(seed, "env/init"))?;
        self.start(params, target, seed::derive(seed, "env/batch"))
    }

    /// Starts an episode on given parameters and target ratio.
    ///
    /// The evaluation batch is drawn with `batch_seed`.
    pub fn start(&mut self, params: Parameters, target: f64, batch_seed: u64) -> Result<EnvState, EnvError> {
        self.target = target;
        let batch = balanced_batch(&self.dataset, self.config.classes, self.config.per_class, batch_seed)?;
        let settings = RunSettings {
            target,
            iterations: self.config.iterations,
            grasp: self.config.grasp,
            normalization: self.config.normalization,
        };
        let mut run = PanningRun::new(params, batch, settings)?;
        if self.config.resample {
            run = run.with_resampler(Resampler {
                dataset: self.dataset.clone(),
                classes: self.config.classes,
                per_class: self.config.per_class,
                seed: batch_seed,
            });
        }
        self.run = Some(run);
        self.done = false;
        self.log.clear();
        self.trace.records.clear();
        Ok(self.state())
    }

    /// Normalized state of the current run.
    pub fn state(&self) -> EnvState {
        let run = self.run.as_ref().expect("state requested before reset");
        compute_state(run)
    }

    /// One pruning iteration with explicit fusion weights.
    pub fn step_weights(&mut self, p: FusionWeights, action: [f64; ACTION_DIM]) -> Result<(EnvState, Reward), EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        let run = self.run.as_mut().ok_or(EnvError::NotReset)?;
        let t = run.iteration() + 1;
        let record = run.step(p).map_err(|e| match e {
            PruneError::Metric { source, .. } => EnvError::Aborted { t, reason: source.to_string() },
            other => EnvError::Prune(other),
        })?;
        self.trace.records.push(record);
        let state = compute_state(run);
        if !state.to_array().iter().all(|v| v.is_finite()) {
            return Err(EnvError::Aborted { t, reason: format!("non-finite state {state:?}") });
        }
        let r = reward(&state, t, self.config.iterations, self.config.alpha);
        self.done = r.done;
        self.log.push(LogEntry {
            t,
            state: state.to_array(),
            action,
            p: p.as_array(),
            reward: r.total,
            r1: r.r1,
            r2: r.r2,
            r3: r.r3,
            r_done: r.r_done,
            done: r.done,
        });
        Ok((state, r))
    }

    pub fn step_action(&mut self, action: [f64; ACTION_DIM]) -> Result<(EnvState, Reward), EnvError> {
        let clipped = action.map(|v| v.clamp(-1.0, 1.0));
        self.step_weights(action_to_weights(&clipped), clipped)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

/// State of a run, normalized by the dense references captured at its start.
pub fn compute_state(run: &PanningRun) -> EnvState {
    let (l_ref, d_ref) = (run.dense_loss(), run.dense_delta_loss());
    let t_max = run.settings().iterations;
    EnvState {
        loss: normalize_against(l_ref, l_ref),
        delta_loss: normalize_against(d_ref, d_ref),
        sparse_loss: normalize_against(run.loss(), l_ref),
        sparse_delta: normalize_against(run.delta_loss(), d_ref),
        rho_t: run.current_ratio(),
        rho_e: run.rho_e(),
        t: run.iteration() as f64 / t_max as f64,
    }
}

impl Environment for PanningEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn reset(&mut self, seed: u64, progress: f64) -> Result<Vec<f64>, EnvError> {
        Ok(self.reset_episode(seed, progress)?.to_array().to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        let a: [f64; ACTION_DIM] = action
            .try_into()
            .map_err(|_| EnvError::Config(format!("action has {} components, expected {ACTION_DIM}", action.len())))?;
        let (state, r) = self.step_action(a)?;
        Ok(Step { state: state.to_array().to_vec(), reward: r.total, done: r.done, terms: [r.r1, r.r2, r.r3] })
    }
}
