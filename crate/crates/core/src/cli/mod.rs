//! Experiment harness behind the `panning` binary.
//!
//! Every command writes its resolved configuration as `<command>.config` in
//! the output directory; running the command again from that file
//! reproduces its artifacts.

mod config;
mod experiment;

pub use config::{Config, ConfigError, Origin, KEYS};
pub use experiment::{Architecture, DataSource, EnvNetwork, Experiment, PruneMethod};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::data::Dataset;
use crate::metrics::{self, balanced_batch, trajectory_columns, Metric, TrajectoryWriter};
use crate::model::{Checkpoint, Layer, Mask, Parameters};
use crate::pruner::{effective_compression, PanningRun, PruneTrace, Resampler};
use crate::rl_env::{EnvConfig, PanningEnv, ACTION_DIM, STATE_DIM};
use crate::seed;
use crate::td3::{self, Agent};
use crate::trainer::{self, EpochMetrics};

/// Entry name of the pruned network in mask and trained checkpoints.
pub const MODEL_ENTRY: &str = "model";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn prepare(cfg: &Config, command: &str) -> Result<Experiment> {
    let exp = Experiment::from_config(cfg)?;
    fs::create_dir_all(&exp.out).with_context(|| format!("creating {}", exp.out.display()))?;
    let path = exp.out.join(format!("{command}.config"));
    fs::write(&path, cfg.render()).with_context(|| format!("writing {}", path.display()))?;
    Ok(exp)
}

fn layer_kind(layer: &Layer) -> &'static str {
    match layer {
        Layer::Dense { .. } => "dense",
        Layer::Conv { .. } => "conv",
        _ => "other",
    }
}

/// Per-layer retention table, one row per trainable layer.
pub fn retention_table(params: &Parameters, mask: &Mask) -> String {
    let mut s = format!("{:<6} {:<6} {:>10} {:>10} {:>10}\n", "layer", "kind", "weights", "kept", "retention");
    for (i, (l, kept)) in params.layout().iter().zip(mask.layer_kept()).enumerate() {
        let kind = layer_kind(&params.spec().layers[l.layer]);
        let total = l.weight_count();
        let r = if total == 0 { 0.0 } else { kept as f64 / total as f64 };
        s.push_str(&format!("{i:<6} {kind:<6} {total:>10} {kept:>10} {r:>10.6}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneSummary {
    pub method: String,
    pub target: f64,
    pub iterations: usize,
    pub weights: usize,
    pub kept: usize,
    pub sparsity: f64,
    pub rho_e: f64,
    pub layer_retention: Vec<f64>,
}

/// Artifacts of `prune`.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub params: Parameters,
    pub mask: Mask,
    pub trace: PruneTrace,
    pub summary: PruneSummary,
}

fn trace_is_finite(trace: &PruneTrace) -> bool {
    trace.records.iter().all(|r| r.loss.is_finite() && r.delta_loss.is_finite() && r.rho_e.is_finite())
}

fn initial_params(exp: &Experiment, train: &Dataset) -> Result<Parameters> {
    Ok(Parameters::init(&exp.network(train), seed::derive(exp.seed, "model/init"))?)
}

fn start_run(exp: &Experiment, params: Parameters, train: &Arc<Dataset>) -> Result<PanningRun> {
    let batch_seed = seed::derive(exp.seed, "prune/batch");
    let batch = balanced_batch(train, exp.score_classes, exp.score_per_class, batch_seed)?;
    let mut run = PanningRun::new(params, batch, exp.settings.clone())?;
    if exp.resample {
        run = run.with_resampler(Resampler {
            dataset: train.clone(),
            classes: exp.score_classes,
            per_class: exp.score_per_class,
            seed: batch_seed,
        });
    }
    Ok(run)
}

fn method_name(exp: &Experiment) -> String {
    match exp.method {
        PruneMethod::Panning => "panning".into(),
        PruneMethod::Fixed(_) => "fixed".into(),
        PruneMethod::Agent => "rl".into(),
        PruneMethod::Dense => "dense".into(),
        PruneMethod::Single(m) => m.name().into(),
    }
}

/// Prunes the initialized network and writes `mask.ckpt`, `trace.jsonl` and
/// `prune.json` (plus `actions.jsonl` for the agent-driven method).
pub fn cmd_prune(cfg: &Config, console: &mut dyn Write) -> Result<PruneOutcome> {
    let exp = prepare(cfg, "prune")?;
    let (train, _) = exp.load_data()?;
    let train = Arc::new(train);
    let params = initial_params(&exp, &train)?;
    let (mask, trace) = match exp.method {
        PruneMethod::Dense => (Mask::ones(&params), PruneTrace::default()),
        PruneMethod::Agent => {
            let ck = Checkpoint::load(&exp.agent).with_context(|| format!("loading agent {}", exp.agent.display()))?;
            let agent = Agent::from_checkpoint(&ck, exp.td3.clone())?;
            ensure!(
                agent.state_dim() == STATE_DIM && agent.action_dim() == ACTION_DIM,
                "agent has state/action dims {}/{}, expected {STATE_DIM}/{ACTION_DIM}",
                agent.state_dim(),
                agent.action_dim()
            );
            let mut env_cfg = EnvConfig::new(params.spec().clone(), exp.settings.iterations);
            exp.configure_env(&mut env_cfg);
            let mut env = PanningEnv::new(env_cfg, train.clone())?;
            let target = exp.settings.target;
            let mut state = env.start(params.clone(), target, seed::derive(exp.seed, "prune/batch"))?;
            while !env.is_done() {
                let a: [f64; ACTION_DIM] = agent.act(&state.to_array())?.try_into().expect("action dim checked");
                state = env.step_action(a)?.0;
            }
            let mut w = create(&exp.out.join("actions.jsonl"))?;
            env.write_log(&mut w)?;
            w.flush()?;
            let mask = env.run().expect("episode started").mask().clone();
            (mask, env.trace().clone())
        }
        method => {
            let schedule = method.schedule().expect("iterative method");
            let mut run = start_run(&exp, params.clone(), &train)?;
            let mut trace = PruneTrace::default();
            while !run.is_finished() {
                trace.records.push(run.step(schedule.weights(run.next_ratio()))?);
            }
            (run.into_mask(), trace)
        }
    };
    let rho_e = effective_compression(&params, &mask)?;
    let summary = PruneSummary {
        method: method_name(&exp),
        target: exp.settings.target,
        iterations: trace.records.len(),
        weights: mask.len(),
        kept: mask.count_kept(),
        sparsity: mask.sparsity(),
        rho_e,
        layer_retention: mask.layer_retention(),
    };
    ensure!(rho_e.is_finite() && trace_is_finite(&trace), "non-finite pruning trace");
    Checkpoint::single(MODEL_ENTRY, params.clone(), mask.clone()).save(exp.out.join("mask.ckpt"))?;
    let mut w = create(&exp.out.join("trace.jsonl"))?;
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    write_json(&exp.out.join("prune.json"), &summary)?;
    writeln!(console, "method {}  rho {:.6}  rho_e {:.6}  kept {}/{}", summary.method, summary.sparsity, rho_e, summary.kept, summary.weights)?;
    write!(console, "{}", retention_table(&params, &mask))?;
    Ok(PruneOutcome { params, mask, trace, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub mask: PathBuf,
    pub epochs: usize,
    pub sparsity: f64,
    pub test_acc: f64,
    pub test_samples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub mask: Mask,
    pub history: Vec<EpochMetrics>,
    pub summary: TrainSummary,
}

/// Trains the network stored in the mask checkpoint; writes `trained.ckpt`,
/// `metrics.csv` and `train.json`.
pub fn cmd_train(cfg: &Config, console: &mut dyn Write) -> Result<TrainOutcome> {
    let exp = prepare(cfg, "train")?;
    let ck = Checkpoint::load(&exp.mask).with_context(|| format!("loading mask {}", exp.mask.display()))?;
    let entry = ck.get(MODEL_ENTRY)?;
    let (train, test) = exp.load_data()?;
    let mut echo = |m: &EpochMetrics| {
        let acc = m.test_acc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(console, "epoch {:>3}  lr {:.5}  loss {:.5}  train {:.4}  test {acc}", m.epoch, m.lr, m.loss, m.train_acc);
    };
    let (params, history) = trainer::train_sparse(&entry.params, &entry.mask, &train, Some(&test), &exp.train, &mut echo)?;
    let test_acc = match history.last() {
        Some(m) => m.test_acc.expect("last epoch is evaluated"),
        None => trainer::evaluate(&params, &entry.mask, &test)?,
    };
    ensure!(
        test_acc.is_finite() && history.iter().all(|m| m.loss.is_finite()),
        "non-finite training metrics"
    );
    Checkpoint::single(MODEL_ENTRY, params.clone(), entry.mask.clone()).save(exp.out.join("trained.ckpt"))?;
    let mut w = create(&exp.out.join("metrics.csv"))?;
    trainer::write_metrics_csv(&history, &mut w)?;
    w.flush()?;
    let summary = TrainSummary {
        mask: exp.mask.clone(),
        epochs: history.len(),
        sparsity: entry.mask.sparsity(),
        test_acc,
        test_samples: test.len(),
    };
    write_json(&exp.out.join("train.json"), &summary)?;
    writeln!(console, "test accuracy {test_acc:.4} ({} samples, sparsity {:.6})", test.len(), summary.sparsity)?;
    Ok(TrainOutcome { params, mask: entry.mask.clone(), history, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub test_acc: f64,
    pub test_samples: usize,
    pub sparsity: f64,
    pub rho_e: f64,
}

/// Test accuracy of a checkpoint; writes `eval.json`.
pub fn cmd_eval(cfg: &Config, console: &mut dyn Write) -> Result<EvalSummary> {
    let exp = prepare(cfg, "eval")?;
    let path = &exp.eval_checkpoint;
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let entry = ck.get(MODEL_ENTRY)?;
    let (_, test) = exp.load_data()?;
    let test_acc = trainer::evaluate(&entry.params, &entry.mask, &test)?;
    ensure!(test_acc.is_finite(), "non-finite accuracy");
    let summary = EvalSummary {
        checkpoint: path.clone(),
        test_acc,
        test_samples: test.len(),
        sparsity: entry.mask.sparsity(),
        rho_e: effective_compression(&entry.params, &entry.mask)?,
    };
    write_json(&exp.out.join("eval.json"), &summary)?;
    writeln!(console, "test accuracy {test_acc:.4} ({} samples)", test.len())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RlSummary {
    pub steps: usize,
    pub episodes: usize,
    pub updates: u64,
    pub eval_episodes: usize,
    pub agent_mean: f64,
    pub random_mean: f64,
    /// Agent minus random mean return.
    pub margin: f64,
    pub standard_error: f64,
    pub agent_returns: Vec<f64>,
    pub random_returns: Vec<f64>,
}

pub struct RlOutcome {
    pub agent: Agent,
    pub curve: Vec<td3::EpisodeStats>,
    pub summary: RlSummary,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

/// Trains the agent; writes `agent.ckpt`, `curve.csv` and `rl.json`.
///
/// The trained agent and a uniform-random policy are then compared on the
/// same evaluation episodes at the end of the curriculum.
pub fn cmd_rl_train(cfg: &Config, console: &mut dyn Write) -> Result<RlOutcome> {
    let exp = prepare(cfg, "rl-train")?;
    let (env_cfg, dataset) = exp.environment()?;
    let mut env = PanningEnv::new(env_cfg, dataset)?;
    let (agent, curve) = td3::train_agent(&mut env, &exp.td3, seed::derive(exp.seed, "rl/train"))?;
    agent.to_checkpoint().save(exp.out.join("agent.ckpt"))?;
    let mut w = create(&exp.out.join("curve.csv"))?;
    td3::write_curve(&curve, &mut w)?;
    w.flush()?;
    let eval_seed = seed::derive(exp.seed, "rl/eval");
    let n = exp.eval_episodes;
    let agent_returns = td3::evaluate_policy(&mut env, |s| agent.act(s), n, eval_seed, 1.0)?;
    let random = td3::random_policy(ACTION_DIM, seed::derive(exp.seed, "rl/random"));
    let random_returns = td3::evaluate_policy(&mut env, random, n, eval_seed, 1.0)?;
    let (margin, standard_error) = td3::welch(&agent_returns, &random_returns);
    let summary = RlSummary {
        steps: exp.td3.max_steps,
        episodes: curve.len(),
        updates: agent.updates(),
        eval_episodes: n,
        agent_mean: mean(&agent_returns),
        random_mean: mean(&random_returns),
        margin,
        standard_error,
        agent_returns,
        random_returns,
    };
    ensure!(
        curve.iter().all(|e| e.total_reward.is_finite()) && summary.agent_mean.is_finite() && summary.random_mean.is_finite(),
        "non-finite returns"
    );
    write_json(&exp.out.join("rl.json"), &summary)?;
    writeln!(
        console,
        "episodes {}  agent {:.4}  random {:.4}  margin {:.4} ± {:.4}",
        summary.episodes, summary.agent_mean, summary.random_mean, margin, standard_error
    )?;
    Ok(RlOutcome { agent, curve, summary })
}

/// Raw scores of the three metrics at each iteration of the configured run;
/// writes `scores_<metric>.csv` and `trace.jsonl`.
///
/// Columns follow the first iteration's descending order, keeping every
/// `trace.stride`-th weight. Scores are taken on the scoring batch drawn at
/// the start, before each iteration prunes.
pub fn cmd_trace_scores(cfg: &Config, console: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let exp = prepare(cfg, "trace-scores")?;
    let Some(schedule) = exp.method.schedule() else {
        bail!("trace-scores needs an iterative method, got {}", method_name(&exp));
    };
    let (train, _) = exp.load_data()?;
    let train = Arc::new(train);
    let params = initial_params(&exp, &train)?;
    let batch = balanced_batch(&train, exp.score_classes, exp.score_per_class, seed::derive(exp.seed, "prune/batch"))?;
    let mut run = start_run(&exp, params.clone(), &train)?;
    let traced = [Metric::SynFlow, Metric::Snip, Metric::GraspModified];
    let paths: Vec<PathBuf> = traced.iter().map(|m| exp.out.join(format!("scores_{}.csv", m.name()))).collect();
    let mut writers: Vec<TrajectoryWriter<BufWriter<File>>> = Vec::new();
    let mut trace = PruneTrace::default();
    while !run.is_finished() {
        let mask = run.mask();
        let scores = [
            metrics::synflow_score(&params, mask)?.values,
            metrics::snip_score(&params, mask, &batch)?.values,
            metrics::grasp_score(&params, mask, &batch, Metric::GraspModified)?.values,
        ];
        ensure!(scores.iter().flatten().all(|v| v.is_finite()), "non-finite score at iteration {}", run.iteration() + 1);
        if writers.is_empty() {
            for (path, s) in paths.iter().zip(&scores) {
                writers.push(TrajectoryWriter::new(create(path)?, trajectory_columns(s, exp.stride))?);
            }
        }
        for (w, s) in writers.iter_mut().zip(&scores) {
            w.row(run.iteration() + 1, run.current_ratio(), s)?;
        }
        trace.records.push(run.step(schedule.weights(run.next_ratio()))?);
    }
    for w in writers {
        w.finish()?.flush()?;
    }
    ensure!(trace_is_finite(&trace), "non-finite pruning trace");
    let mut w = create(&exp.out.join("trace.jsonl"))?;
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    for p in &paths {
        writeln!(console, "wrote {}", p.display())?;
    }
    Ok(paths)
}
