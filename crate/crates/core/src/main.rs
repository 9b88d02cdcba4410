use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use panning::cli::{self, Config};

#[derive(Parser)]
#[command(name = "panning", version, about = "Pruning at initialization with fused saliency metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value configuration file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set panning.T=10`
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (run.out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset root (data.root); defaults to $PANNING_DATA_DIR, then ./data
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Root seed (run.seed)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Prune the initialized network and write the mask checkpoint and trace
    Prune(Common),
    /// Train a pruned network from its mask checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        /// Mask checkpoint (train.mask)
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Test accuracy of a checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (eval.checkpoint)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the fusion-weight agent
    RlTrain(Common),
    /// Prune with fusion weights chosen by a trained agent
    RlPrune {
        #[command(flatten)]
        common: Common,
        /// Agent checkpoint (panning.agent)
        #[arg(long)]
        agent: Option<PathBuf>,
    },
    /// Dump subsampled metric scores across pruning iterations
    TraceScores(Common),
    /// Print every configuration key with its default
    Defaults,
}

fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let flags = [
        ("run.out", path(&common.out)),
        ("data.root", path(&common.data_root)),
        ("run.seed", common.seed.map(|s| s.to_string())),
    ];
    for (key, value) in flags.iter().chain(extra) {
        if let Some(v) = value {
            cfg.set(&format!("{key}={v}"))?;
        }
    }
    for kv in &common.overrides {
        cfg.set(kv)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    match cli.command {
        Command::Prune(c) => {
            cli::cmd_prune(&resolve(&c, &[])?, &mut out)?;
        }
        Command::Train { common, mask } => {
            cli::cmd_train(&resolve(&common, &[("train.mask", p(&mask))])?, &mut out)?;
        }
        Command::Eval { common, checkpoint } => {
            cli::cmd_eval(&resolve(&common, &[("eval.checkpoint", p(&checkpoint))])?, &mut out)?;
        }
        Command::RlTrain(c) => {
            cli::cmd_rl_train(&resolve(&c, &[])?, &mut out)?;
        }
        Command::RlPrune { common, agent } => {
            let extra = [("panning.method", Some("rl".to_string())), ("panning.agent", p(&agent))];
            cli::cmd_prune(&resolve(&common, &extra)?, &mut out)?;
        }
        Command::TraceScores(c) => {
            cli::cmd_trace_scores(&resolve(&c, &[])?, &mut out)?;
        }
        Command::Defaults => out.write_all(Config::render_documented().as_bytes())?,
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
