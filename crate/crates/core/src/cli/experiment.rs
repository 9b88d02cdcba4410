//! Typed view of a resolved [`Config`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::{Config, ConfigError};
use crate::data::{self, Dataset, ImageFamily};
use crate::metrics::{FusionWeights, Metric, Normalization};
use crate::model::{Activation, NetworkSpec};
use crate::pruner::{FusionSchedule, RunSettings};
use crate::rl_env::{Curriculum, EnvConfig};
use crate::seed;
use crate::td3::Td3Config;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Images(ImageFamily),
    Synthetic { classes: usize, per_class: usize, test_per_class: usize, dims: usize, separation: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Lenet5,
    Mlp { hidden: Vec<usize>, activation: Activation },
    VggSmall([usize; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneMethod {
    /// Hand-set banded fusion schedule.
    Panning,
    Fixed(FusionWeights),
    /// Fusion weights chosen by a trained agent.
    Agent,
    /// All-ones mask.
    Dense,
    Single(Metric),
}

impl PruneMethod {
    /// Fusion schedule of the non-agent iterative methods.
    pub fn schedule(self) -> Option<FusionSchedule> {
        match self {
            PruneMethod::Panning => Some(FusionSchedule::Banded),
            PruneMethod::Fixed(p) => Some(FusionSchedule::Constant(p)),
            PruneMethod::Single(m) => Some(FusionSchedule::Constant(FusionWeights::only(m))),
            PruneMethod::Agent | PruneMethod::Dense => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvNetwork {
    Reduced,
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    pub data_root: Option<PathBuf>,
    pub train_subset: usize,
    pub test_subset: usize,
    pub arch: Architecture,
    pub method: PruneMethod,
    pub settings: RunSettings,
    pub score_classes: usize,
    pub score_per_class: usize,
    pub resample: bool,
    pub agent: PathBuf,
    pub mask: PathBuf,
    pub train: TrainConfig,
    pub eval_checkpoint: PathBuf,
    pub td3: Td3Config,
    pub env_network: EnvNetwork,
    pub env_iterations: usize,
    pub env_alpha: f64,
    pub env_target: Option<f64>,
    pub eval_episodes: usize,
    pub stride: usize,
}

fn bool_value(c: &Config, key: &str) -> Result<bool, ConfigError> {
    match c.raw(key) {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(c.invalid(key, "expected true or false")),
    }
}

fn path_or(c: &Config, key: &str, out: &Path, file: &str) -> Result<PathBuf, ConfigError> {
    Ok(c.get_opt::<PathBuf>(key)?.unwrap_or_else(|| out.join(file)))
}

impl Experiment {
    pub fn from_config(c: &Config) -> Result<Self, ConfigError> {
        let out: PathBuf = c.get("run.out")?;
        let data = match c.raw("data.family") {
            "mnist" => DataSource::Images(ImageFamily::Mnist),
            "fashion-mnist" => DataSource::Images(ImageFamily::FashionMnist),
            "synthetic" => DataSource::Synthetic {
                classes: c.get("data.classes")?,
                per_class: c.get("data.per_class")?,
                test_per_class: c.get("data.test_per_class")?,
                dims: c.get("data.dims")?,
                separation: c.get("data.separation")?,
                seed: c.get("data.seed")?,
            },
            _ => return Err(c.invalid("data.family", "expected mnist, fashion-mnist or synthetic")),
        };
        let arch = match c.raw("model.arch") {
            "lenet5" => Architecture::Lenet5,
            "mlp" => {
                let activation = match c.raw("model.activation") {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    _ => return Err(c.invalid("model.activation", "expected relu or tanh")),
                };
                Architecture::Mlp { hidden: c.get_list("model.hidden")?, activation }
            }
            "vgg-small" => {
                let w: Vec<usize> = c.get_list("model.widths")?;
                let w: [usize; 2] = w.try_into().map_err(|_| c.invalid("model.widths", "expected two widths"))?;
                Architecture::VggSmall(w)
            }
            _ => return Err(c.invalid("model.arch", "expected lenet5, mlp or vgg-small")),
        };
        let method = match c.raw("panning.method") {
            "panning" => PruneMethod::Panning,
            "fixed" => {
                let p: Vec<f64> = c.get_list("panning.p")?;
                let [a, b, g]: [f64; 3] = p.try_into().map_err(|_| c.invalid("panning.p", "expected three weights"))?;
                PruneMethod::Fixed(FusionWeights::new(a, b, g).map_err(|e| c.invalid("panning.p", e.to_string()))?)
            }
            "rl" => PruneMethod::Agent,
            "dense" => PruneMethod::Dense,
            _ => PruneMethod::Single(c.get("panning.method")?),
        };
        let mut grasp = match c.raw("metrics.grasp") {
            "modified" => Metric::GraspModified,
            "original" => Metric::GraspOriginal,
            _ => return Err(c.invalid("metrics.grasp", "expected modified or original")),
        };
        if let PruneMethod::Single(m @ (Metric::GraspModified | Metric::GraspOriginal)) = method {
            grasp = m;
        }
        let normalization: Normalization = c.get("metrics.normalization")?;
        let settings = RunSettings { target: c.get("panning.target")?, iterations: c.get("panning.T")?, grasp, normalization };
        if let Err(e) = settings.validate() {
            let key = if settings.iterations == 0 { "panning.T" } else { "panning.target" };
            return Err(c.invalid(key, e.to_string()));
        }
        let seed: u64 = c.get("run.seed")?;
        let train = TrainConfig {
            epochs: c.get("train.epochs")?,
            batch: c.get("train.batch")?,
            momentum: c.get("train.momentum")?,
            lr: c.get("train.lr")?,
            weight_decay: c.get("train.weight_decay")?,
            seed: seed::derive(seed, "train"),
            crop_padding: c.get("train.crop_padding")?,
            eval_every: c.get("train.eval_every")?,
        };
        train.validate().map_err(|e| c.invalid("train.batch", e.to_string()))?;
        let td3 = Td3Config {
            lr: c.get("td3.lr")?,
            start_steps: c.get("td3.start_steps")?,
            max_steps: c.get("td3.max_steps")?,
            batch: c.get("td3.batch")?,
            exploration: c.get("td3.exploration")?,
            gamma: c.get("td3.gamma")?,
            tau: c.get("td3.tau")?,
            policy_noise: c.get("td3.policy_noise")?,
            noise_clip: c.get("td3.noise_clip")?,
            policy_delay: c.get("td3.policy_delay")?,
            replay: c.get("td3.replay")?,
            hidden: c.get("td3.hidden")?,
        };
        td3.validate().map_err(|e| c.invalid("td3.lr", e.to_string()))?;
        let env_network = match c.raw("env.network") {
            "reduced" => EnvNetwork::Reduced,
            "model" => EnvNetwork::Model,
            _ => return Err(c.invalid("env.network", "expected reduced or model")),
        };
        let env_target: Option<f64> = c.get_opt("env.target")?;
        if env_target.is_some_and(|t| !(t > 0.0 && t < 1.0)) {
            return Err(c.invalid("env.target", "must lie in (0, 1)"));
        }
        let stride: usize = c.get("trace.stride")?;
        if stride == 0 {
            return Err(c.invalid("trace.stride", "must be positive"));
        }
        Ok(Self {
            seed,
            data,
            data_root: c.get_opt("data.root")?,
            train_subset: c.get("data.train_subset")?,
            test_subset: c.get("data.test_subset")?,
            arch,
            method,
            settings,
            score_classes: c.get("metrics.classes")?,
            score_per_class: c.get("metrics.per_class")?,
            resample: bool_value(c, "metrics.resample")?,
            agent: path_or(c, "panning.agent", &out, "agent.ckpt")?,
            mask: path_or(c, "train.mask", &out, "mask.ckpt")?,
            train,
            eval_checkpoint: path_or(c, "eval.checkpoint", &out, "trained.ckpt")?,
            td3,
            env_network,
            env_iterations: c.get("env.T")?,
            env_alpha: c.get("env.alpha")?,
            env_target,
            eval_episodes: c.get("env.eval_episodes")?,
            stride,
            out,
        })
    }

    /// Training and test splits after subsetting.
    pub fn load_data(&self) -> Result<(Dataset, Dataset), data::DataError> {
        let (train, test) = match &self.data {
            DataSource::Images(family) => {
                let root = data::data_root(self.data_root.as_deref());
                let (train, test, _) = data::load_family(&root, *family)?;
                (train, test)
            }
            DataSource::Synthetic { classes, per_class, test_per_class, dims, separation, seed } => {
                let total = per_class + test_per_class;
                let all = data::synthetic_classification(*classes, total, *dims, *separation, *seed);
                let split = |range: std::ops::Range<usize>| -> Vec<usize> {
                    (0..*classes).flat_map(|c| range.clone().map(move |i| c * total + i)).collect()
                };
                (all.subset(&split(0..*per_class)), all.subset(&split(*per_class..total)))
            }
        };
        let cut = |d: Dataset, n: usize| if n == 0 { d } else { d.head(n) };
        Ok((cut(train, self.train_subset), cut(test, self.test_subset)))
    }

    /// Architecture instantiated for the per-sample shape and class count of `data`.
    pub fn network(&self, data: &Dataset) -> NetworkSpec {
        let input = data.sample_shape();
        match &self.arch {
            Architecture::Lenet5 => NetworkSpec::lenet5(),
            Architecture::Mlp { hidden, activation } => NetworkSpec::mlp(input, hidden, data.classes, *activation),
            Architecture::VggSmall(w) => NetworkSpec::vgg_small(input, *w, data.classes),
        }
    }

    /// Environment for agent training, with its dataset.
    pub fn environment(&self) -> Result<(EnvConfig, Arc<Dataset>), data::DataError> {
        let (mut cfg, dataset) = match self.env_network {
            EnvNetwork::Reduced => {
                let (cfg, d) = EnvConfig::reduced();
                (cfg, Arc::new(d))
            }
            EnvNetwork::Model => {
                let (train, _) = self.load_data()?;
                (EnvConfig::new(self.network(&train), self.env_iterations), Arc::new(train))
            }
        };
        self.configure_env(&mut cfg);
        cfg.iterations = self.env_iterations;
        cfg.fixed_target = self.env_target;
        Ok((cfg, dataset))
    }

    /// Applies the shared scoring and reward settings.
    pub fn configure_env(&self, cfg: &mut EnvConfig) {
        cfg.alpha = self.env_alpha;
        cfg.curriculum = Curriculum::default();
        cfg.classes = self.score_classes;
        cfg.per_class = self.score_per_class;
        cfg.grasp = self.settings.grasp;
        cfg.normalization = self.settings.normalization;
        cfg.resample = self.resample;
    }
}
