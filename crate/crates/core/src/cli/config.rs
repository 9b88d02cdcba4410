//! Flat `namespace.key=value` configuration with defaults and overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Every recognized key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "0", "root seed; every other seed is derived from it"),
    ("run.out", "runs/default", "output directory"),
    ("data.family", "mnist", "mnist | fashion-mnist | synthetic"),
    ("data.root", "", "dataset root; empty uses $PANNING_DATA_DIR or ./data"),
    ("data.train_subset", "0", "keep only the first n training samples; 0 keeps all"),
    ("data.test_subset", "0", "keep only the first n test samples; 0 keeps all"),
    ("data.seed", "0", "synthetic: seed of the blobs, independent of run.seed"),
    ("data.classes", "10", "synthetic: number of classes"),
    ("data.per_class", "100", "synthetic: training samples per class"),
    ("data.test_per_class", "100", "synthetic: test samples per class"),
    ("data.dims", "64", "synthetic: input dimension"),
    ("data.separation", "4", "synthetic: distance between class means"),
    ("model.arch", "lenet5", "lenet5 | mlp | vgg-small"),
    ("model.hidden", "300,100", "mlp: hidden widths"),
    ("model.activation", "relu", "mlp: relu | tanh"),
    ("model.widths", "16,32", "vgg-small: channel widths of the two blocks"),
    ("panning.method", "panning", "panning | fixed | rl | dense | snip | grasp | grasp-original | synflow"),
    ("panning.target", "0.9", "target pruning ratio"),
    ("panning.T", "100", "pruning iterations"),
    ("panning.p", "0.2,0.5,0.3", "fixed: synflow,snip,grasp fusion weights"),
    ("panning.agent", "", "rl: agent checkpoint; empty uses <run.out>/agent.ckpt"),
    ("metrics.classes", "10", "classes drawn per scoring batch"),
    ("metrics.per_class", "10", "samples per class in a scoring batch"),
    ("metrics.normalization", "sum", "sum | minmax"),
    ("metrics.grasp", "modified", "GraSP variant in fusion: modified | original"),
    ("metrics.resample", "false", "draw a new scoring batch every iteration"),
    ("train.mask", "", "mask checkpoint; empty uses <run.out>/mask.ckpt"),
    ("train.epochs", "80", "training epochs"),
    ("train.batch", "256", "minibatch size"),
    ("train.lr", "0.1", "initial learning rate (cosine schedule)"),
    ("train.momentum", "0.9", "SGD momentum"),
    ("train.weight_decay", "1e-4", "L2 penalty on kept weights"),
    ("train.crop_padding", "0", "random-crop padding in pixels; 0 disables"),
    ("train.eval_every", "1", "test accuracy every n epochs; 0 only after the last"),
    ("eval.checkpoint", "", "checkpoint to evaluate; empty uses <run.out>/trained.ckpt"),
    ("td3.lr", "3e-4", "Adam learning rate"),
    ("td3.start_steps", "2000", "uniform-random steps before updates start"),
    ("td3.max_steps", "200000", "environment steps"),
    ("td3.batch", "256", "minibatch size"),
    ("td3.exploration", "0.1", "Gaussian exploration noise"),
    ("td3.gamma", "0.99", "discount"),
    ("td3.tau", "0.01", "target update rate"),
    ("td3.policy_noise", "0.2", "target policy smoothing noise"),
    ("td3.noise_clip", "0.5", "clip of the smoothing noise"),
    ("td3.policy_delay", "2", "critic updates per actor update"),
    ("td3.replay", "100000", "replay capacity"),
    ("td3.hidden", "256", "hidden width of actor and critics"),
    ("env.network", "reduced", "reduced (small MLP on synthetic blobs) | model (model.* on data.*)"),
    ("env.T", "20", "pruning iterations per episode"),
    ("env.alpha", "100", "weight of the effective-compression penalty"),
    ("env.target", "", "fixed target ratio; empty samples the curriculum"),
    ("env.eval_episodes", "20", "episodes for the agent-vs-random comparison"),
    ("trace.stride", "500", "keep every n-th weight of the baseline ordering"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { path: PathBuf, line: usize },
    Override,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Override => write!(f, "command line"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Syntax { path: String, line: usize, message: String },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { key: String, origin: Origin },
    #[error("{origin}: `{key}` = `{value}`: {reason}")]
    Invalid { key: String, value: String, origin: Origin, reason: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Resolved key-value pairs, each remembering where its value came from.
#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, (String, Origin)>,
}

impl Default for Config {
    fn default() -> Self {
        let values = KEYS.iter().map(|(k, v, _)| (k.to_string(), (v.to_string(), Origin::Default))).collect();
        Self { values }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::default();
        cfg.merge_str(&text, path)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines; `#` starts a comment, blank lines are skipped.
    pub fn merge_str(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { path: path.display().to_string(), line, message };
            let (k, v) = content.split_once('=').ok_or_else(|| syntax(format!("expected key=value, got `{content}`")))?;
            let key = k.trim();
            if let Some(prev) = seen.insert(key.to_string(), line) {
                return Err(syntax(format!("`{key}` already set on line {prev}")));
            }
            self.insert(key, v.trim(), Origin::File { path: path.into(), line })?;
        }
        Ok(())
    }

    /// Applies a command-line `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: "--set".into(),
            line: 0,
            message: format!("expected key=value, got `{assignment}`"),
        })?;
        self.insert(k.trim(), v.trim(), Origin::Override)
    }

    fn insert(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = (value.to_string(), origin);
                Ok(())
            }
            None => Err(ConfigError::UnknownKey { key: key.to_string(), origin }),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values.get(key).unwrap_or_else(|| panic!("unregistered key {key}")).0
    }

    pub fn origin(&self, key: &str) -> &Origin {
        &self.values.get(key).unwrap_or_else(|| panic!("unregistered key {key}")).1
    }

    pub fn invalid(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            key: key.to_string(),
            value: self.raw(key).to_string(),
            origin: self.origin(key).clone(),
            reason: reason.into(),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key).parse().map_err(|e: T::Err| self.invalid(key, e.to_string()))
    }

    /// `None` for an empty value.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',').map(|s| s.trim().parse().map_err(|e: T::Err| self.invalid(key, e.to_string()))).collect()
    }

    /// Every key in registry order, one `key=value` per line.
    pub fn render(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (k, _, _) in KEYS {
            out.push_str(&format!("{k}={}\n", self.raw(k)));
        }
        out
    }

    /// Defaults with their descriptions as comments.
    pub fn render_documented() -> String {
        let mut out = String::new();
        for (k, v, help) in KEYS {
            out.push_str(&format!("# {help}\n{k}={v}\n"));
        }
        out
    }
}
