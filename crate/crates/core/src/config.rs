//! Flat `key = value` run configuration.
//!
//! Keys are dotted paths (`model.use_cfa`, `train.max_iters`, ...). Files
//! hold one assignment per line; `#` starts a comment. Overrides given as
//! `key=value` strings win over file values, and unknown keys are rejected.
//! `model.preset` and `data.size` are applied before every other key, so
//! assignment order never matters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Phase;
use crate::datapipe::EdgeParams;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::{ExtractorSpec, TrainConfig};

/// Where training and evaluation samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub size: usize,
    /// Directory written by `synth-data` (manifest plus `images/`, `masks/`).
    /// Procedural samples are generated when unset.
    pub dir: Option<PathBuf>,
    pub synthetic_n: usize,
    pub synthetic_seed: u64,
    pub edges: EdgeParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            size: 32,
            dir: None,
            synthetic_n: 64,
            synthetic_seed: 1,
            edges: EdgeParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(32),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "model.preset",
    "model.levels",
    "model.base_channels",
    "model.max_channels",
    "model.feature_channels",
    "model.two_stream",
    "model.cross_borrow",
    "model.use_bigff",
    "model.use_cfa",
    "model.multiscale_cfa",
    "model.batch_norm",
    "model.spectral_norm",
    "train.batch_size",
    "train.lr_initial",
    "train.lr_finetune",
    "train.d_lr_ratio",
    "train.beta1",
    "train.beta2",
    "train.phase",
    "train.max_iters",
    "train.seed",
    "train.freeze_discriminator",
    "train.nan_guard",
    "train.checkpoint_every",
    "loss.rec",
    "loss.perc",
    "loss.style",
    "loss.adv",
    "loss.inter",
    "loss.extractor",
    "data.size",
    "data.dir",
    "data.synthetic_n",
    "data.synthetic_seed",
    "data.edge_sigma",
    "data.edge_low",
    "data.edge_high",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {value:?}")))
}

/// Parses `key=value` into its two trimmed halves.
pub fn split_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Assignments of a config file, in order.
pub fn read_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(split_assignment)
        .collect()
}

impl RunConfig {
    /// Builds a configuration from assignments; later entries win.
    pub fn from_assignments(assignments: &[(String, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in assignments {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }

        let size: usize = match map.get("data.size") {
            Some(v) => parse("data.size", v)?,
            None => DataConfig::default().size,
        };
        let mut cfg = RunConfig::default();
        cfg.data.size = size;
        cfg.model = match map.get("model.preset").map(String::as_str) {
            None | Some("desk") => ModelConfig::desk(size),
            Some("full") => ModelConfig::full(size),
            Some(other) => return Err(Error::InvalidConfig(format!("unknown model.preset {other:?}"))),
        };

        for (k, v) in &map {
            let g = &mut cfg.model.generator;
            let t = &mut cfg.train;
            match k.as_str() {
                "model.preset" | "data.size" => {}
                "model.levels" => g.levels = parse(k, v)?,
                "model.base_channels" => g.base_channels = parse(k, v)?,
                "model.max_channels" => g.max_channels = parse(k, v)?,
                "model.feature_channels" => g.feature_channels = parse(k, v)?,
                "model.two_stream" => g.two_stream = parse(k, v)?,
                "model.cross_borrow" => g.cross_borrow = parse(k, v)?,
                "model.use_bigff" => g.use_bigff = parse(k, v)?,
                "model.use_cfa" => g.use_cfa = parse(k, v)?,
                "model.multiscale_cfa" => g.multiscale_cfa = parse(k, v)?,
                "model.batch_norm" => g.batch_norm = parse(k, v)?,
                "model.spectral_norm" => cfg.model.discriminator.spectral_norm = parse(k, v)?,
                "train.batch_size" => t.batch_size = parse(k, v)?,
                "train.lr_initial" => t.lr_initial = parse(k, v)?,
                "train.lr_finetune" => t.lr_finetune = parse(k, v)?,
                "train.d_lr_ratio" => t.d_lr_ratio = parse(k, v)?,
                "train.beta1" => t.beta1 = parse(k, v)?,
                "train.beta2" => t.beta2 = parse(k, v)?,
                "train.phase" => t.phase = v.parse::<Phase>()?,
                "train.max_iters" => t.max_iters = parse(k, v)?,
                "train.seed" => t.seed = parse(k, v)?,
                "train.freeze_discriminator" => t.freeze_discriminator = parse(k, v)?,
                "train.nan_guard" => t.nan_guard = parse(k, v)?,
                "train.checkpoint_every" => t.checkpoint_every = parse(k, v)?,
                "loss.rec" => t.weights.rec = parse(k, v)?,
                "loss.perc" => t.weights.perc = parse(k, v)?,
                "loss.style" => t.weights.style = parse(k, v)?,
                "loss.adv" => t.weights.adv = parse(k, v)?,
                "loss.inter" => t.weights.inter = parse(k, v)?,
                "loss.extractor" => t.extractor = parse_extractor(v)?,
                "data.dir" => cfg.data.dir = Some(PathBuf::from(v)),
                "data.synthetic_n" => cfg.data.synthetic_n = parse(k, v)?,
                "data.synthetic_seed" => cfg.data.synthetic_seed = parse(k, v)?,
                "data.edge_sigma" => cfg.data.edges.sigma = parse(k, v)?,
                "data.edge_low" => cfg.data.edges.low = parse(k, v)?,
                "data.edge_high" => cfg.data.edges.high = parse(k, v)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// File assignments followed by overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut assignments = match file {
            Some(p) => read_file(p)?,
            None => Vec::new(),
        };
        for o in overrides {
            assignments.push(split_assignment(o)?);
        }
        Self::from_assignments(&assignments)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.size != self.model.image_size {
            return Err(Error::InvalidConfig("data.size and model size disagree".into()));
        }
        self.model.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.train.validate()?;
        self.data.edges.validate()?;
        if self.data.synthetic_n == 0 {
            return Err(Error::InvalidConfig("data.synthetic_n must be > 0".into()));
        }
        Ok(())
    }
}

/// `random[:seed]`, `identity` or `vgg16:<weights.safetensors>`.
pub fn parse_extractor(v: &str) -> Result<ExtractorSpec> {
    match v.split_once(':') {
        None if v == "random" => Ok(ExtractorSpec::Random { seed: 0x5eed }),
        None if v == "identity" => Ok(ExtractorSpec::Identity),
        Some(("random", seed)) => Ok(ExtractorSpec::Random {
            seed: parse("loss.extractor", seed)?,
        }),
        Some(("vgg16", path)) => Ok(ExtractorSpec::Vgg16 {
            weights: PathBuf::from(path),
        }),
        _ => Err(Error::InvalidConfig(format!("unknown extractor {v:?}"))),
    }
}
