//! Checkpoint files: a safetensors archive with one JSON metadata entry.
//!
//! Tensor names are `gen/<param>`, `disc/<param>`, `opt_gen/{m,v}/<param>`
//! and `opt_disc/{m,v}/<param>`. Bytes depend only on the saved state, so
//! save → load → save is byte-identical.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{InpaintModel, ModelConfig};
use crate::nn::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "inpaint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Finetune,
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Phase::Initial),
            "finetune" => Ok(Phase::Finetune),
            other => Err(Error::InvalidConfig(format!("unknown phase {other:?}"))),
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Initial => "initial",
            Phase::Finetune => "finetune",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    pub phase: Phase,
    pub iteration: u64,
    pub generator_opt_steps: u64,
    pub discriminator_opt_steps: u64,
}

/// Parsed checkpoint, not yet applied to any model.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: BTreeMap<String, Tensor>,
}

fn section(tensors: &BTreeMap<String, Tensor>, prefix: &str) -> BTreeMap<String, Tensor> {
    tensors
        .iter()
        .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
        .collect()
}

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<usize>, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            t.dims().to_vec(),
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            t.dims().to_vec(),
            flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
    })
}

fn view_to_tensor(name: &str, view: &TensorView<'_>) -> Result<Tensor> {
    let data = view.data();
    let shape = view.shape().to_vec();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(Error::Checkpoint(format!("tensor {name} has unsupported dtype {other:?}"))),
    };
    Ok(t)
}

/// Serialises the full training state to bytes.
pub fn encode_checkpoint(
    model: &InpaintModel,
    generator_opt: &Adam,
    discriminator_opt: &Adam,
    phase: Phase,
    iteration: u64,
) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: model.config().clone(),
        phase,
        iteration,
        generator_opt_steps: generator_opt.step_count(),
        discriminator_opt_steps: discriminator_opt.step_count(),
    };
    let mut all = BTreeMap::new();
    for (k, t) in model.generator_params().snapshot()? {
        all.insert(format!("gen/{k}"), t);
    }
    for (k, t) in model.discriminator_params().snapshot()? {
        all.insert(format!("disc/{k}"), t);
    }
    for (k, t) in generator_opt.state_tensors() {
        all.insert(format!("opt_gen/{k}"), t);
    }
    for (k, t) in discriminator_opt.state_tensors() {
        all.insert(format!("opt_disc/{k}"), t);
    }
    let encoded: Vec<(String, (Dtype, Vec<usize>, Vec<u8>))> = all
        .iter()
        .map(|(k, t)| Ok((k.clone(), tensor_bytes(t)?)))
        .collect::<Result<_>>()?;
    let views: Vec<(String, TensorView<'_>)> = encoded
        .iter()
        .map(|(k, (dt, shape, bytes))| {
            TensorView::new(*dt, shape.clone(), bytes)
                .map(|v| (k.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let json = serde_json::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let metadata = HashMap::from([(META_KEY.to_string(), json)]);
    safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Writes the checkpoint atomically: a temporary sibling file is renamed
/// over `path` once fully written.
pub fn save_checkpoint(
    path: &Path,
    model: &InpaintModel,
    generator_opt: &Adam,
    discriminator_opt: &Adam,
    phase: Phase,
    iteration: u64,
) -> Result<()> {
    let bytes = encode_checkpoint(model, generator_opt, discriminator_opt, phase, iteration)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (_, metadata) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let json = metadata
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Checkpoint("metadata entry missing".into()))?;
        let version: serde_json::Value = serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let found = version.get("version").and_then(|v| v.as_u64());
        if found != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {found:?} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let meta: CheckpointMeta = serde_json::from_value(version).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let t = view_to_tensor(&name, &view)?;
            tensors.insert(name, t);
        }
        Ok(Self { meta, tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Builds a model from the stored configuration and weights.
    pub fn build_model(&self) -> Result<InpaintModel> {
        let model = InpaintModel::new(&self.meta.model, 0)?;
        self.apply_model(&model)?;
        Ok(model)
    }

    /// Writes the stored weights into `model`. Nothing is written unless
    /// every tensor is present with the right shape.
    pub fn apply_model(&self, model: &InpaintModel) -> Result<()> {
        if &self.meta.model != model.config() {
            return Err(Error::Checkpoint("checkpoint was saved for a different model configuration".into()));
        }
        let gen = section(&self.tensors, "gen/");
        let disc = section(&self.tensors, "disc/");
        model.generator_params().check_compatible(&gen)?;
        model.discriminator_params().check_compatible(&disc)?;
        model.generator_params().load(&gen)?;
        model.discriminator_params().load(&disc)?;
        Ok(())
    }

    /// Optimizer state for the generator and the discriminator.
    pub fn optimizer_state(&self, generator_opt: &mut Adam, discriminator_opt: &mut Adam) -> Result<()> {
        let mut g = generator_opt.clone();
        let mut d = discriminator_opt.clone();
        g.restore(self.meta.generator_opt_steps, &section(&self.tensors, "opt_gen/"))?;
        d.restore(self.meta.discriminator_opt_steps, &section(&self.tensors, "opt_disc/"))?;
        *generator_opt = g;
        *discriminator_opt = d;
        Ok(())
    }
}

/// Lowercase hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
