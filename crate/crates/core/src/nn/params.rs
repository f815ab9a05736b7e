use std::collections::BTreeMap;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named trainable parameters plus non-trainable buffers (running statistics,
/// power-iteration vectors) of one network.
///
/// Layers hold clones of the `Var`s registered here, so writes through the
/// store are visible to the layers and vice versa. Iteration order is the
/// lexicographic order of the names, which keeps serialization and
/// optimizer bookkeeping deterministic.
#[derive(Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Var> {
        self.buffers.get(name)
    }

    /// Total number of scalar trainable parameters.
    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    pub(crate) fn insert_param(&mut self, name: String, var: Var) -> Result<()> {
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, var);
        Ok(())
    }

    pub(crate) fn insert_buffer(&mut self, name: String, var: Var) -> Result<()> {
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate buffer name {name}")));
        }
        self.buffers.insert(name, var);
        Ok(())
    }

    /// Deep copy of every parameter and buffer, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (name, var) in self.params.iter().chain(self.buffers.iter()) {
            out.insert(name.clone(), var.as_tensor().copy()?);
        }
        Ok(out)
    }

    /// Checks that `tensors` covers every entry of the store with matching
    /// shapes, without writing anything.
    pub fn check_compatible(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.params.iter().chain(self.buffers.iter()) {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
        }
        Ok(())
    }

    /// Overwrites every entry from `tensors`. Call [`check_compatible`]
    /// first when partial writes must be avoided.
    ///
    /// [`check_compatible`]: ParamStore::check_compatible
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        self.check_compatible(tensors)?;
        for (name, var) in self.params.iter().chain(self.buffers.iter()) {
            let t = tensors[name].to_dtype(var.dtype())?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian f64 values of every entry.
    pub fn digest(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in self.params.iter().chain(self.buffers.iter()) {
            hasher.update(name.as_bytes());
            for d in var.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Registers freshly initialised parameters under a hierarchical prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    dtype: DType,
    device: Device,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, dtype: DType) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    /// Sub-builder whose names are prefixed with `name.`.
    pub fn pp(&mut self, name: impl AsRef<str>) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
            dtype: self.dtype,
            device: self.device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    fn tensor_from(&self, values: Vec<f64>, shape: Shape) -> Result<Tensor> {
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: impl Into<Shape>, bound: f64) -> Result<Var> {
        let shape = shape.into();
        let values: Vec<f64> = (0..shape.elem_count())
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        let var = Var::from_tensor(&self.tensor_from(values, shape)?)?;
        self.store.insert_param(self.full_name(name), var.clone())?;
        Ok(var)
    }

    pub fn constant(&mut self, name: &str, shape: impl Into<Shape>, value: f64) -> Result<Var> {
        let shape = shape.into();
        let values = vec![value; shape.elem_count()];
        let var = Var::from_tensor(&self.tensor_from(values, shape)?)?;
        self.store.insert_param(self.full_name(name), var.clone())?;
        Ok(var)
    }

    pub fn buffer(&mut self, name: &str, shape: impl Into<Shape>, value: f64) -> Result<Var> {
        let shape = shape.into();
        let values = vec![value; shape.elem_count()];
        let var = Var::from_tensor(&self.tensor_from(values, shape)?)?;
        self.store.insert_buffer(self.full_name(name), var.clone())?;
        Ok(var)
    }

    /// Buffer holding a random unit vector (power-iteration state).
    pub fn unit_buffer(&mut self, name: &str, len: usize) -> Result<Var> {
        let mut values: Vec<f64> = (0..len).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        values.iter_mut().for_each(|v| *v /= norm);
        let var = Var::from_tensor(&self.tensor_from(values, Shape::from(len))?)?;
        self.store.insert_buffer(self.full_name(name), var.clone())?;
        Ok(var)
    }
}

/// Deterministic generator used for all parameter initialisation.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
