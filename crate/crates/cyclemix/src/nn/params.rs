use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named parameters with seeded initialisation.
///
/// Trainable variables and non-trainable buffers (running statistics) are
/// kept apart so that only the former reach the optimiser; both are saved.
pub struct ParamStore {
    trainable: Vec<(String, Var)>,
    buffers: Vec<(String, Var)>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { trainable: Vec::new(), buffers: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed), prefix: Vec::new() }
    }

    pub fn push_prefix(&mut self, p: impl Into<String>) {
        self.prefix.push(p.into());
    }

    pub fn pop_prefix(&mut self) {
        self.prefix.pop();
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    fn register(&mut self, name: &str, data: Vec<f32>, shape: &[usize], trainable: bool) -> Result<Tensor> {
        let full = self.full_name(name);
        if self.get(&full).is_some() {
            return Err(Error::Training(format!("parameter {full} registered twice")));
        }
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &Device::Cpu)?)?;
        let t = var.as_tensor().clone();
        if trainable {
            self.trainable.push((full, var));
        } else {
            self.buffers.push((full, var));
        }
        Ok(t)
    }

    /// Trainable tensor drawn from `N(0, std²)`.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Training(e.to_string()))?;
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        self.register(name, data, shape, true)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        self.register(name, vec![value; shape.iter().product()], shape, true)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Var> {
        self.register(name, vec![value; shape.iter().product()], shape, false)?;
        Ok(self.buffers.last().expect("just pushed").1.clone())
    }

    fn get(&self, name: &str) -> Option<&Var> {
        self.trainable.iter().chain(&self.buffers).find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.trainable.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.trainable.iter().chain(&self.buffers).map(|(n, v)| (n.clone(), v.as_tensor().clone())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path)?;
        Ok(())
    }

    /// Overwrites every registered tensor from a saved file. Missing names or
    /// shape mismatches are errors; extra names in the file are ignored.
    pub fn load(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
        }
        let saved = candle_core::safetensors::load(path, &Device::Cpu)?;
        self.assign(&saved, path)
    }

    pub fn assign(&self, saved: &HashMap<String, Tensor>, origin: &Path) -> Result<()> {
        for (name, var) in self.trainable.iter().chain(&self.buffers) {
            let t = saved
                .get(name)
                .ok_or_else(|| Error::Schema(format!("{}: missing tensor {name}", origin.display())))?;
            if t.dims() != var.dims() {
                return Err(Error::Schema(format!(
                    "{}: tensor {name} has shape {:?}, expected {:?}",
                    origin.display(),
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }
}
