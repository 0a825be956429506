use std::sync::Arc;

use candle_core::{Tensor, Var, D};

use super::conv::conv2d_nhwc;
use super::fused::{BatchNormAct, MaxPool2, Standardize};
use super::params::ParamStore;
use crate::error::Result;

/// Square-kernel convolution on `(B, H, W, C)` tensors.
pub struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        ps.push_prefix(name);
        let fan_in = kernel * kernel * in_channels;
        let weight = ps.normal("weight", &[fan_in, out_channels], (2.0 / fan_in as f64).sqrt());
        let bias = if bias { Some(ps.constant("bias", &[out_channels], 0.0)) } else { None };
        ps.pop_prefix();
        Ok(Self { weight: weight?, bias: bias.transpose()?, kernel, stride, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d_nhwc(x, &self.weight, self.kernel, self.stride, self.padding)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        ps.push_prefix(name);
        let weight = ps.normal("weight", &[inputs, outputs], (1.0 / inputs as f64).sqrt());
        let bias = ps.constant("bias", &[outputs], 0.0);
        ps.pop_prefix();
        Ok(Self { weight: weight?, bias: bias? })
    }

    /// `(B, in) → (B, out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Per-sample, per-channel normalisation over the spatial axes, without affine
/// parameters.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let (b, _, _, _) = x.dims4()?;
    Ok(x.contiguous()?.apply_op1(Standardize { groups: b, eps: 1e-5, stats: Arc::default() })?)
}

/// Batch normalisation over `(B, H, W)` with running statistics for
/// evaluation mode.
pub struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        ps.push_prefix(name);
        let gamma = ps.constant("weight", &[channels], 1.0);
        let beta = ps.constant("bias", &[channels], 0.0);
        let running_mean = ps.buffer("running_mean", &[channels], 0.0);
        let running_var = ps.buffer("running_var", &[channels], 1.0);
        ps.pop_prefix();
        Ok(Self { gamma: gamma?, beta: beta?, running_mean: running_mean?, running_var: running_var?, momentum: 0.1 })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.apply(x, train, false)
    }

    /// `relu(forward(x))`, fused in training mode.
    pub fn forward_relu(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.apply(x, train, true)
    }

    fn apply(&self, x: &Tensor, train: bool, relu: bool) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        let flat = x.reshape((b * h * w, c))?;
        let y = if train {
            let stats = Arc::default();
            let op = BatchNormAct { eps: 1e-5, relu, stats: Arc::clone(&stats) };
            let y = flat.contiguous()?.apply_op3(&self.gamma, &self.beta, op)?;
            let stats = stats.lock().expect("statistics lock poisoned").clone();
            let m = self.momentum;
            let n = (b * h * w) as f64;
            let mean: Vec<f32> = stats.iter().map(|s| s.0 as f32).collect();
            let var: Vec<f32> = stats.iter().map(|s| (if n > 1.0 { s.1 * n / (n - 1.0) } else { s.1 }) as f32).collect();
            let dev = x.device();
            self.running_mean.set(&((self.running_mean.as_tensor() * (1.0 - m))? + (Tensor::from_vec(mean, c, dev)? * m)?)?)?;
            self.running_var.set(&((self.running_var.as_tensor() * (1.0 - m))? + (Tensor::from_vec(var, c, dev)? * m)?)?)?;
            y
        } else {
            let scale = (self.running_var.as_tensor() + 1e-5)?.sqrt()?.recip()?;
            let y = flat.broadcast_sub(self.running_mean.as_tensor())?.broadcast_mul(&scale)?;
            let y = y.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?;
            if relu { y.relu()? } else { y }
        };
        Ok(y.reshape((b, h, w, c))?)
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(MaxPool2)?)
}

/// `(B, H, W, C) → (B, C)`.
pub fn avg_pool_global(x: &Tensor) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    Ok(x.reshape((b, h * w, c))?.mean(D::Minus2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn instance_norm_zero_mean_unit_variance() {
        let x = Tensor::from_vec((0..2 * 4 * 4 * 3).map(|i| (i * 7 % 11) as f32).collect::<Vec<_>>(), (2, 4, 4, 3), &Device::Cpu).unwrap();
        let y = instance_norm(&x).unwrap().reshape((2, 16, 3)).unwrap();
        let mean = y.mean(1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let var = y.sqr().unwrap().mean(1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-5));
        assert!(var.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let x = Tensor::from_vec(vec![1f32, 5., 2., 0., 3., 4., 9., 8., 0., 0., 1., 1., 0., 7., 1., 2.], (1, 4, 4, 1), &Device::Cpu).unwrap();
        let y = max_pool2(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(y, vec![5., 9., 7., 2.]);
    }

    #[test]
    fn batch_norm_eval_uses_running_statistics() {
        let mut ps = ParamStore::new(0);
        let bn = BatchNorm::new(&mut ps, "bn", 2).unwrap();
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 1, 2, 2), &Device::Cpu).unwrap();
        // fresh statistics are (0, 1): evaluation is the identity up to eps
        let y = bn.forward(&x, false).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (a, b) in y.iter().zip([1f32, 2., 3., 4.]) {
            assert!((a - b).abs() < 1e-4);
        }
        bn.forward(&x, true).unwrap();
        let mean = ps.tensors()["bn.running_mean"].to_vec1::<f32>().unwrap();
        assert!((mean[0] - 0.2).abs() < 1e-6 && (mean[1] - 0.3).abs() < 1e-6);
    }
}
