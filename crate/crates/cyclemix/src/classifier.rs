//! Classifier `h = f ∘ g`: a convolutional feature extractor followed by a
//! linear head.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor, D};
use cyclemix_core::baselines::normalize;
use cyclemix_core::Raster;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{avg_pool_global, max_pool2, rasters_to_tensor, BatchNorm, Conv, Linear, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Four conv–ReLU–max-pool blocks.
    SmallCnn,
    /// Bottleneck residual network with [3, 4, 6, 3] blocks.
    Resnet50,
}

/// Per-channel input normalisation applied after augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.5; 3] }
    }
}

impl Normalization {
    pub fn imagenet() -> Self {
        Self { mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] }
    }
}

struct SmallCnn {
    blocks: Vec<(Conv, BatchNorm)>,
    width: usize,
}

impl SmallCnn {
    fn new(ps: &mut ParamStore, base: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c_in = 3;
        for i in 0..4 {
            let c_out = base << i;
            let conv = Conv::new(ps, &format!("features.{i}.conv"), c_in, c_out, 3, 1, 1, false)?;
            blocks.push((conv, BatchNorm::new(ps, &format!("features.{i}.bn"), c_out)?));
            c_in = c_out;
        }
        Ok(Self { blocks, width: c_in })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = x.clone();
        for (conv, bn) in &self.blocks {
            y = max_pool2(&bn.forward_relu(&conv.forward(&y)?, train)?)?;
        }
        avg_pool_global(&y)
    }
}

struct Bottleneck {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    conv3: Conv,
    bn3: BatchNorm,
    downsample: Option<(Conv, BatchNorm)>,
}

impl Bottleneck {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, width: usize, stride: usize) -> Result<Self> {
        ps.push_prefix(name);
        let c_out = 4 * width;
        let block = (|| {
            Ok(Self {
                conv1: Conv::new(ps, "conv1", c_in, width, 1, 1, 0, false)?,
                bn1: BatchNorm::new(ps, "bn1", width)?,
                conv2: Conv::new(ps, "conv2", width, width, 3, stride, 1, false)?,
                bn2: BatchNorm::new(ps, "bn2", width)?,
                conv3: Conv::new(ps, "conv3", width, c_out, 1, 1, 0, false)?,
                bn3: BatchNorm::new(ps, "bn3", c_out)?,
                downsample: if stride != 1 || c_in != c_out {
                    Some((Conv::new(ps, "downsample.0", c_in, c_out, 1, stride, 0, false)?, BatchNorm::new(ps, "downsample.1", c_out)?))
                } else {
                    None
                },
            })
        })();
        ps.pop_prefix();
        block
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward_relu(&self.conv1.forward(x)?, train)?;
        let y = self.bn2.forward_relu(&self.conv2.forward(&y)?, train)?;
        let y = self.bn3.forward(&self.conv3.forward(&y)?, train)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

struct ResNet50 {
    conv1: Conv,
    bn1: BatchNorm,
    layers: Vec<Bottleneck>,
}

/// 3×3, stride-2, padding-1 max pooling of nonnegative inputs.
fn max_pool3_s2(x: &Tensor) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let ho = (h + 2 - 3) / 2 + 1;
    let wo = (w + 2 - 3) / 2 + 1;
    let padded = x.pad_with_zeros(1, 1, 1)?.pad_with_zeros(2, 1, 1)?;
    let mut out: Option<Tensor> = None;
    for ky in 0..3 {
        for kx in 0..3 {
            // rows ky, ky+2, …; the zero padding is neutral after ReLU
            let win = padded.narrow(1, ky, 2 * ho - 1)?.narrow(2, kx, 2 * wo - 1)?;
            let win = win.pad_with_zeros(1, 0, 1)?.pad_with_zeros(2, 0, 1)?;
            let win = win.reshape((b, ho, 2, wo, 2, c))?.narrow(2, 0, 1)?.narrow(4, 0, 1)?.reshape((b, ho, wo, c))?;
            out = Some(match out {
                Some(o) => o.maximum(&win)?,
                None => win,
            });
        }
    }
    Ok(out.expect("nine windows"))
}

impl ResNet50 {
    const BLOCKS: [usize; 4] = [3, 4, 6, 3];

    fn new(ps: &mut ParamStore) -> Result<Self> {
        let conv1 = Conv::new(ps, "conv1", 3, 64, 7, 2, 3, false)?;
        let bn1 = BatchNorm::new(ps, "bn1", 64)?;
        let mut layers = Vec::new();
        let mut c_in = 64;
        for (stage, &n) in Self::BLOCKS.iter().enumerate() {
            let width = 64 << stage;
            for i in 0..n {
                let stride = if i == 0 && stage > 0 { 2 } else { 1 };
                layers.push(Bottleneck::new(ps, &format!("layer{}.{i}", stage + 1), c_in, width, stride)?);
                c_in = 4 * width;
            }
        }
        Ok(Self { conv1, bn1, layers })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = max_pool3_s2(&self.bn1.forward_relu(&self.conv1.forward(x)?, train)?)?;
        for block in &self.layers {
            y = block.forward(&y, train)?;
        }
        avg_pool_global(&y)
    }
}

enum Features {
    Small(SmallCnn),
    Resnet(ResNet50),
}

/// Anything that maps images to class scores.
pub trait Scorer {
    fn num_classes(&self) -> usize;
    /// Row-major `(N, K)` scores for `[0, 1]` images.
    fn scores(&self, images: &[&Raster]) -> Result<Vec<Vec<f32>>>;
}

pub struct Classifier {
    params: ParamStore,
    features: Features,
    head: Linear,
    num_classes: usize,
    normalization: Normalization,
}

impl Classifier {
    pub fn new(backbone: Backbone, num_classes: usize, small_channels: usize, normalization: Normalization, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {num_classes}")));
        }
        let mut ps = ParamStore::new(seed);
        let (features, width) = match backbone {
            Backbone::SmallCnn => {
                let net = SmallCnn::new(&mut ps, small_channels)?;
                let w = net.width;
                (Features::Small(net), w)
            }
            Backbone::Resnet50 => (Features::Resnet(ResNet50::new(&mut ps)?), 2048),
        };
        let head = Linear::new(&mut ps, "fc", width, num_classes)?;
        Ok(Self { params: ps, features, head, num_classes, normalization })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Normalised `(B, H, W, 3)` input tensor.
    pub fn prepare(&self, images: &[&Raster]) -> Result<Tensor> {
        let n = &self.normalization;
        let normed = images.iter().map(|im| normalize(im, n.mean, n.std)).collect::<cyclemix_core::Result<Vec<_>>>()?;
        rasters_to_tensor(&normed.iter().collect::<Vec<_>>())
    }

    /// Logits `(B, K)` for a prepared input.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let f = match &self.features {
            Features::Small(net) => net.forward(x, train)?,
            Features::Resnet(net) => net.forward(x, train)?,
        };
        self.head.forward(&f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load_weights(&self, path: &Path) -> Result<()> {
        self.params.load(path)
    }

    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.params.tensors().into_iter().map(|(k, v)| Ok((k, v.copy()?))).collect()
    }

    pub fn restore(&self, snapshot: &HashMap<String, Tensor>) -> Result<()> {
        self.params.assign(snapshot, Path::new("<snapshot>"))
    }

    /// Loads feature-extractor weights stored in the common `(O, C, kH, kW)`
    /// convolution layout (for instance an ImageNet checkpoint converted to
    /// safetensors). The classification head is kept freshly initialised.
    pub fn load_pretrained(&self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "pretrained weights not found")));
        }
        let saved = candle_core::safetensors::load(path, &Device::Cpu)?;
        let mut converted = HashMap::new();
        for (name, current) in self.params.tensors() {
            if name.starts_with("fc.") {
                converted.insert(name, current);
                continue;
            }
            let t = saved.get(&name).ok_or_else(|| Error::Schema(format!("{}: missing tensor {name}", path.display())))?;
            let t = if t.rank() == 4 {
                let (o, c, kh, kw) = t.dims4()?;
                t.permute((2, 3, 1, 0))?.reshape((kh * kw * c, o))?
            } else {
                t.clone()
            };
            converted.insert(name, t);
        }
        self.params.assign(&converted, path)
    }
}

impl Scorer for Classifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn scores(&self, images: &[&Raster]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let logits = self.forward(&self.prepare(chunk)?, false)?;
            out.extend(logits.to_vec2::<f32>()?);
        }
        Ok(out)
    }
}

/// Mean soft-label cross-entropy `−Σ_k y_k log softmax(z)_k`.
pub fn soft_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let log_p = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    Ok((log_p * targets)?.sum(D::Minus1)?.neg()?.mean_all()?)
}
