//! Cycle-consistent adversarial training of one translator pair.
//!
//! Generators and discriminators are channel-last. Generators work in
//! `[-1, 1]` internally and take/return `[0, 1]` images at their boundary.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use cyclemix_core::{DomainDataset, Raster, TranslatorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::nn::{instance_norm, rasters_to_tensor, tensor_to_rasters, upsample2_nhwc, Conv, ParamStore};
use crate::translators::{Manifest, ManifestEntry, TranslatorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorArch {
    /// Three residual blocks.
    Small,
    /// Nine residual blocks.
    Full,
}

impl GeneratorArch {
    pub fn residual_blocks(self) -> usize {
        match self {
            Self::Small => 3,
            Self::Full => 9,
        }
    }
}

/// PatchGAN descriptor: `layers` stride-2 blocks followed by a stride-1 block
/// and a one-channel score map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 16, layers: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub generator_arch: GeneratorArch,
    pub generator_channels: usize,
    pub discriminator: DiscriminatorConfig,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub buffer_size: usize,
    pub seed: u64,
    /// Curve rows are written every `log_interval` steps (and at the last step).
    pub log_interval: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            generator_arch: GeneratorArch::Small,
            generator_channels: 8,
            discriminator: DiscriminatorConfig::default(),
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
            steps: 500,
            batch_size: 1,
            learning_rate: 2e-4,
            buffer_size: 50,
            seed: 0,
            log_interval: 1,
        }
    }
}

impl GanConfig {
    /// Nine residual blocks, 64 base channels, 70×70-style discriminator.
    pub fn full() -> Self {
        Self {
            generator_arch: GeneratorArch::Full,
            generator_channels: 64,
            discriminator: DiscriminatorConfig { base_channels: 64, layers: 3 },
            steps: 20_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gan.{m}")));
        if self.steps < 1 {
            return bad("steps must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lambda_cycle >= 0.0) || !(self.lambda_identity >= 0.0) {
            return bad("loss weights must be nonnegative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.generator_channels < 1 || self.discriminator.base_channels < 1 || self.discriminator.layers < 1 {
            return bad("channel and layer counts must be positive");
        }
        if self.log_interval < 1 {
            return bad("log_interval must be at least 1");
        }
        Ok(())
    }

    /// Identity loss at half the cycle weight.
    pub fn with_identity(mut self) -> Self {
        self.lambda_identity = 0.5 * self.lambda_cycle;
        self
    }
}

/// Constant rate for the first half of training, then linear decay to zero.
pub fn learning_rate_at(base: f64, step: usize, steps: usize) -> f64 {
    let half = steps / 2;
    if step < half {
        base
    } else {
        base * (steps - step) as f64 / (steps - half) as f64
    }
}

/// Generator hyper-parameters persisted alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorShape {
    pub channels: usize,
    pub residual_blocks: usize,
}

pub struct Generator {
    shape: GeneratorShape,
    params: ParamStore,
    stem: Conv,
    down: Vec<Conv>,
    blocks: Vec<(Conv, Conv)>,
    up: Vec<Conv>,
    head: Conv,
}

const ARCH_TENSOR: &str = "arch";

impl Generator {
    pub fn new(shape: GeneratorShape, seed: u64) -> Result<Self> {
        let mut ps = ParamStore::new(seed);
        let arch = ps.buffer(ARCH_TENSOR, &[2], 0.0)?;
        arch.set(&Tensor::new(&[shape.channels as f32, shape.residual_blocks as f32], &Device::Cpu)?)?;
        let c = shape.channels;
        let stem = Conv::new(&mut ps, "stem", 3, c, 7, 1, 3, true)?;
        let down = vec![
            Conv::new(&mut ps, "down0", c, 2 * c, 3, 2, 1, true)?,
            Conv::new(&mut ps, "down1", 2 * c, 4 * c, 3, 2, 1, true)?,
        ];
        let mut blocks = Vec::new();
        for i in 0..shape.residual_blocks {
            blocks.push((
                Conv::new(&mut ps, &format!("res{i}.a"), 4 * c, 4 * c, 3, 1, 1, true)?,
                Conv::new(&mut ps, &format!("res{i}.b"), 4 * c, 4 * c, 3, 1, 1, true)?,
            ));
        }
        let up = vec![
            Conv::new(&mut ps, "up0", 4 * c, 2 * c, 3, 1, 1, true)?,
            Conv::new(&mut ps, "up1", 2 * c, c, 3, 1, 1, true)?,
        ];
        let head = Conv::new(&mut ps, "head", c, 3, 7, 1, 3, true)?;
        Ok(Self { shape, params: ps, stem, down, blocks, up, head })
    }

    pub fn shape(&self) -> GeneratorShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `[-1, 1] → [-1, 1]` on `(B, H, W, 3)`; `H` and `W` must be multiples of 4.
    pub fn forward_internal(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h, w, _) = x.dims4()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Core(cyclemix_core::Error::Value(format!("generator input {h}x{w} is not a multiple of 4"))));
        }
        let mut y = instance_norm(&self.stem.forward(x)?)?.relu()?;
        for conv in &self.down {
            y = instance_norm(&conv.forward(&y)?)?.relu()?;
        }
        for (a, b) in &self.blocks {
            let r = instance_norm(&a.forward(&y)?)?.relu()?;
            let r = instance_norm(&b.forward(&r)?)?;
            y = (y + r)?;
        }
        for conv in &self.up {
            y = instance_norm(&conv.forward(&upsample2_nhwc(&y)?)?)?.relu()?;
        }
        Ok(self.head.forward(&y)?.tanh()?)
    }

    /// Translates `[0, 1]` rasters one at a time, so results do not depend on
    /// how inputs are grouped.
    pub fn translate(&self, image: &Raster) -> Result<Raster> {
        let x = to_internal(&rasters_to_tensor(&[image])?)?;
        let y = to_unit(&self.forward_internal(&x)?)?;
        let mut out = tensor_to_rasters(&y)?.pop().expect("one image in, one out");
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
        }
        let saved = candle_core::safetensors::load(path, &Device::Cpu)?;
        let arch = saved
            .get(ARCH_TENSOR)
            .ok_or_else(|| Error::Schema(format!("{}: not a generator checkpoint", path.display())))?
            .to_vec1::<f32>()?;
        let shape = GeneratorShape { channels: arch[0] as usize, residual_blocks: arch[1] as usize };
        let g = Self::new(shape, 0)?;
        g.params.assign(&saved, path)?;
        Ok(g)
    }
}

pub struct Discriminator {
    params: ParamStore,
    layers: Vec<(Conv, bool)>,
    head: Conv,
}

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        let mut ps = ParamStore::new(seed);
        let mut layers = Vec::new();
        let mut c_in = 3;
        let mut c_out = cfg.base_channels;
        for i in 0..cfg.layers {
            layers.push((Conv::new(&mut ps, &format!("d{i}"), c_in, c_out, 4, 2, 1, true)?, i > 0));
            c_in = c_out;
            c_out *= 2;
        }
        layers.push((Conv::new(&mut ps, "d_last", c_in, c_out, 4, 1, 1, true)?, true));
        let head = Conv::new(&mut ps, "score", c_out, 1, 4, 1, 1, true)?;
        Ok(Self { params: ps, layers, head })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Patch scores for `[-1, 1]` inputs.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (conv, norm) in &self.layers {
            y = conv.forward(&y)?;
            if *norm {
                y = instance_norm(&y)?;
            }
            y = leaky_relu(&y, 0.2)?;
        }
        self.head.forward(&y)
    }
}

fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

fn to_internal(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(2.0, -1.0)?)
}

fn to_unit(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.5)?)
}

fn mean_sq_offset(t: &Tensor, target: f64) -> Result<Tensor> {
    Ok((t - target)?.sqr()?.mean_all()?)
}

/// Least-squares generator loss `mean((d_fake − 1)²)`.
pub fn generator_adversarial_loss(d_fake: &Tensor) -> Result<Tensor> {
    mean_sq_offset(d_fake, 1.0)
}

/// Least-squares discriminator loss `½ mean((d_real − 1)²) + ½ mean(d_fake²)`.
pub fn discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    Ok(((mean_sq_offset(d_real, 1.0)? + mean_sq_offset(d_fake, 0.0)?)? * 0.5)?)
}

fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Replay buffer of past generator outputs shown to the discriminator.
pub struct ImageBuffer {
    capacity: usize,
    stored: Vec<Tensor>,
}

impl ImageBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, stored: Vec::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    /// For each image of the `(B, H, W, C)` batch: while filling, store it and
    /// return it; once full, with probability ½ return a stored image and put
    /// the new one in its place, otherwise return the new image.
    pub fn query<R: Rng + ?Sized>(&mut self, images: &Tensor, rng: &mut R) -> Result<Tensor> {
        if self.capacity == 0 {
            return Ok(images.clone());
        }
        let b = images.dim(0)?;
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let img = images.narrow(0, i, 1)?.detach();
            if self.stored.len() < self.capacity {
                self.stored.push(img.clone());
                out.push(img);
            } else if rng.random_bool(0.5) {
                let slot = rng.random_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.stored[slot], img));
            } else {
                out.push(img);
            }
        }
        Ok(Tensor::cat(&out, 0)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTrainState {
    pub step: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub loss_cycle: f64,
    pub checkpoint_paths: Option<(PathBuf, PathBuf)>,
}

/// Where checkpoints and the loss curve of a pair are written.
#[derive(Debug, Clone)]
pub struct PairOutput {
    pub dir: PathBuf,
    pub fold_target: String,
}

pub fn checkpoint_name(fold_target: &str, id: &TranslatorId) -> String {
    format!("gan_{fold_target}_{}__to__{}.ckpt", id.src, id.dst)
}

pub fn curve_name(fold_target: &str, a: &str, b: &str) -> String {
    format!("gan_{fold_target}_{a}__{b}.curve.csv")
}

pub struct LearnedTranslator {
    pub id: TranslatorId,
    pub generator: Generator,
    pub checkpoint: Option<PathBuf>,
}

pub struct TrainedPair {
    pub forward: LearnedTranslator,
    pub backward: LearnedTranslator,
    pub curve: Vec<GanTrainState>,
    pub curve_path: Option<PathBuf>,
}

fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(vars, ParamsAdamW { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 })?)
}

fn minibatch(ds: &DomainDataset, n: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let picks: Vec<&Raster> = (0..n).map(|_| &ds.samples()[rng.random_range(0..ds.len())].image).collect();
    to_internal(&rasters_to_tensor(&picks)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_scalar::<f32>()? as f64)
}

fn write_curve(path: &Path, curve: &[GanTrainState]) -> Result<()> {
    let mut text = String::from("step,loss_G,loss_D,loss_cycle\n");
    for s in curve {
        text.push_str(&format!("{},{},{},{}\n", s.step, s.loss_g, s.loss_d, s.loss_cycle));
    }
    fs::write(path, text).at(path)
}

/// Trains the translators `a → b` and `b → a`.
///
/// `loss_G` in the curve is the summed adversarial generator loss of both
/// directions, `loss_D` the summed discriminator loss, and `loss_cycle` the
/// mean L1 reconstruction error of both directions in generator space
/// (`[-1, 1]`). Non-finite losses abort with the last finite state.
pub fn train_pair(a: &DomainDataset, b: &DomainDataset, cfg: &GanConfig, out: Option<&PairOutput>) -> Result<TrainedPair> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Core(cyclemix_core::Error::Value(format!(
            "translator training needs nonempty domains, got {} ({}) and {} ({})",
            a.domain(),
            a.len(),
            b.domain(),
            b.len()
        ))));
    }
    let ab = TranslatorId::new(a.domain(), b.domain())?;
    let ba = ab.reversed();
    let shape = GeneratorShape { channels: cfg.generator_channels, residual_blocks: cfg.generator_arch.residual_blocks() };
    let g_ab = Generator::new(shape, cfg.seed.wrapping_mul(4).wrapping_add(1))?;
    let g_ba = Generator::new(shape, cfg.seed.wrapping_mul(4).wrapping_add(2))?;
    let d_a = Discriminator::new(&cfg.discriminator, cfg.seed.wrapping_mul(4).wrapping_add(3))?;
    let d_b = Discriminator::new(&cfg.discriminator, cfg.seed.wrapping_mul(4).wrapping_add(4))?;
    let mut g_vars = g_ab.params().trainable();
    g_vars.extend(g_ba.params().trainable());
    let mut d_vars = d_a.params().trainable();
    d_vars.extend(d_b.params().trainable());
    let mut opt_g = adam(g_vars, cfg.learning_rate)?;
    let mut opt_d = adam(d_vars, cfg.learning_rate)?;
    let mut pool_a = ImageBuffer::new(cfg.buffer_size);
    let mut pool_b = ImageBuffer::new(cfg.buffer_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut curve = Vec::new();
    let mut last_finite: Option<GanTrainState> = None;
    for step in 0..cfg.steps {
        let lr = learning_rate_at(cfg.learning_rate, step, cfg.steps);
        opt_g.set_learning_rate(lr);
        opt_d.set_learning_rate(lr);
        let real_a = minibatch(a, cfg.batch_size, &mut rng)?;
        let real_b = minibatch(b, cfg.batch_size, &mut rng)?;

        let fake_b = g_ab.forward_internal(&real_a)?;
        let rec_a = g_ba.forward_internal(&fake_b)?;
        let fake_a = g_ba.forward_internal(&real_b)?;
        let rec_b = g_ab.forward_internal(&fake_a)?;
        let adv = (generator_adversarial_loss(&d_b.forward(&fake_b)?)? + generator_adversarial_loss(&d_a.forward(&fake_a)?)?)?;
        let cycle = (l1(&rec_a, &real_a)? + l1(&rec_b, &real_b)?)?;
        let mut total = (&adv + (&cycle * cfg.lambda_cycle)?)?;
        if cfg.lambda_identity > 0.0 {
            let idt = (l1(&g_ab.forward_internal(&real_b)?, &real_b)? + l1(&g_ba.forward_internal(&real_a)?, &real_a)?)?;
            total = (total + (idt * cfg.lambda_identity)?)?;
        }
        let (loss_g, loss_cycle) = (scalar(&adv)?, scalar(&cycle)? / 2.0);
        let total_value = scalar(&total)?;
        if !total_value.is_finite() {
            return Err(diverged(step, last_finite));
        }
        opt_g.backward_step(&total)?;

        let pooled_b = pool_b.query(&fake_b, &mut rng)?;
        let pooled_a = pool_a.query(&fake_a, &mut rng)?;
        let loss_d = (discriminator_loss(&d_b.forward(&real_b)?, &d_b.forward(&pooled_b)?)?
            + discriminator_loss(&d_a.forward(&real_a)?, &d_a.forward(&pooled_a)?)?)?;
        let loss_d_value = scalar(&loss_d)?;
        if !loss_d_value.is_finite() {
            return Err(diverged(step, last_finite));
        }
        opt_d.backward_step(&loss_d)?;

        let state = GanTrainState { step: step + 1, loss_g, loss_d: loss_d_value, loss_cycle, checkpoint_paths: None };
        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps {
            curve.push(state.clone());
        }
        last_finite = Some(state);
    }

    let mut forward = LearnedTranslator { id: ab.clone(), generator: g_ab, checkpoint: None };
    let mut backward = LearnedTranslator { id: ba.clone(), generator: g_ba, checkpoint: None };
    let mut curve_path = None;
    if let Some(out) = out {
        fs::create_dir_all(&out.dir).at(&out.dir)?;
        for t in [&mut forward, &mut backward] {
            let path = out.dir.join(checkpoint_name(&out.fold_target, &t.id));
            t.generator.save(&path)?;
            t.checkpoint = Some(path);
        }
        if let Some(last) = curve.last_mut() {
            last.checkpoint_paths = Some((forward.checkpoint.clone().unwrap(), backward.checkpoint.clone().unwrap()));
        }
        let path = out.dir.join(curve_name(&out.fold_target, &ab.src, &ab.dst));
        write_curve(&path, &curve)?;
        curve_path = Some(path);
    }
    Ok(TrainedPair { forward, backward, curve, curve_path })
}

fn diverged(step: usize, last: Option<GanTrainState>) -> Error {
    match last {
        Some(s) => Error::Training(format!(
            "non-finite loss at step {}; last finite state: step {} loss_G {} loss_D {} loss_cycle {}",
            step + 1,
            s.step,
            s.loss_g,
            s.loss_d,
            s.loss_cycle
        )),
        None => Error::Training(format!("non-finite loss at step {}; no finite state recorded", step + 1)),
    }
}

/// Appends both directed translators of `pair` to the manifest at
/// `manifest_path` and rewrites it. Checkpoint paths are stored relative to
/// the manifest when possible.
pub fn export_pair(pair: &TrainedPair, manifest_path: &Path) -> Result<Manifest> {
    let mut manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    for t in [&pair.forward, &pair.backward] {
        let ckpt = t
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Schema(format!("translator {} has no checkpoint to export", t.id)))?;
        let rel = ckpt.strip_prefix(base).unwrap_or(ckpt);
        manifest.add(ManifestEntry {
            src: t.id.src.clone(),
            dst: t.id.dst.clone(),
            kind: TranslatorKind::Learned,
            path_or_name: rel.to_string_lossy().into_owned(),
        })?;
    }
    manifest.write(manifest_path)?;
    Ok(manifest)
}

/// Mean per-pixel L1 distance between two equally sized image lists.
pub fn mean_l1(a: &[Raster], b: &[Raster]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += cyclemix_core::losses::cycle_loss(x, y)?;
    }
    Ok(total / a.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cyclemix_core::losses::adversarial_losses;
    use cyclemix_core::synth::{generate_synthetic_domains, Style, SyntheticStyleSpec};

    fn scores(v: &[f32]) -> Tensor {
        Tensor::from_vec(v.to_vec(), (1, v.len(), 1, 1), &Device::Cpu).unwrap()
    }

    #[test]
    fn tensor_losses_match_closed_form() {
        for (real, fake) in [(vec![1f32; 4], vec![0f32; 4]), (vec![1.0; 4], vec![1.0; 4]), (vec![0.5; 4], vec![0.5; 4]), (vec![0.3, 1.7, -0.2, 0.9], vec![0.1, 0.4, 1.2, -0.6])] {
            let (want_d, want_g) = adversarial_losses(&real, &fake).unwrap();
            let d = scalar(&discriminator_loss(&scores(&real), &scores(&fake)).unwrap()).unwrap();
            let g = scalar(&generator_adversarial_loss(&scores(&fake)).unwrap()).unwrap();
            assert!((d - want_d).abs() < 1e-6 && (g - want_g).abs() < 1e-6, "{d} {want_d} {g} {want_g}");
        }
    }

    #[test]
    fn learning_rate_schedule() {
        assert_eq!(learning_rate_at(1.0, 0, 10), 1.0);
        assert_eq!(learning_rate_at(1.0, 4, 10), 1.0);
        assert_eq!(learning_rate_at(1.0, 5, 10), 1.0);
        assert!((learning_rate_at(1.0, 9, 10) - 0.2).abs() < 1e-12);
        assert_eq!(learning_rate_at(1.0, 0, 1), 1.0);
    }

    #[test]
    fn buffer_never_exceeds_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ImageBuffer::new(3);
        for i in 0..10 {
            let t = Tensor::full(i as f32, (2, 2, 2, 3), &Device::Cpu).unwrap();
            let out = buf.query(&t, &mut rng).unwrap();
            assert_eq!(out.dims(), &[2, 2, 2, 3]);
            assert!(buf.len() <= 3);
        }
        let mut empty = ImageBuffer::new(0);
        let t = Tensor::ones((1, 2, 2, 3), candle_core::DType::F32, &Device::Cpu).unwrap();
        empty.query(&t, &mut rng).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn generator_output_in_unit_range_and_shape_preserved() {
        let g = Generator::new(GeneratorShape { channels: 4, residual_blocks: 1 }, 0).unwrap();
        let x = Raster::from_vec(16, 12, (0..16 * 12 * 3).map(|i| (i % 13) as f32 / 12.0).collect()).unwrap();
        let y = g.translate(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.in_range(0.0, 1.0));
        assert!(g.translate(&Raster::zeros(10, 12)).is_err());
    }

    #[test]
    fn discriminator_scores_patches() {
        let d = Discriminator::new(&DiscriminatorConfig { base_channels: 4, layers: 2 }, 0).unwrap();
        let s = d.forward(&Tensor::zeros((2, 32, 32, 3), candle_core::DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert_eq!(s.dims(), &[2, 6, 6, 1]);
    }

    fn tiny_domains() -> (DomainDataset, DomainDataset) {
        let spec = SyntheticStyleSpec {
            n_classes: 2,
            styles: vec![Style::FlatFill, Style::Inverted],
            samples_per_class_per_style: 2,
            image_size: 16,
        };
        let mut ds = generate_synthetic_domains(&spec, 0).unwrap();
        let b = ds.pop().unwrap();
        (ds.pop().unwrap(), b)
    }

    #[test]
    fn one_step_run_writes_checkpoints_and_curve() {
        let (a, b) = tiny_domains();
        let dir = tempfile::tempdir().unwrap();
        let cfg = GanConfig { steps: 1, generator_channels: 4, discriminator: DiscriminatorConfig { base_channels: 4, layers: 1 }, ..GanConfig::default() };
        let out = PairOutput { dir: dir.path().to_path_buf(), fold_target: "outline".into() };
        let pair = train_pair(&a, &b, &cfg, Some(&out)).unwrap();
        assert_eq!(pair.curve.len(), 1);
        let ckpt = dir.path().join("gan_outline_flat-fill__to__inverted.ckpt");
        assert!(ckpt.is_file());
        assert!(dir.path().join("gan_outline_inverted__to__flat-fill.ckpt").is_file());
        let curve = fs::read_to_string(pair.curve_path.as_ref().unwrap()).unwrap();
        assert!(curve.starts_with("step,loss_G,loss_D,loss_cycle\n"));
        assert_eq!(curve.lines().count(), 2);

        let x = &a.samples()[0].image;
        let before = pair.forward.generator.translate(x).unwrap();
        let reloaded = Generator::load(&ckpt).unwrap();
        assert_eq!(reloaded.translate(x).unwrap(), before);
    }

    #[test]
    fn empty_domain_is_rejected() {
        let (a, b) = tiny_domains();
        let empty = b.subset(&[]);
        let cfg = GanConfig { steps: 1, ..GanConfig::default() };
        assert!(train_pair(&a, &empty, &cfg, None).is_err());
    }

    #[test]
    fn same_seed_same_translators() {
        let (a, b) = tiny_domains();
        let cfg = GanConfig { steps: 2, generator_channels: 4, discriminator: DiscriminatorConfig { base_channels: 4, layers: 1 }, ..GanConfig::default() };
        let p = train_pair(&a, &b, &cfg, None).unwrap();
        let q = train_pair(&a, &b, &cfg, None).unwrap();
        let x = &a.samples()[1].image;
        assert_eq!(p.forward.generator.translate(x).unwrap(), q.forward.generator.translate(x).unwrap());
        assert_eq!(p.curve, q.curve);
    }
}
