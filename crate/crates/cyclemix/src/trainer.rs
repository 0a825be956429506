//! Classifier training on a fold's source domains and target evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use cyclemix_core::baselines::{cutmix_batch, cutout_batch, mixup_batch};
use cyclemix_core::metrics::{argmax_lowest, top1_percent};
use cyclemix_core::report::EvalResult;
use cyclemix_core::standard::StandardAugment;
use cyclemix_core::{
    apply_cyclemix_minibatch, split_train_val, DomainDataset, DomainSample, FoldPlan, Minibatch, MixPolicy, Raster,
    TranslationProvider,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{soft_cross_entropy, Backbone, Classifier, Normalization, Scorer};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Cyclemix,
    Mixup,
    Cutmix,
    Cutout,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Erm, Method::Cutout, Method::Cutmix, Method::Mixup, Method::Cyclemix];

    pub fn id(self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::Cyclemix => "cyclemix",
            Self::Mixup => "mixup",
            Self::Cutmix => "cutmix",
            Self::Cutout => "cutout",
        }
    }

    /// Row label in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Erm => "ERM",
            Self::Cyclemix => "CycleMix",
            Self::Mixup => "MIXUP",
            Self::Cutmix => "CUTMIX",
            Self::Cutout => "CUTOUT",
        }
    }

    fn pairwise(self) -> bool {
        matches!(self, Self::Mixup | Self::Cutmix)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.id() == s).ok_or_else(|| Error::Config(format!("unknown method {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub backbone: Backbone,
    /// Channels of the first small-CNN block; doubled in each later block.
    pub small_cnn_channels: usize,
    /// Feature-extractor initialisation for the residual backbone.
    pub pretrained: Option<PathBuf>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_interval: usize,
    /// Held-out share of every source domain used for model selection.
    pub val_fraction: f64,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    /// Cutout hole side as a fraction of the image side.
    pub cutout_fraction: f64,
    pub augment: StandardAugment,
    pub normalization: Normalization,
    /// Translate augmented images instead of canonical ones. Needs live
    /// translators; a translation cache only holds canonical images.
    pub translate_after_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::SmallCnn,
            small_cnn_channels: 16,
            pretrained: None,
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            eval_interval: 100,
            val_fraction: 0.1,
            mixup_alpha: 0.2,
            cutmix_alpha: 0.2,
            cutout_fraction: 0.5,
            augment: StandardAugment::default(),
            normalization: Normalization::default(),
            translate_after_augment: false,
        }
    }
}

impl TrainConfig {
    /// ImageNet-initialised residual backbone settings.
    pub fn full_scale() -> Self {
        Self {
            backbone: Backbone::Resnet50,
            steps: 5000,
            batch_size: 32,
            learning_rate: 5e-5,
            eval_interval: 300,
            normalization: Normalization::imagenet(),
            ..Self::default()
        }
    }

    pub fn validate(&self, method: Method) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train.{m}")));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if self.batch_size < 1 || (method.pairwise() && self.batch_size < 2) {
            return bad(format!("batch_size {} too small for {method}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay nonnegative".into());
        }
        if self.eval_interval < 1 {
            return bad("eval_interval must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.cutout_fraction) {
            return bad(format!("cutout_fraction must be in [0, 1], got {}", self.cutout_fraction));
        }
        if self.backbone == Backbone::SmallCnn && self.small_cnn_channels < 1 {
            return bad("small_cnn_channels must be positive".into());
        }
        self.augment.validate()?;
        Ok(())
    }
}

/// Datasets for every domain, with a per-domain count of sample reads.
pub struct DataProvider {
    datasets: Vec<DomainDataset>,
    reads: Mutex<BTreeMap<String, usize>>,
}

impl DataProvider {
    pub fn new(datasets: Vec<DomainDataset>) -> Result<Self> {
        if let Some(first) = datasets.first() {
            for d in &datasets {
                if d.class_names() != first.class_names() {
                    return Err(Error::Schema(format!("domain {} has a different class set", d.domain())));
                }
            }
        }
        Ok(Self { datasets, reads: Mutex::new(BTreeMap::new()) })
    }

    pub fn domains(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.domain().to_string()).collect()
    }

    /// Hands out a domain's samples and records that all of them were read.
    pub fn dataset(&self, domain: &str) -> Result<&DomainDataset> {
        let ds = self
            .datasets
            .iter()
            .find(|d| d.domain() == domain)
            .ok_or_else(|| Error::Schema(format!("no dataset for domain {domain}")))?;
        *self.reads.lock().expect("read counter poisoned").entry(domain.to_string()).or_default() += ds.len();
        Ok(ds)
    }

    pub fn reads(&self, domain: &str) -> usize {
        self.reads.lock().expect("read counter poisoned").get(domain).copied().unwrap_or(0)
    }

    pub fn reset_reads(&self) {
        self.reads.lock().expect("read counter poisoned").clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub val_acc: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters of the best source-validation evaluation.
    pub model: Classifier,
    pub curve: Vec<CurveRow>,
    pub best_val_acc: Option<f64>,
    pub best_step: usize,
    pub checkpoint: Option<PathBuf>,
    pub curve_path: Option<PathBuf>,
}

pub fn checkpoint_name(method: Method, fold_target: &str, seed: u64) -> String {
    format!("clf_{method}_{fold_target}_{seed}.ckpt")
}

pub fn curve_name(method: Method, fold_target: &str, seed: u64) -> String {
    format!("clf_{method}_{fold_target}_{seed}.curve.csv")
}

fn channel_mean(datasets: &[DomainDataset]) -> [f32; 3] {
    let mut acc = [0f64; 3];
    let mut n = 0usize;
    for d in datasets {
        for s in d.samples() {
            for px in s.image.data().chunks_exact(3) {
                for c in 0..3 {
                    acc[c] += px[c] as f64;
                }
                n += 1;
            }
        }
    }
    let n = n.max(1) as f64;
    [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]
}

fn predictions(model: &dyn Scorer, samples: &[&DomainSample]) -> Result<Vec<usize>> {
    let images: Vec<&Raster> = samples.iter().map(|s| &s.image).collect();
    let scores = model.scores(&images)?;
    scores.iter().map(|row| argmax_lowest(row).ok_or_else(|| Error::Training("empty score row".into()))).collect()
}

fn accuracy(model: &dyn Scorer, samples: &[&DomainSample]) -> Result<f64> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(top1_percent(&predictions(model, samples)?, &labels)?)
}

/// Top-1 accuracy of `model` on `dataset`, ties going to the lowest class index.
pub fn evaluate(model: &dyn Scorer, dataset: &DomainDataset, method: &str, seed: u64) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::Core(cyclemix_core::Error::Value(format!("cannot evaluate on empty domain {}", dataset.domain()))));
    }
    if model.num_classes() != dataset.num_classes() {
        return Err(Error::Schema(format!(
            "model has {} classes, domain {} has {}",
            model.num_classes(),
            dataset.domain(),
            dataset.num_classes()
        )));
    }
    let samples: Vec<&DomainSample> = dataset.samples().iter().collect();
    Ok(EvalResult {
        method: method.to_string(),
        target: dataset.domain().to_string(),
        seed,
        top1: accuracy(model, &samples)?,
        n_eval: samples.len(),
    })
}

fn write_curve(path: &Path, curve: &[CurveRow]) -> Result<()> {
    let mut text = String::from("step,train_loss,val_acc\n");
    for r in curve {
        let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{}\n", r.step, r.train_loss, val));
    }
    fs::write(path, text).at(path)
}

struct Batcher<'a> {
    train: &'a [DomainDataset],
}

impl Batcher<'_> {
    /// Items cycle over the source domains, starting at a step-dependent
    /// offset; within a domain the sample is uniform.
    fn draw(&self, step: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<&DomainSample> {
        let s = self.train.len();
        (0..size)
            .map(|i| {
                let d = &self.train[(i + step) % s];
                &d.samples()[rng.random_range(0..d.len())]
            })
            .collect()
    }
}

fn augment_all(batch: &mut Minibatch, augment: &StandardAugment, rng: &mut ChaCha8Rng) {
    if augment.enabled {
        for img in &mut batch.images {
            *img = augment.apply(img, rng);
        }
    }
}

/// Trains a classifier on the fold's source domains with `method`.
///
/// Only source domains are requested from `data`. Every source is split
/// into train/validation parts; the returned model is the parameter set with
/// the best validation accuracy (the last one when there is no validation
/// data). `translations` is required for CycleMix.
pub fn train_classifier(
    fold: &FoldPlan,
    data: &DataProvider,
    translations: Option<&dyn TranslationProvider>,
    mix: &MixPolicy,
    method: Method,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate(method)?;
    mix.validate()?;
    fold.validate()?;
    let provider = match (method, translations) {
        (Method::Cyclemix, None) => {
            return Err(Error::Config("method cyclemix needs a translator registry or cache".into()));
        }
        (_, p) => p,
    };

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, src) in fold.sources.iter().enumerate() {
        let ds = data.dataset(src)?;
        ds.ensure_nonempty()?;
        let (t, v) = split_train_val(ds, cfg.val_fraction, cfg.seed.wrapping_add(i as u64))?;
        if t.is_empty() {
            return Err(Error::Config(format!("source {src} has no training samples after the validation split")));
        }
        train.push(t);
        val.push(v);
    }
    let num_classes = train[0].num_classes();
    let fill = channel_mean(&train);
    let val_samples: Vec<&DomainSample> = val.iter().flat_map(|d| d.samples()).collect();

    let model = Classifier::new(cfg.backbone, num_classes, cfg.small_cnn_channels, cfg.normalization.clone(), cfg.seed)?;
    if let Some(path) = &cfg.pretrained {
        model.load_pretrained(path)?;
    }
    let mut opt = AdamW::new(
        model.params().trainable(),
        ParamsAdamW { lr: cfg.learning_rate, weight_decay: cfg.weight_decay, ..ParamsAdamW::default() },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c1a5);
    let batcher = Batcher { train: &train };

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, HashMap<String, Tensor>)> = None;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut last_finite: Option<(usize, f64)> = None;
    for step in 0..cfg.steps {
        let items = batcher.draw(step, cfg.batch_size, &mut rng);
        let mut batch = Minibatch::from_samples(items, num_classes)?;
        let mix_canonical = method == Method::Cyclemix && !cfg.translate_after_augment;
        if mix_canonical {
            batch = apply_cyclemix_minibatch(&batch, provider.expect("checked above"), fold, mix, &mut rng)?;
        }
        augment_all(&mut batch, &cfg.augment, &mut rng);
        batch = match method {
            Method::Erm => batch,
            Method::Cyclemix if mix_canonical => batch,
            Method::Cyclemix => apply_cyclemix_minibatch(&batch, provider.expect("checked above"), fold, mix, &mut rng)?,
            Method::Mixup => mixup_batch(&batch, cfg.mixup_alpha, &mut rng)?,
            Method::Cutmix => cutmix_batch(&batch, cfg.cutmix_alpha, &mut rng)?,
            Method::Cutout => {
                let side = batch.images[0].height().min(batch.images[0].width());
                let hole = (cfg.cutout_fraction * side as f64).round() as usize;
                cutout_batch(&batch, hole, fill, &mut rng)?
            }
        };

        let x = model.prepare(&batch.images.iter().collect::<Vec<_>>())?;
        let targets: Vec<f32> = batch.targets.iter().flat_map(|t| t.to_distribution(num_classes)).map(|v| v as f32).collect();
        let y = Tensor::from_vec(targets, (batch.len(), num_classes), &Device::Cpu)?;
        let loss = soft_cross_entropy(&model.forward(&x, true)?, &y)?;
        let value = loss.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            let last = last_finite.map(|(s, l)| format!("step {s} loss {l}")).unwrap_or_else(|| "none".into());
            return Err(Error::Training(format!("non-finite loss at step {}; last finite: {last}", step + 1)));
        }
        opt.backward_step(&loss)?;
        last_finite = Some((step + 1, value));
        loss_sum += value;
        loss_n += 1;

        if (step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps {
            let val_acc = if val_samples.is_empty() { None } else { Some(accuracy(&model, &val_samples)?) };
            let better = match (&best, val_acc) {
                (None, _) => true,
                (Some((b, _, _)), Some(v)) => v > *b,
                (Some(_), None) => true,
            };
            if better {
                best = Some((val_acc.unwrap_or(f64::NEG_INFINITY), step + 1, model.snapshot()?));
            }
            curve.push(CurveRow { step: step + 1, train_loss: loss_sum / loss_n as f64, val_acc });
            loss_sum = 0.0;
            loss_n = 0;
            log::debug!("{method} target={} step {} loss {:.4} val {:?}", fold.target, step + 1, value, val_acc);
        }
    }

    let (best_acc, best_step, snapshot) = best.expect("the final step always evaluates");
    model.restore(&snapshot)?;
    let best_val_acc = if best_acc.is_finite() { Some(best_acc) } else { None };
    let (mut checkpoint, mut curve_path) = (None, None);
    if let Some(dir) = out {
        fs::create_dir_all(dir).at(dir)?;
        let ckpt = dir.join(checkpoint_name(method, &fold.target, cfg.seed));
        model.save(&ckpt)?;
        let cp = dir.join(curve_name(method, &fold.target, cfg.seed));
        write_curve(&cp, &curve)?;
        checkpoint = Some(ckpt);
        curve_path = Some(cp);
    }
    Ok(TrainOutcome { model, curve, best_val_acc, best_step, checkpoint, curve_path })
}
