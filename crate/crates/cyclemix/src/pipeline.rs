//! Pipeline stages behind the subcommands, and the output layout:
//!
//! ```text
//! <out>/resolved_config.toml
//! <out>/gans/<target>/manifest.toml, gan_<target>_<src>__to__<dst>.ckpt, *.curve.csv
//! <out>/cache/<target>/<src>__to__<dst>/<sample-key>.png
//! <out>/classifiers/clf_<method>_<target>_<seed>.ckpt, *.curve.csv
//! <out>/results/<method>_<target>_<seed>.csv
//! <out>/results.csv, report.md, report.csv
//! <out>/artifacts.toml
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use cyclemix_core::report::{aggregate, EvalResult, ResultTable};
use cyclemix_core::synth::generate_synthetic_domains;
use cyclemix_core::{enumerate_folds, DomainDataset, FoldPlan, TranslationProvider};
use serde::Serialize;

use crate::cache::{build_cache, TranslationCache};
use crate::config::{emit_config, ExperimentConfig};
use crate::cyclegan::{checkpoint_name, export_pair, train_pair, PairOutput};
use crate::data::load_image_tree;
use crate::error::{Error, IoContext, Result};
use crate::trainer::{evaluate, train_classifier, DataProvider, Method};
use crate::translators::{load_registry, Manifest, TranslatorKind, TranslatorRegistry};

pub const RESULTS_HEADER: &str = "method,target,seed,top1,n_eval,config_hash";

/// Restricts a stage to one fold and/or one seed.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub fold: Option<String>,
    pub seed: Option<u64>,
}

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn gan_dir(&self, target: &str) -> PathBuf {
        self.root.join("gans").join(target)
    }

    pub fn manifest(&self, target: &str) -> PathBuf {
        self.gan_dir(target).join("manifest.toml")
    }

    pub fn cache_root(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn classifier_dir(&self) -> PathBuf {
        self.root.join("classifiers")
    }

    pub fn cell_file(&self, method: Method, target: &str, seed: u64) -> PathBuf {
        self.root.join("results").join(format!("{method}_{target}_{seed}.csv"))
    }
}

/// Loads or generates the configured datasets, restricted to `cfg.domains`
/// (in that order) when it is nonempty.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Vec<DomainDataset>> {
    let all = match (&cfg.data.root, &cfg.data.synthetic) {
        (Some(root), _) => load_image_tree(root, cfg.data.image_size)?,
        (None, Some(spec)) => generate_synthetic_domains(spec, cfg.data.synthetic_seed)?,
        (None, None) => return Err(Error::Config("data: one of root or synthetic is required".into())),
    };
    if cfg.domains.is_empty() {
        return Ok(all);
    }
    cfg.domains
        .iter()
        .map(|d| {
            all.iter()
                .find(|ds| ds.domain() == d)
                .cloned()
                .ok_or_else(|| Error::Config(format!("domain {d} not found in the data")))
        })
        .collect()
}

pub fn folds(datasets: &[DomainDataset], sel: &Selection) -> Result<Vec<FoldPlan>> {
    let names: Vec<String> = datasets.iter().map(|d| d.domain().to_string()).collect();
    let folds = enumerate_folds(&names, 0)?;
    match &sel.fold {
        None => Ok(folds),
        Some(t) => {
            let f: Vec<FoldPlan> = folds.into_iter().filter(|f| &f.target == t).collect();
            if f.is_empty() {
                return Err(Error::Config(format!("no fold with target {t}; domains are {names:?}")));
            }
            Ok(f)
        }
    }
}

fn dataset<'a>(datasets: &'a [DomainDataset], domain: &str) -> Result<&'a DomainDataset> {
    datasets.iter().find(|d| d.domain() == domain).ok_or_else(|| Error::Schema(format!("no dataset for {domain}")))
}

pub fn write_resolved_config(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).at(out)?;
    let path = out.join("resolved_config.toml");
    fs::write(&path, emit_config(cfg)?).at(&path)?;
    Ok(path)
}

/// Trains every source pair of every selected fold and writes the fold
/// manifests. Pairs whose checkpoints are already listed are skipped.
pub fn train_gans(cfg: &ExperimentConfig, datasets: &[DomainDataset], layout: &Layout, sel: &Selection) -> Result<Vec<PathBuf>> {
    let mut manifests = Vec::new();
    for fold in folds(datasets, sel)? {
        let manifest_path = layout.manifest(&fold.target);
        let manifest = if manifest_path.is_file() { Manifest::read(&manifest_path)? } else { Manifest::new(&fold) };
        if manifest.fold_target != fold.target || manifest.sources != fold.sources {
            return Err(Error::Schema(format!("{} belongs to a different fold", manifest_path.display())));
        }
        manifest.write(&manifest_path)?;
        for (a, b) in fold.source_pairs() {
            let id = cyclemix_core::TranslatorId::new(a.clone(), b.clone())?;
            let done = manifest.translators.iter().any(|e| e.src == a && e.dst == b)
                && layout.gan_dir(&fold.target).join(checkpoint_name(&fold.target, &id)).is_file();
            if done {
                log::info!("fold {}: pair {a}/{b} already trained", fold.target);
                continue;
            }
            log::info!("fold {}: training translators {a} <-> {b}", fold.target);
            let gan = crate::cyclegan::GanConfig { seed: cfg.gan.seed.wrapping_add(pair_seed(&a, &b)), ..cfg.gan.clone() };
            let out = PairOutput { dir: layout.gan_dir(&fold.target), fold_target: fold.target.clone() };
            let pair = train_pair(dataset(datasets, &a)?, dataset(datasets, &b)?, &gan, Some(&out))?;
            export_pair(&pair, &manifest_path)?;
        }
        load_registry(&manifest_path)?;
        manifests.push(manifest_path);
    }
    Ok(manifests)
}

fn pair_seed(a: &str, b: &str) -> u64 {
    let d = sha2::Sha256::digest(format!("{a}|{b}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

use sha2::Digest;

/// Registry for a fold as configured: analytic transforms or trained GANs.
pub fn fold_registry(cfg: &ExperimentConfig, fold: &FoldPlan, layout: &Layout) -> Result<TranslatorRegistry> {
    match cfg.translators.kind {
        TranslatorKind::Analytic => TranslatorRegistry::analytic(fold, &cfg.translators.analytic),
        TranslatorKind::Learned => {
            let path = layout.manifest(&fold.target);
            if !path.is_file() {
                return Err(Error::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "translator manifest missing; run train-gans first"),
                ));
            }
            load_registry(&path)
        }
    }
}

fn source_datasets(datasets: &[DomainDataset], fold: &FoldPlan) -> Result<Vec<DomainDataset>> {
    fold.sources.iter().map(|s| dataset(datasets, s).cloned()).collect()
}

/// Builds the translation cache of every selected fold; returns total writes.
pub fn build_caches(cfg: &ExperimentConfig, datasets: &[DomainDataset], layout: &Layout, sel: &Selection) -> Result<usize> {
    let mut writes = 0;
    for fold in folds(datasets, sel)? {
        let registry = fold_registry(cfg, &fold, layout)?;
        let cache = build_cache(&registry, &source_datasets(datasets, &fold)?, &layout.cache_root())?;
        log::info!("fold {}: {} cached translations, {} written", fold.target, cache.len(), cache.writes());
        writes += cache.writes();
    }
    Ok(writes)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellId {
    pub method: Method,
    pub target: String,
    pub seed: u64,
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub results: Vec<EvalResult>,
    pub computed: Vec<CellId>,
    pub skipped: Vec<CellId>,
}

fn result_line(r: &EvalResult, hash: &str) -> String {
    format!("{},{},{},{},{},{}", r.method, r.target, r.seed, r.top1, r.n_eval, hash)
}

/// Parses a results file (header plus rows). Returns rows with their config hash.
pub fn read_results(path: &Path) -> Result<Vec<(EvalResult, String)>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Schema(format!("{}: missing header {RESULTS_HEADER}", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Schema(format!("{}: malformed row {l}", path.display()));
            if f.len() != 6 {
                return Err(bad());
            }
            let r = EvalResult {
                method: f[0].to_string(),
                target: f[1].to_string(),
                seed: f[2].parse().map_err(|_| bad())?,
                top1: f[3].parse().map_err(|_| bad())?,
                n_eval: f[4].parse().map_err(|_| bad())?,
            };
            Ok((r, f[5].to_string()))
        })
        .collect()
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

/// Options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after computing this many new cells (for staged or interrupted runs).
    pub max_new_cells: Option<usize>,
}

/// Runs every (fold, seed, method) cell that has no up-to-date result file.
///
/// Each finished cell is persisted immediately, so an interrupted run loses
/// at most the cell in progress and a rerun recomputes nothing that finished.
pub fn run_benchmark(
    cfg: &ExperimentConfig,
    datasets: Vec<DomainDataset>,
    layout: &Layout,
    sel: &Selection,
    opts: &RunOptions,
) -> Result<RunSummary> {
    let hash = cfg.config_hash();
    let fold_list = folds(&datasets, sel)?;
    let seeds: Vec<u64> = cfg.seeds.iter().copied().filter(|s| sel.seed.is_none_or(|x| x == *s)).collect();
    if seeds.is_empty() {
        return Err(Error::Config(format!("seed {:?} is not in the configured seeds", sel.seed)));
    }
    let data = DataProvider::new(datasets)?;
    let mut summary = RunSummary::default();
    for fold in &fold_list {
        let mut translations: Option<Box<dyn TranslationProvider>> = None;
        for &seed in &seeds {
            for &method in &cfg.methods {
                let cell = CellId { method, target: fold.target.clone(), seed };
                let path = layout.cell_file(method, &fold.target, seed);
                if path.is_file() {
                    if let Ok(rows) = read_results(&path) {
                        if let [(r, h)] = rows.as_slice() {
                            if h == &hash {
                                summary.results.push(r.clone());
                                summary.skipped.push(cell);
                                continue;
                            }
                        }
                    }
                }
                if opts.max_new_cells.is_some_and(|n| summary.computed.len() >= n) {
                    return Ok(summary);
                }
                if method == Method::Cyclemix && translations.is_none() {
                    translations = Some(fold_translations(cfg, fold, &data, layout)?);
                }
                let train_cfg = crate::trainer::TrainConfig { seed, ..cfg.train.clone() };
                log::info!("training {method} target={} seed={seed}", fold.target);
                let outcome = train_classifier(
                    fold,
                    &data,
                    translations.as_deref(),
                    &cfg.mix,
                    method,
                    &train_cfg,
                    Some(&layout.classifier_dir()),
                )?;
                let target = data.dataset(&fold.target)?;
                let result = evaluate(&outcome.model, target, method.id(), seed)?;
                log::info!("{method} target={} seed={seed}: top-1 {:.2}%", fold.target, result.top1);
                write_atomic(&path, &format!("{RESULTS_HEADER}\n{}\n", result_line(&result, &hash)))?;
                summary.results.push(result);
                summary.computed.push(cell);
            }
        }
    }
    Ok(summary)
}

fn fold_translations(
    cfg: &ExperimentConfig,
    fold: &FoldPlan,
    data: &DataProvider,
    layout: &Layout,
) -> Result<Box<dyn TranslationProvider>> {
    let registry = fold_registry(cfg, fold, layout)?;
    if !cfg.translators.use_cache || cfg.train.translate_after_augment {
        return Ok(Box::new(registry));
    }
    let sources = fold.sources.iter().map(|s| data.dataset(s).cloned()).collect::<Result<Vec<_>>>()?;
    let cache = build_cache(&registry, &sources, &layout.cache_root())?;
    Ok(Box::new(cache))
}

/// Reopens a previously built cache without translators.
pub fn open_cache(layout: &Layout, fold: &FoldPlan) -> Result<TranslationCache> {
    TranslationCache::open(&layout.cache_root(), fold)
}

/// Collects all cell results, checks the configured grid is complete, and
/// writes `results.csv`, `report.md` and `report.csv`.
pub fn report(cfg: &ExperimentConfig, datasets: &[DomainDataset], layout: &Layout) -> Result<ResultTable> {
    let hash = cfg.config_hash();
    let targets: Vec<String> = datasets.iter().map(|d| d.domain().to_string()).collect();
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for &method in &cfg.methods {
        for t in &targets {
            for &seed in &cfg.seeds {
                let path = layout.cell_file(method, t, seed);
                match path.is_file().then(|| read_results(&path)).transpose()? {
                    Some(r) if r.len() == 1 && r[0].1 == hash => rows.push(r[0].0.clone()),
                    _ => missing.push(format!("{method}/{t}/seed{seed}")),
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(format!("missing cells: {}", missing.join(", "))));
    }
    let mut csv = format!("{RESULTS_HEADER}\n");
    for r in &rows {
        csv.push_str(&result_line(r, &hash));
        csv.push('\n');
    }
    write_atomic(&layout.root.join("results.csv"), &csv)?;
    let display: Vec<EvalResult> = rows
        .into_iter()
        .map(|mut r| {
            r.method = r.method.parse::<Method>().map(|m| m.display_name().to_string()).unwrap_or(r.method);
            r
        })
        .collect();
    let table = aggregate(&display).map_err(|e| Error::IncompleteGrid(e.to_string()))?;
    write_atomic(&layout.root.join("report.md"), &table.to_markdown())?;
    write_atomic(&layout.root.join("report.csv"), &table.to_csv())?;
    Ok(table)
}

#[derive(Debug, Serialize)]
struct Artifact {
    kind: &'static str,
    path: String,
}

#[derive(Debug, Serialize)]
struct ArtifactIndex {
    artifact: Vec<Artifact>,
}

fn classify(rel: &str) -> Option<&'static str> {
    let name = rel.rsplit('/').next().unwrap_or(rel);
    Some(match () {
        _ if rel.starts_with("cache/") && name.ends_with(".png") => "translation",
        _ if name.starts_with("gan_") && name.ends_with(".ckpt") => "gan_checkpoint",
        _ if name.starts_with("gan_") && name.ends_with(".curve.csv") => "gan_curve",
        _ if name == "manifest.toml" => "translator_manifest",
        _ if name.starts_with("clf_") && name.ends_with(".ckpt") => "classifier_checkpoint",
        _ if name.starts_with("clf_") && name.ends_with(".curve.csv") => "classifier_curve",
        _ if rel.starts_with("results/") && name.ends_with(".csv") => "cell_result",
        _ if name == "results.csv" => "results",
        _ if name == "report.md" || name == "report.csv" => "report",
        _ if name == "resolved_config.toml" => "resolved_config",
        _ => return None,
    })
}

/// Rewrites `<out>/artifacts.toml`, listing every recognised output file.
pub fn write_artifact_index(layout: &Layout) -> Result<PathBuf> {
    let mut files = BTreeSet::new();
    let mut stack = vec![layout.root.clone()];
    while let Some(dir) = stack.pop() {
        if !dir.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&dir).at(&dir)? {
            let p = entry.at(&dir)?.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(rel) = p.strip_prefix(&layout.root) {
                files.insert(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let artifact = files.iter().filter_map(|f| classify(f).map(|kind| Artifact { kind, path: f.clone() })).collect();
    let path = layout.root.join("artifacts.toml");
    let text = toml::to_string(&ArtifactIndex { artifact }).map_err(|e| Error::Schema(e.to_string()))?;
    write_atomic(&path, &text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn config(out: &Path) -> ExperimentConfig {
        let text = format!(
            "methods = [\"erm\", \"cyclemix\"]\nseeds = [0]\noutput_dir = \"{}\"\n\
             [data.synthetic]\nn_classes = 2\nsamples_per_class_per_style = 3\nimage_size = 16\n\
             styles = [\"flat-fill\", \"outline\", \"inverted\"]\n\
             [translators]\nkind = \"analytic\"\nanalytic = \"invert\"\n\
             [train]\nsteps = 2\nbatch_size = 4\nsmall_cnn_channels = 2\neval_interval = 1\n",
            out.display()
        );
        parse_config_str(&text).unwrap()
    }

    #[test]
    fn run_resume_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path());
        let layout = Layout::new(dir.path());
        let ds = load_datasets(&cfg).unwrap();

        let first = run_benchmark(&cfg, ds.clone(), &layout, &Selection::default(), &RunOptions { max_new_cells: Some(2) }).unwrap();
        assert_eq!(first.computed.len(), 2);
        assert!(matches!(report(&cfg, &ds, &layout), Err(Error::IncompleteGrid(_))));

        let second = run_benchmark(&cfg, ds.clone(), &layout, &Selection::default(), &RunOptions::default()).unwrap();
        assert_eq!(second.skipped, first.computed);
        assert_eq!(second.computed.len(), 4);
        assert_eq!(second.results.len(), 6);

        let table = report(&cfg, &ds, &layout).unwrap();
        assert_eq!(table.methods, vec!["ERM", "CycleMix"]);
        assert!(dir.path().join("report.md").is_file());
        let rows = read_results(&dir.path().join("results.csv")).unwrap();
        assert_eq!(rows.len(), 6);

        let index = fs::read_to_string(write_artifact_index(&layout).unwrap()).unwrap();
        assert!(index.contains("clf_cyclemix_outline_0.ckpt"));
        assert!(index.contains("kind = \"translation\""));
    }

    #[test]
    fn fold_selection() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_datasets(&config(dir.path())).unwrap();
        let sel = Selection { fold: Some("outline".into()), seed: None };
        assert_eq!(folds(&ds, &sel).unwrap().len(), 1);
        let sel = Selection { fold: Some("nope".into()), seed: None };
        assert!(folds(&ds, &sel).is_err());
    }
}
