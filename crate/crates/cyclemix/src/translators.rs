//! Per-fold translator registry backed by a TOML manifest.
//!
//! ```toml
//! fold_target = "sketch"
//! sources = ["art", "cartoon", "photo"]
//!
//! [[translator]]
//! src = "art"
//! dst = "cartoon"
//! kind = "learned"
//! path_or_name = "gan_sketch_art__to__cartoon.ckpt"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cyclemix_core::analytic::AnalyticTransform;
use cyclemix_core::{FoldPlan, Raster, TranslationProvider, TranslatorId};
use serde::{Deserialize, Serialize};

use crate::cyclegan::Generator;
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorKind {
    Learned,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub src: String,
    pub dst: String,
    pub kind: TranslatorKind,
    /// Checkpoint path (relative to the manifest) or analytic transform name.
    pub path_or_name: String,
}

impl ManifestEntry {
    pub fn id(&self) -> Result<TranslatorId> {
        Ok(TranslatorId::new(self.src.clone(), self.dst.clone())?)
    }

    pub fn analytic(id: &TranslatorId, name: &str) -> Self {
        Self { src: id.src.clone(), dst: id.dst.clone(), kind: TranslatorKind::Analytic, path_or_name: name.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub fold_target: String,
    pub sources: Vec<String>,
    #[serde(default, rename = "translator")]
    pub translators: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(fold: &FoldPlan) -> Self {
        Self { fold_target: fold.target.clone(), sources: fold.sources.clone(), translators: Vec::new() }
    }

    /// A manifest mapping every directed source pair to the same analytic transform.
    pub fn analytic(fold: &FoldPlan, name: &str) -> Self {
        let mut m = Self::new(fold);
        m.translators = fold.directed_translators().iter().map(|id| ManifestEntry::analytic(id, name)).collect();
        m
    }

    pub fn fold(&self) -> Result<FoldPlan> {
        Ok(FoldPlan::new(self.fold_target.clone(), self.sources.clone(), 0)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {}", path.display(), e.message())))
    }

    /// Writes through a temporary file and an atomic rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).at(dir)?;
            }
        }
        let tmp = path.with_extension("toml.tmp");
        fs::write(&tmp, text).at(&tmp)?;
        fs::rename(&tmp, path).at(path)
    }

    /// Appends an entry; a second entry for the same direction is an error.
    pub fn add(&mut self, entry: ManifestEntry) -> Result<()> {
        let id = entry.id()?;
        if self.translators.iter().any(|e| e.src == id.src && e.dst == id.dst) {
            return Err(Error::Schema(format!("duplicate translator {id} in manifest")));
        }
        self.translators.push(entry);
        Ok(())
    }

    /// Checks leakage and exact directed coverage of the sources.
    pub fn validate(&self) -> Result<FoldPlan> {
        let fold = self.fold().map_err(|e| Error::Schema(format!("manifest fold: {e}")))?;
        let mut seen = BTreeMap::new();
        for e in &self.translators {
            let id = e.id().map_err(|err| Error::Schema(format!("manifest entry: {err}")))?;
            if id.touches(&fold.target) {
                return Err(Error::Schema(format!("translator {id} touches target domain {}", fold.target)));
            }
            if !fold.is_source(&id.src) || !fold.is_source(&id.dst) {
                return Err(Error::Schema(format!("translator {id} references a domain outside the fold sources")));
            }
            if seen.insert(id.clone(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate translator {id} in manifest")));
            }
        }
        let missing: Vec<String> =
            fold.directed_translators().into_iter().filter(|id| !seen.contains_key(id)).map(|id| id.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::Schema(format!("manifest is missing translators: {}", missing.join(", "))));
        }
        Ok(fold)
    }
}

pub enum Translator {
    Analytic(AnalyticTransform),
    Learned(Generator),
}

impl Translator {
    pub fn kind(&self) -> TranslatorKind {
        match self {
            Self::Analytic(_) => TranslatorKind::Analytic,
            Self::Learned(_) => TranslatorKind::Learned,
        }
    }

    /// Raw output, clamped to `[0, 1]` but not quantised.
    pub fn apply(&self, image: &Raster) -> Result<Raster> {
        match self {
            Self::Analytic(t) => Ok(t.apply(image)),
            Self::Learned(g) => g.translate(image),
        }
    }
}

/// Directed translators of one fold, restricted to its source domains.
///
/// Outputs are snapped to the 8-bit grid, so they survive a PNG round trip
/// unchanged and repeated calls are bit-identical.
pub struct TranslatorRegistry {
    fold: FoldPlan,
    entries: BTreeMap<TranslatorId, Translator>,
    manifest_path: Option<PathBuf>,
    image_shape: Option<(usize, usize)>,
}

impl TranslatorRegistry {
    /// Builds a registry from in-memory translators, enforcing the manifest invariants.
    pub fn from_translators(fold: FoldPlan, entries: BTreeMap<TranslatorId, Translator>) -> Result<Self> {
        let mut manifest = Manifest::new(&fold);
        for (id, t) in &entries {
            manifest.add(ManifestEntry { src: id.src.clone(), dst: id.dst.clone(), kind: t.kind(), path_or_name: String::new() })?;
        }
        manifest.validate()?;
        Ok(Self { fold, entries, manifest_path: None, image_shape: None })
    }

    pub fn analytic(fold: &FoldPlan, name: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for id in fold.directed_translators() {
            entries.insert(id.clone(), Translator::Analytic(AnalyticTransform::from_name(name, &id)?));
        }
        Self::from_translators(fold.clone(), entries)
    }

    /// Requires every input to have this shape.
    pub fn with_image_shape(mut self, height: usize, width: usize) -> Self {
        self.image_shape = Some((height, width));
        self
    }

    pub fn fold(&self) -> &FoldPlan {
        &self.fold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &TranslatorId> {
        self.entries.keys()
    }

    pub fn manifest_path(&self) -> Option<&Path> {
        self.manifest_path.as_deref()
    }

    pub fn translate(&self, id: &TranslatorId, image: &Raster) -> Result<Raster> {
        Ok(self.translate_core(id, image)?)
    }

    fn translate_core(&self, id: &TranslatorId, image: &Raster) -> cyclemix_core::Result<Raster> {
        use cyclemix_core::Error as E;
        if id.touches(&self.fold.target) {
            return Err(E::Lookup(format!("translator {id} touches target domain {}", self.fold.target)));
        }
        let t = self.entries.get(id).ok_or_else(|| E::Lookup(format!("no translator {id} in registry")))?;
        if let Some((h, w)) = self.image_shape {
            if image.shape() != (h, w) {
                return Err(E::Value(format!("image is {}x{}, translators expect {h}x{w}", image.height(), image.width())));
            }
        }
        if !image.in_range(0.0, 1.0) {
            return Err(E::Value("translator input outside [0, 1]".into()));
        }
        let out = t.apply(image).map_err(|e| match e {
            Error::Core(c) => c,
            other => E::Numeric(other.to_string()),
        })?;
        if out.shape() != image.shape() {
            return Err(E::Value(format!("translator {id} changed the image shape")));
        }
        Ok(out.quantize_u8())
    }
}

impl TranslationProvider for TranslatorRegistry {
    fn translate(&self, id: &TranslatorId, image: &Raster) -> cyclemix_core::Result<Raster> {
        self.translate_core(id, image)
    }
}

/// Loads and validates a manifest and every translator it references.
/// Relative checkpoint paths are resolved against the manifest directory.
pub fn load_registry(manifest_path: &Path) -> Result<TranslatorRegistry> {
    let manifest = Manifest::read(manifest_path)?;
    let fold = manifest.validate()?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut entries = BTreeMap::new();
    for e in &manifest.translators {
        let id = e.id()?;
        let t = match e.kind {
            TranslatorKind::Analytic => Translator::Analytic(
                AnalyticTransform::from_name(&e.path_or_name, &id).map_err(|err| Error::Schema(err.to_string()))?,
            ),
            TranslatorKind::Learned => Translator::Learned(Generator::load(&base.join(&e.path_or_name))?),
        };
        entries.insert(id, t);
    }
    let mut reg = TranslatorRegistry::from_translators(fold, entries)?;
    reg.manifest_path = Some(manifest_path.to_path_buf());
    Ok(reg)
}
