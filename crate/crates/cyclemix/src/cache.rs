//! On-disk translation cache:
//! `<root>/<fold-target>/<src>__to__<dst>/<sample-key>.png`.
//!
//! Sample keys are content hashes of the canonical (8-bit) image. Entries are
//! written to a temporary file and renamed into place, so a key is either
//! absent or complete.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use cyclemix_core::{DomainDataset, FoldPlan, Raster, TranslationProvider, TranslatorId};
use sha2::{Digest, Sha256};

use crate::data::{read_png, write_png};
use crate::error::{Error, IoContext, Result};
use crate::translators::TranslatorRegistry;

/// Hex SHA-256 of the image size and its 8-bit pixel values.
pub fn sample_key(image: &Raster) -> String {
    let mut h = Sha256::new();
    h.update((image.height() as u64).to_le_bytes());
    h.update((image.width() as u64).to_le_bytes());
    h.update(image.to_u8());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct TranslationCache {
    dir: PathBuf,
    fold: FoldPlan,
    index: HashMap<(TranslatorId, String), Raster>,
    writes: usize,
}

impl TranslationCache {
    fn empty(root: &Path, fold: &FoldPlan) -> Self {
        Self { dir: root.join(&fold.target), fold: fold.clone(), index: HashMap::new(), writes: 0 }
    }

    pub fn entry_path(&self, id: &TranslatorId, key: &str) -> PathBuf {
        self.dir.join(id.to_string()).join(format!("{key}.png"))
    }

    /// Number of files written by the build that produced this cache.
    pub fn writes(&self) -> usize {
        self.writes
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, id: &TranslatorId, image: &Raster) -> Option<&Raster> {
        self.index.get(&(id.clone(), sample_key(image)))
    }

    /// Loads every entry already on disk for the fold's directed source pairs.
    pub fn open(root: &Path, fold: &FoldPlan) -> Result<Self> {
        let mut cache = Self::empty(root, fold);
        for id in fold.directed_translators() {
            let dir = cache.dir.join(id.to_string());
            if !dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&dir).at(&dir)? {
                let path = entry.at(&dir)?.path();
                if path.extension().is_some_and(|e| e == "png") {
                    let key = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    cache.index.insert((id.clone(), key), read_png(&path)?);
                }
            }
        }
        Ok(cache)
    }

    fn existing_entry(path: &Path, shape: (usize, usize)) -> Option<Raster> {
        if !path.is_file() {
            return None;
        }
        read_png(path).ok().filter(|r| r.shape() == shape)
    }

    fn write_entry(path: &Path, image: &Raster) -> Result<()> {
        let dir = path.parent().expect("cache entries live in a pair directory");
        fs::create_dir_all(dir).at(dir)?;
        let tmp = path.with_extension("png.tmp");
        write_png(&tmp, image)?;
        fs::rename(&tmp, path).at(path)
    }
}

impl TranslationProvider for TranslationCache {
    fn translate(&self, id: &TranslatorId, image: &Raster) -> cyclemix_core::Result<Raster> {
        if id.touches(&self.fold.target) {
            return Err(cyclemix_core::Error::Lookup(format!("translator {id} touches target domain {}", self.fold.target)));
        }
        self.get(id, image)
            .cloned()
            .ok_or_else(|| cyclemix_core::Error::Lookup(format!("no cached {id} translation for this image")))
    }
}

/// Caches `G_ij(x)` for every sample `x` of every source domain `i` and every
/// other source `j`. Existing entries that decode to the right size are reused
/// without rewriting.
pub fn build_cache(registry: &TranslatorRegistry, datasets: &[DomainDataset], root: &Path) -> Result<TranslationCache> {
    let fold = registry.fold();
    let mut cache = TranslationCache::empty(root, fold);
    for src in &fold.sources {
        if !datasets.iter().any(|d| d.domain() == src) {
            return Err(Error::Schema(format!("no dataset for source domain {src}")));
        }
    }
    for ds in datasets {
        if ds.domain() == fold.target {
            return Err(Error::Core(cyclemix_core::Error::Leakage(format!("target domain {} passed to cache build", fold.target))));
        }
        if !fold.is_source(ds.domain()) {
            continue;
        }
        for s in ds.samples() {
            let key = sample_key(&s.image);
            for dst in fold.other_sources(ds.domain()) {
                let id = TranslatorId::new(ds.domain(), dst.clone())?;
                if cache.index.contains_key(&(id.clone(), key.clone())) {
                    continue;
                }
                let path = cache.entry_path(&id, &key);
                let value = match TranslationCache::existing_entry(&path, s.image.shape()) {
                    Some(v) => v,
                    None => {
                        let v = registry.translate(&id, &s.image)?;
                        TranslationCache::write_entry(&path, &v)?;
                        cache.writes += 1;
                        v
                    }
                };
                cache.index.insert((id, key.clone()), value);
            }
        }
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cyclemix_core::DomainSample;

    fn fold() -> FoldPlan {
        FoldPlan::new("T", vec!["A".into(), "B".into(), "C".into()], 0).unwrap()
    }

    fn datasets(n: usize) -> Vec<DomainDataset> {
        ["A", "B", "C"]
            .iter()
            .enumerate()
            .map(|(d, name)| {
                let samples = (0..n)
                    .map(|i| {
                        let bytes: Vec<u8> = (0..4 * 4 * 3).map(|p| ((p * 13 + i * 31 + d * 7) % 256) as u8).collect();
                        DomainSample { image: Raster::from_u8(4, 4, &bytes).unwrap(), label: i % 2, domain: name.to_string() }
                    })
                    .collect();
                DomainDataset::new(*name, samples, vec!["x".into(), "y".into()]).unwrap()
            })
            .collect()
    }

    #[test]
    fn counts_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let reg = TranslatorRegistry::analytic(&fold(), "channel-permute").unwrap();
        let ds = datasets(10);
        let first = build_cache(&reg, &ds, dir.path()).unwrap();
        assert_eq!(first.writes(), 60);
        assert_eq!(first.len(), 60);
        let second = build_cache(&reg, &ds, dir.path()).unwrap();
        assert_eq!(second.writes(), 0);
        let reopened = TranslationCache::open(dir.path(), &fold()).unwrap();
        assert_eq!(reopened.len(), 60);
        let x = &ds[1].samples()[3].image;
        let id = TranslatorId::new("B", "C").unwrap();
        assert_eq!(reopened.translate(&id, x).unwrap(), reg.translate(&id, x).unwrap());
        assert!(first.entry_path(&id, &sample_key(x)).is_file());
    }

    #[test]
    fn corrupt_entry_is_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let reg = TranslatorRegistry::analytic(&fold(), "invert").unwrap();
        let ds = datasets(2);
        let c = build_cache(&reg, &ds, dir.path()).unwrap();
        let id = TranslatorId::new("A", "B").unwrap();
        fs::write(c.entry_path(&id, &sample_key(&ds[0].samples()[0].image)), b"junk").unwrap();
        assert_eq!(build_cache(&reg, &ds, dir.path()).unwrap().writes(), 1);
    }

    #[test]
    fn target_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let reg = TranslatorRegistry::analytic(&fold(), "identity").unwrap();
        let mut ds = datasets(1);
        ds.push(DomainDataset::new("T", vec![], vec!["x".into(), "y".into()]).unwrap());
        assert!(matches!(build_cache(&reg, &ds, dir.path()), Err(Error::Core(cyclemix_core::Error::Leakage(_)))));
    }

    #[test]
    fn missing_entry_is_lookup_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TranslationCache::open(dir.path(), &fold()).unwrap();
        let err = cache.translate(&TranslatorId::new("A", "B").unwrap(), &Raster::zeros(4, 4)).unwrap_err();
        assert!(matches!(err, cyclemix_core::Error::Lookup(_)));
    }
}
