//! Leave-one-domain-out fold planning, stratified splits and translator bookkeeping.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{schema_err, value_err, Error, Result};
use crate::sample::DomainDataset;

/// One leave-one-domain-out split: every domain except `target` is a source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub target: String,
    pub sources: Vec<String>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn new(target: impl Into<String>, sources: Vec<String>, seed: u64) -> Result<Self> {
        let plan = Self { target: target.into(), sources, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(schema_err!("fold with target {} has no sources", self.target));
        }
        let mut seen = BTreeSet::new();
        for s in &self.sources {
            if s == &self.target {
                return Err(schema_err!("target domain {} listed among the sources", self.target));
            }
            if !seen.insert(s.as_str()) {
                return Err(schema_err!("source domain {s} listed twice"));
            }
        }
        Ok(())
    }

    pub fn is_source(&self, domain: &str) -> bool {
        self.sources.iter().any(|s| s == domain)
    }

    /// All source domains other than `domain`, in fold order.
    pub fn other_sources<'a>(&'a self, domain: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.sources.iter().filter(move |s| s.as_str() != domain)
    }

    /// Every directed translator a registry for this fold must contain.
    pub fn directed_translators(&self) -> Vec<TranslatorId> {
        let mut ids = Vec::new();
        for src in &self.sources {
            for dst in self.other_sources(src) {
                ids.push(TranslatorId { src: src.clone(), dst: dst.clone() });
            }
        }
        ids
    }

    /// Unordered source pairs `(a, b)` with `a` listed before `b`.
    pub fn source_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        for (i, a) in self.sources.iter().enumerate() {
            for b in &self.sources[i + 1..] {
                pairs.push((a.clone(), b.clone()));
            }
        }
        pairs
    }
}

/// Builds one fold per domain, in input order, each holding that domain out.
pub fn enumerate_folds(domains: &[String], seed: u64) -> Result<Vec<FoldPlan>> {
    let mut seen = BTreeSet::new();
    for d in domains {
        if !seen.insert(d.as_str()) {
            return Err(schema_err!("duplicate domain name {d}"));
        }
    }
    if domains.len() < 2 {
        return Err(schema_err!("at least 2 domains required, got {}", domains.len()));
    }
    domains
        .iter()
        .map(|target| {
            let sources = domains.iter().filter(|d| *d != target).cloned().collect();
            FoldPlan::new(target.clone(), sources, seed)
        })
        .collect()
}

/// Number of translator pairs needed for `sources` source domains:
/// `(sources·(sources−1)/2 undirected, sources·(sources−1) directed)`.
pub fn required_pair_count(sources: usize) -> Result<(usize, usize)> {
    if sources < 2 {
        return Err(value_err!("need at least 2 source domains, got {sources}"));
    }
    let directed = sources * (sources - 1);
    Ok((directed / 2, directed))
}

/// Stratified, seeded train/validation split.
///
/// Each class contributes `round(val_fraction · n_class)` samples to the
/// validation set; both halves keep the original sample order.
pub fn split_train_val(dataset: &DomainDataset, val_fraction: f64, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(value_err!("val_fraction must be in [0, 1), got {val_fraction}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = alloc::vec![false; dataset.len()];
    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> =
            dataset.samples().iter().enumerate().filter(|(_, s)| s.label == class).map(|(i, _)| i).collect();
        let n_val = libm::round(val_fraction * members.len() as f64) as usize;
        members.shuffle(&mut rng);
        for &i in &members[..n_val.min(members.len())] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| is_val[i]);
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Directed style translator identity `src → dst`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TranslatorId {
    pub src: String,
    pub dst: String,
}

impl TranslatorId {
    pub fn new(src: impl Into<String>, dst: impl Into<String>) -> Result<Self> {
        let id = Self { src: src.into(), dst: dst.into() };
        if id.src == id.dst {
            return Err(Error::Value(alloc::format!("translator {id} maps a domain onto itself")));
        }
        Ok(id)
    }

    pub fn reversed(&self) -> Self {
        Self { src: self.dst.clone(), dst: self.src.clone() }
    }

    pub fn touches(&self, domain: &str) -> bool {
        self.src == domain || self.dst == domain
    }
}

impl fmt::Display for TranslatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}__to__{}", self.src, self.dst)
    }
}
