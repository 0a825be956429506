//! Labelled samples, per-domain datasets and minibatches.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{schema_err, value_err, Result};
use crate::raster::Raster;

/// One image with its class label and the domain it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample {
    pub image: Raster,
    pub label: usize,
    pub domain: String,
}

/// All samples observed from a single domain, in a deterministic order.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    domain: String,
    samples: Vec<DomainSample>,
    class_names: Vec<String>,
}

impl DomainDataset {
    /// Validates that every sample belongs to `domain`, carries a label below
    /// `class_names.len()` and has pixels in `[0, 1]`.
    ///
    /// Empty datasets are representable (an empty validation split is one) but
    /// rejected by the operations that need data; see [`DomainDataset::ensure_nonempty`].
    pub fn new(domain: impl Into<String>, samples: Vec<DomainSample>, class_names: Vec<String>) -> Result<Self> {
        let domain = domain.into();
        if class_names.len() < 2 {
            return Err(schema_err!("domain {domain}: need at least 2 classes, got {}", class_names.len()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.domain != domain {
                return Err(schema_err!("sample {i} has domain {} inside dataset {domain}", s.domain));
            }
            if s.label >= class_names.len() {
                return Err(schema_err!("sample {i} of {domain} has label {} >= {}", s.label, class_names.len()));
            }
            if !s.image.in_range(0.0, 1.0) {
                return Err(value_err!("sample {i} of {domain} has pixels outside [0,1]"));
            }
        }
        Ok(Self { domain, samples, class_names })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn samples(&self) -> &[DomainSample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(value_err!("dataset for domain {} is empty", self.domain))
        } else {
            Ok(())
        }
    }

    /// Dataset restricted to the given sample indices (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            domain: self.domain.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Training target of one minibatch item.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    /// Probability vector over classes, summing to one.
    Soft(Vec<f64>),
}

impl Target {
    pub fn to_distribution(&self, num_classes: usize) -> Vec<f64> {
        match self {
            Target::Class(c) => {
                let mut v = vec![0.0; num_classes];
                v[*c] = 1.0;
                v
            }
            Target::Soft(v) => v.clone(),
        }
    }
}

/// A batch of training items with aligned images, targets and origin domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub images: Vec<Raster>,
    pub targets: Vec<Target>,
    pub domains: Vec<String>,
    pub num_classes: usize,
}

impl Minibatch {
    pub fn new(images: Vec<Raster>, targets: Vec<Target>, domains: Vec<String>, num_classes: usize) -> Result<Self> {
        if images.len() != targets.len() || images.len() != domains.len() {
            return Err(value_err!(
                "minibatch fields not aligned: {} images, {} targets, {} domains",
                images.len(),
                targets.len(),
                domains.len()
            ));
        }
        for t in &targets {
            match t {
                Target::Class(c) if *c >= num_classes => return Err(value_err!("label {c} >= {num_classes}")),
                Target::Soft(v) if v.len() != num_classes => {
                    return Err(value_err!("soft target has {} entries, expected {num_classes}", v.len()))
                }
                _ => {}
            }
        }
        Ok(Self { images, targets, domains, num_classes })
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a DomainSample>, num_classes: usize) -> Result<Self> {
        let (mut images, mut targets, mut domains) = (Vec::new(), Vec::new(), Vec::new());
        for s in samples {
            images.push(s.image.clone());
            targets.push(Target::Class(s.label));
            domains.push(s.domain.clone());
        }
        Self::new(images, targets, domains, num_classes)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
