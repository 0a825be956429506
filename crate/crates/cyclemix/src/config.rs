//! Experiment configuration (TOML).
//!
//! ```toml
//! methods = ["erm", "cyclemix"]
//! seeds = [0, 1, 2]
//! output_dir = "runs/desk"
//!
//! [data.synthetic]
//! samples_per_class_per_style = 50
//!
//! [mix]
//! mode = "convex"
//! ```
//!
//! Unknown keys are rejected at every level; omitted keys take their defaults.

use std::fs;
use std::path::{Path, PathBuf};

use cyclemix_core::synth::SyntheticStyleSpec;
use cyclemix_core::MixPolicy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cyclegan::GanConfig;
use crate::error::{Error, IoContext, Result};
use crate::trainer::{Method, TrainConfig};
use crate::translators::TranslatorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Folder tree `root/<domain>/<class>/<image>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Generate the synthetic style domains in memory instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticStyleSpec>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub synthetic_seed: u64,
}

fn default_image_size() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorConfig {
    pub kind: TranslatorKind,
    /// Analytic transform used when `kind = "analytic"`.
    pub analytic: String,
    pub use_cache: bool,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self { kind: TranslatorKind::Learned, analytic: "restyle".into(), use_cache: true }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("cyclemix-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Domains to use, in fold order; empty means every available domain.
    #[serde(default)]
    pub domains: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub mix: MixPolicy,
    #[serde(default)]
    pub translators: TranslatorConfig,
    #[serde(default)]
    pub gan: GanConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods must list at least one method".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(*m) {
                return Err(Error::Config(format!("method {m} listed twice")));
            }
        }
        match (&self.data.root, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("data: set either root or synthetic, not both".into())),
            (None, None) => return Err(Error::Config("data: one of root or synthetic is required".into())),
            (_, Some(spec)) => spec.validate()?,
            _ => {}
        }
        if self.data.image_size < 16 {
            return Err(Error::Config(format!("data.image_size must be at least 16, got {}", self.data.image_size)));
        }
        self.mix.validate()?;
        self.gan.validate()?;
        for m in &self.methods {
            self.train.validate(*m)?;
        }
        if self.translators.kind == TranslatorKind::Analytic {
            let names = cyclemix_core::analytic::AnalyticTransform::NAMES;
            if !names.contains(&self.translators.analytic.as_str()) {
                return Err(Error::Config(format!("translators.analytic: unknown transform {}", self.translators.analytic)));
            }
        }
        Ok(())
    }

    /// Short hash of the resolved configuration, excluding the seed list and
    /// output directory so that cells stay valid when seeds are added.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(emit_config(&c).unwrap_or_default().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).at(path)?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Full configuration with every default spelled out.
pub fn emit_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cyclemix_core::MixMode;

    const MINIMAL: &str = "methods = [\"erm\"]\n[data]\nroot = \"/data/pacs\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.mix.fraction, 0.5);
        assert_eq!(c.mix.mode, MixMode::Convex);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.gan.lambda_cycle, 10.0);
    }

    #[test]
    fn fraction_out_of_bounds_rejected() {
        let err = parse_config_str(&format!("{MINIMAL}[mix]\nfraction = 1.5\n")).unwrap_err();
        assert!(matches!(err, Error::Core(cyclemix_core::Error::Schema(_))), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config_str(&format!("{MINIMAL}[train]\nlearning_rat = 0.1\n")).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("learning_rat")), "{err}");
        let err = parse_config_str("methods = [\"erm\"]\nbogus = 1\n[data]\nroot = \"x\"\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("bogus")), "{err}");
    }

    #[test]
    fn wrong_type_and_missing_field_rejected() {
        assert!(parse_config_str("methods = \"erm\"\n[data]\nroot = \"x\"\n").is_err());
        let err = parse_config_str("[data]\nroot = \"x\"\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("methods")), "{err}");
        assert!(parse_config_str("methods = [\"sagnet\"]\n[data]\nroot = \"x\"\n").is_err());
    }

    #[test]
    fn resolved_round_trip() {
        let text = format!(
            "{MINIMAL}seeds = [3, 4]\n[mix]\nmode = \"literal\"\nweight_scope = \"per_image\"\n[train]\nval_fraction = 0.2\n[train.augment]\nhue = 0.1\n"
        );
        // keys after a table header belong to it; rebuild with top-level keys first
        let text = text.replacen("[data]\nroot = \"/data/pacs\"\nseeds = [3, 4]\n", "seeds = [3, 4]\n[data]\nroot = \"/data/pacs\"\n", 1);
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.seeds, vec![3, 4]);
        let again = parse_config_str(&emit_config(&c).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn synthetic_and_root_are_exclusive() {
        assert!(parse_config_str("methods = [\"erm\"]\n[data]\nroot = \"x\"\n[data.synthetic]\n").is_err());
        let c = parse_config_str("methods = [\"erm\"]\n[data.synthetic]\nsamples_per_class_per_style = 5\n").unwrap();
        assert_eq!(c.data.synthetic.unwrap().n_classes, 7);
    }

    #[test]
    fn hash_ignores_seeds() {
        let a = parse_config_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seeds = vec![0, 1, 2];
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.steps = 10;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
