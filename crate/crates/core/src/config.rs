//! The run configuration: one TOML document with dotted sections.
//!
//! ```toml
//! seed = 7
//! k = 5
//! output_dir = "out"
//! aug.erase_prob = 0.5
//! train.epochs = 30
//! ```
//!
//! Every field except `seed` has a default. Unknown keys are rejected with
//! their full dotted path.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::AugConfig;
use crate::imagedata::SynthSpec;
use crate::meanteacher::MeanTeacherConfig;
use crate::nn::ModelSpec;
use crate::{Error, Result};

/// Where real data lives. With no `labels_csv` the synthetic generator is
/// used instead.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels_csv: Option<PathBuf>,
    /// Images named `<id>.png` or `<id>.ppm`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
    /// Every image in this directory joins the unlabelled pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unlabeled_dir: Option<PathBuf>,
}

fn default_k() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Average predictions over the 8 dihedral views.
    #[serde(default = "default_true")]
    pub tta: bool,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub aug: AugConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: MeanTeacherConfig,
}

impl RunConfig {
    /// All defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            k: default_k(),
            output_dir: default_output_dir(),
            tta: true,
            data: DataPaths::default(),
            synth: SynthSpec::default(),
            aug: AugConfig::default(),
            model: ModelSpec::default(),
            train: MeanTeacherConfig::default(),
        }
    }

    pub fn uses_synthetic_data(&self) -> bool {
        self.data.labels_csv.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config("k", format!("need at least 2 folds, got {}", self.k)));
        }
        self.aug.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.aug.crop_size != self.model.input_size {
            return Err(Error::config(
                "aug.crop_size",
                format!("{} must equal model.input_size = {}", self.aug.crop_size, self.model.input_size),
            ));
        }
        if self.uses_synthetic_data() {
            self.synth.validate()?;
            self.synth.validate_for_folds(self.k)?;
            if self.aug.crop_size > self.synth.image_size {
                return Err(Error::config(
                    "aug.crop_size",
                    format!("{} exceeds synth.image_size = {}", self.aug.crop_size, self.synth.image_size),
                ));
            }
        } else if self.data.image_dir.is_none() {
            return Err(Error::config("data.image_dir", "required when data.labels_csv is set"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}

/// Parses and validates a run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| syntax_error(text, &e))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            syntax_error(text, &inner)
        } else {
            Error::config(path, inner.message().to_string())
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn syntax_error(text: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        line,
        reason: e.message().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::RotationMode;
    use crate::meanteacher::EmaGranularity;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("seed = 3\nsynth.unlabeled_count = 10\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.synth.unlabeled_count, 10);
        let mut expected = RunConfig::with_seed(3);
        expected.synth.unlabeled_count = 10;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = parse_config("k = 5\n").unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = parse_config("seed = 1\naug.erase_probb = 0.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("erase_probb"), "{msg}");
        assert!(matches!(err, Error::Config { .. }), "{err:?}");
        let err = parse_config("seed = 1\n[train]\nepochz = 3\n").unwrap_err().to_string();
        assert!(err.contains("train") && err.contains("epochz"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "seed = 1\naug.erase_prob = 1.5\n",
            "seed = 1\nk = 1\n",
            "seed = 1\naug.crop_size = 24\n",
            "seed = 1\ntrain.ema_alpha = 1.0\n",
            "seed = 1\ndata.labels_csv = \"x.csv\"\n",
            "seed = 1\nk = 20\n",
        ] {
            assert!(parse_config(text).is_err(), "{text}");
        }
        let err = parse_config("seed = 1\naug.erase_prob = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("aug.erase_prob"), "{err}");
    }

    #[test]
    fn syntax_errors_report_a_line() {
        match parse_config("seed = 1\nk = = 2\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_serialize_parse_is_a_fixpoint() {
        let text = r#"
seed = 42
k = 3
output_dir = "runs/a"
tta = false
data.labels_csv = "d/labels.csv"
data.image_dir = "d/img"
aug.rotation_mode = "arbitrary"
aug.erase_area_range = [0.05, 0.3]
aug.hair_count_range = [1, 4]
train.ema_granularity = "epoch"
train.lr = 0.013
model.widths = [8, 16, 16]
"#;
        let a = parse_config(text).unwrap();
        assert_eq!(a.aug.rotation_mode, RotationMode::Arbitrary);
        assert_eq!(a.train.ema_granularity, EmaGranularity::Epoch);
        let b = parse_config(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml(), b.to_toml());
    }
}
