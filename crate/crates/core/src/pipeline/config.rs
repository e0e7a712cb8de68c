use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::data::{Split, DEFAULT_ARTIFACT_AMPLITUDE};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::models::CodecKind;
use crate::train::TrainConfig;

/// Environment variable that overrides `paths.workdir`.
pub const WORKDIR_ENV: &str = "LADV_WORKDIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub artifact_amplitude: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            seed: 7,
            artifact_amplitude: DEFAULT_ARTIFACT_AMPLITUDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub latent_dim: usize,
    pub codec: CodecKind,
    /// Widths of the white-box detectors.
    pub classifier_widths: Vec<usize>,
    /// Width of the held-out transfer detector.
    pub transfer_width: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            codec: CodecKind::Linear,
            classifier_widths: vec![128, 96, 64],
            transfer_width: 112,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub codec: TrainConfig,
    pub score: TrainConfig,
    /// Shared by every detector; detector `k` trains with `seed + k`.
    pub classifier: TrainConfig,
    /// Guidance scale used for the reconstruction admission check.
    pub admission_w: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            codec: TrainConfig {
                lr: 10.0,
                epochs: 60,
                seed: 11,
                ..TrainConfig::default()
            },
            score: TrainConfig {
                lr: 0.1,
                epochs: 60,
                seed: 12,
                ..TrainConfig::default()
            },
            classifier: TrainConfig {
                epochs: 60,
                seed: 13,
                ..TrainConfig::default()
            },
            admission_w: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    /// Attack at most this many fake images of the split.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub workdir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("work"),
        }
    }
}

/// Full run configuration. Every section is optional; absent keys take
/// their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub models: ModelsConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainSection,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file, then apply the workdir override from the
    /// environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::data::not_found(e, "config", path))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = std::env::var_os(WORKDIR_ENV) {
            cfg.paths.workdir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.n_per_class == 0 {
            return Err(Error::Invalid("data.n_per_class must be at least 1".into()));
        }
        if !(self.data.artifact_amplitude >= 0.0) {
            return Err(Error::Invalid("data.artifact_amplitude must be non-negative".into()));
        }
        if self.models.latent_dim == 0 {
            return Err(Error::Invalid("models.latent_dim must be positive".into()));
        }
        if self.models.classifier_widths.is_empty()
            || self
                .models
                .classifier_widths
                .iter()
                .chain([&self.models.transfer_width])
                .any(|&w| w < 2)
        {
            return Err(Error::Invalid("classifier widths must be at least 2".into()));
        }
        let schedule = self.schedule.build()?;
        for t in [&self.train.codec, &self.train.score, &self.train.classifier] {
            t.validate()?;
        }
        self.attack.validate(schedule.ddim_steps())?;
        if self.attack.cond_index > 2 {
            return Err(Error::Invalid(format!("attack.cond_index {} outside 0..=2", self.attack.cond_index)));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved config (workdir excluded, so runs in
    /// different directories hash alike).
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(p) = v.get_mut("paths") {
            *p = serde_json::Value::Null;
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Git-blob style digest: `sha256("blob <len>\0" + canonical JSON)`.
    pub fn content_hash(&self) -> String {
        let body = self.canonical_json();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::GradMethod;

    #[test]
    fn empty_document_takes_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.schedule.train_steps, 100);
        assert_eq!(cfg.attack.grad_method, GradMethod::MiFgsm);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"dat": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"data": {"n_per_clas": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"attack": {"eps": 0.1}}"#).is_err());
    }

    #[test]
    fn partial_sections_merge_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"data": {"n_per_class": 3}, "schedule": {"T_train": 50, "ddim_steps": 10},
                "attack": {"step_size": 0.01, "grad_method": "plain-gd", "transforms": ["hflip"]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.data.n_per_class, 3);
        assert_eq!(cfg.data.seed, DataConfig::default().seed);
        assert_eq!(cfg.schedule.train_steps, 50);
        assert_eq!(cfg.attack.step_size, crate::attack::StepSize::Fixed(0.01));
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_errors() {
        assert!(RunConfig::from_json(r#"{"data": {"n_per_class": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"attack": {"timestep": 21}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"attack": {"eps_start": 0.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"attack": {"step_size": "eps/4"}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content_not_workdir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.workdir = "elsewhere".into();
        assert_eq!(a.content_hash(), b.content_hash());
        b.attack.seed = 99;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }
}
