use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{split_view, Split, SyntheticSample};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::models::{ClassifierNet, Codec, CodecKind, EmbeddingTable, Parameterized, ScoreNet};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{
    accuracy, codec_mse, reconstruction_linf, train_classifier, train_codec, train_score_net,
    ConditionalScore, TrainConfig, TrainReport,
};

pub const MIN_ACCURACY: f64 = 0.95;
pub const MAX_RECON_LINF: f64 = 5e-2;
/// Minimum L2 distance between the real-style and fake-style rows.
pub const MIN_ROW_DISTANCE: f64 = 1e-3;

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const ADMISSION_FILE: &str = "admission.json";

/// Every trained component of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub codec: Codec,
    pub score: ConditionalScore,
    pub white_box: Vec<ClassifierNet>,
    pub transfer: ClassifierNet,
    pub schedule: NoiseSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionReport {
    pub config_hash: String,
    pub white_box_accuracy: Vec<f64>,
    pub transfer_accuracy: f64,
    pub codec_test_mse: f64,
    pub reconstruction_linf: f64,
    pub embedding_row_distance: f64,
    pub codec_training: TrainReport,
    pub score_training: TrainReport,
    pub classifier_training: Vec<TrainReport>,
    pub min_accuracy: f64,
    pub max_reconstruction_linf: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

fn classifier_name(k: usize, white_box: usize) -> String {
    if k < white_box {
        format!("classifier_wb{k}")
    } else {
        "classifier_transfer".to_string()
    }
}

/// Names of the detectors in report order: white-box first, then transfer.
pub fn classifier_names(white_box: usize) -> Vec<String> {
    (0..=white_box)
        .map(|k| {
            if k < white_box {
                format!("wb{k}")
            } else {
                "transfer".into()
            }
        })
        .collect()
}

impl ModelBundle {
    /// Freshly initialized, untrained models for `cfg`.
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let m = &cfg.models;
        let codec = match m.codec {
            CodecKind::Identity => Codec::Identity,
            CodecKind::Linear => Codec::linear(&mut rng::stream(m.seed, 10), m.latent_dim),
        };
        let latent = codec.latent_dim();
        let score = ConditionalScore {
            net: ScoreNet::init(&mut rng::stream(m.seed, 11), latent),
            table: EmbeddingTable::init(&mut rng::stream(m.seed, 12)),
        };
        let widths: Vec<usize> = m.classifier_widths.iter().chain([&m.transfer_width]).copied().collect();
        let mut nets: Vec<ClassifierNet> = widths
            .iter()
            .enumerate()
            .map(|(k, &w)| ClassifierNet::init(&mut rng::stream(m.seed, 20 + k as u64), w))
            .collect();
        let transfer = nets.pop().unwrap();
        Ok(Self {
            codec,
            score,
            white_box: nets,
            transfer,
            schedule: cfg.schedule.build()?,
        })
    }

    pub fn classifiers(&self) -> impl Iterator<Item = &ClassifierNet> {
        self.white_box.iter().chain([&self.transfer])
    }

    /// Train codec, then score network on the codec's latents, then every
    /// detector, and measure the admission checks on the test split.
    pub fn train(samples: &[SyntheticSample], cfg: &RunConfig) -> Result<(Self, AdmissionReport)> {
        let mut b = Self::init(cfg)?;
        let train = split_view(samples, Split::Train);
        let test = split_view(samples, Split::Test);
        if train.is_empty() || test.is_empty() {
            return Err(Error::Invalid("corpus too small for an 80/10/10 split".into()));
        }
        let codec_training = train_codec(&mut b.codec, &train.images, &cfg.train.codec)?;
        let latents = b.codec.encode(&train.images)?;
        let score_training = train_score_net(&mut b.score, &latents, &train.labels, &b.schedule, &cfg.train.score)?;
        let mut classifier_training = Vec::new();
        let count = b.white_box.len() + 1;
        for k in 0..count {
            let tc = TrainConfig {
                seed: cfg.train.classifier.seed.wrapping_add(k as u64),
                ..cfg.train.classifier
            };
            let net = if k < b.white_box.len() {
                &mut b.white_box[k]
            } else {
                &mut b.transfer
            };
            classifier_training.push(train_classifier(net, &train.images, &train.labels, &tc)?);
        }

        let white_box_accuracy = b.white_box.iter().map(|f| accuracy(f, &test)).collect::<Result<Vec<_>>>()?;
        let transfer_accuracy = accuracy(&b.transfer, &test)?;
        let reconstruction = reconstruction_linf(&b.codec, &b.score, &b.schedule, &test, cfg.train.admission_w)?;
        let row_distance = b.score.table.embed(1)?.sub(&b.score.table.embed(2)?)?.l2_norm();
        let mut failures = Vec::new();
        for (k, a) in white_box_accuracy.iter().chain([&transfer_accuracy]).enumerate() {
            if !(*a >= MIN_ACCURACY) {
                failures.push(format!("{} accuracy {a:.4} < {MIN_ACCURACY}", classifier_name(k, b.white_box.len())));
            }
        }
        if !(reconstruction < MAX_RECON_LINF) {
            failures.push(format!("reconstruction L∞ {reconstruction:.4e} >= {MAX_RECON_LINF}"));
        }
        if !(row_distance > MIN_ROW_DISTANCE) {
            failures.push(format!("conditioning rows collapsed (distance {row_distance:.3e})"));
        }
        let report = AdmissionReport {
            config_hash: cfg.content_hash(),
            white_box_accuracy,
            transfer_accuracy,
            codec_test_mse: codec_mse(&b.codec, &test.images)?,
            reconstruction_linf: reconstruction,
            embedding_row_distance: row_distance,
            codec_training,
            score_training,
            classifier_training,
            min_accuracy: MIN_ACCURACY,
            max_reconstruction_linf: MAX_RECON_LINF,
            passed: failures.is_empty(),
            failures,
        };
        Ok((b, report))
    }

    pub fn save(&self, workdir: &Path) -> Result<()> {
        let dir = workdir.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&dir)?;
        save_checkpoint(dir.join("codec.ladv"), &named(&self.codec))?;
        save_checkpoint(dir.join("score.ladv"), &named(&self.score))?;
        for (k, f) in self.classifiers().enumerate() {
            let name = classifier_name(k, self.white_box.len());
            save_checkpoint(dir.join(format!("{name}.ladv")), &named(f))?;
        }
        Ok(())
    }

    /// Load checkpoints written by [`ModelBundle::save`] into the
    /// architecture described by `cfg`.
    pub fn load(workdir: &Path, cfg: &RunConfig) -> Result<Self> {
        let mut b = Self::init(cfg)?;
        let dir = workdir.join(CHECKPOINT_DIR);
        fn fill(model: &mut dyn ParamSink, path: &Path) -> Result<()> {
            let stored = load_checkpoint(path)?;
            let names = model.names();
            let mut values = Vec::with_capacity(names.len());
            for n in names {
                let t = stored
                    .iter()
                    .find(|(s, _)| *s == n)
                    .ok_or_else(|| Error::MissingTensor(n.clone()))?;
                values.push(t.1.clone());
            }
            model.replace(values)
        }
        fill(&mut b.codec, &dir.join("codec.ladv"))?;
        fill(&mut b.score, &dir.join("score.ladv"))?;
        let wb = b.white_box.len();
        for k in 0..=wb {
            let path = dir.join(format!("{}.ladv", classifier_name(k, wb)));
            if k < wb {
                fill(&mut b.white_box[k], &path)?;
            } else {
                fill(&mut b.transfer, &path)?;
            }
        }
        Ok(b)
    }
}

fn named<M: Parameterized>(m: &M) -> Vec<(String, Tensor)> {
    m.params().into_iter().map(|(n, t)| (n, (*t).clone())).collect()
}

/// Object-safe view of [`Parameterized`] used when loading.
trait ParamSink {
    fn names(&self) -> Vec<String>;
    fn replace(&mut self, values: Vec<Tensor>) -> Result<()>;
}

impl<M: Parameterized> ParamSink for M {
    fn names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    fn replace(&mut self, values: Vec<Tensor>) -> Result<()> {
        self.set_params(values)
    }
}
