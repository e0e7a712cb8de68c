//! The five pipeline commands. Each reads and writes the run's workdir:
//!
//! ```text
//! corpus.ladv  manifest.jsonl  gen_data.json          gen-data
//! checkpoints/*.ladv  admission.json                  train
//! attack/records.jsonl  attack/run.json               attack
//! report/results.csv  report/summary.json  report/images/*.ppm   eval
//! ```
//!
//! Every JSON output carries the resolved config and its hash.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bundle::{classifier_names, AdmissionReport, ModelBundle, ADMISSION_FILE};
use super::config::RunConfig;
use super::selftest::{check_outcomes, run_selftest, SuiteOutcome};
use crate::attack::{run_attack, AttackModels, AttackResult, GradMethod};
use crate::data::{gen_dataset_with, not_found, read_corpus, split_view, write_corpus, SyntheticSample};
use crate::error::{Error, Result};
use crate::metrics::{ssim, EvalRecord};
use crate::models::{argmax_label, LABEL_FAKE};
use crate::report::{summarize, write_report, ImagePanels, ReportPaths, Summary};

pub const GEN_DATA_FILE: &str = "gen_data.json";
pub const ATTACK_DIR: &str = "attack";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const ATTACK_RUN_FILE: &str = "run.json";
pub const REPORT_DIR: &str = "report";

fn workdir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.workdir.clone();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn resolved(cfg: &RunConfig) -> serde_json::Value {
    serde_json::from_str(&cfg.canonical_json()).expect("canonical config is JSON")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenDataInfo {
    config_hash: String,
    config: serde_json::Value,
    samples: usize,
}

/// Generate the corpus into the workdir.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Vec<SyntheticSample>> {
    let dir = workdir(cfg)?;
    let samples = gen_dataset_with(cfg.data.n_per_class, cfg.data.seed, cfg.data.artifact_amplitude)?;
    write_corpus(&dir, &samples)?;
    let info = GenDataInfo {
        config_hash: cfg.content_hash(),
        config: resolved(cfg),
        samples: samples.len(),
    };
    write_json(&dir.join(GEN_DATA_FILE), &info)?;
    Ok(samples)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdmissionFile {
    #[serde(flatten)]
    report: AdmissionReport,
    config: serde_json::Value,
}

/// Train every model on the workdir corpus and write checkpoints and the
/// admission report. Fails with [`Error::Admission`] after writing both if
/// a check fails.
pub fn cmd_train(cfg: &RunConfig) -> Result<AdmissionReport> {
    let dir = workdir(cfg)?;
    let samples = read_corpus(&dir)?;
    let (bundle, report) = ModelBundle::train(&samples, cfg)?;
    bundle.save(&dir)?;
    write_json(
        &dir.join(ADMISSION_FILE),
        &AdmissionFile {
            report: report.clone(),
            config: resolved(cfg),
        },
    )?;
    if !report.passed {
        return Err(Error::Admission(report.failures.join("; ")));
    }
    Ok(report)
}

/// Read the admission report, requiring that it exists and passed.
pub fn read_admission(workdir: &Path) -> Result<AdmissionReport> {
    let path = workdir.join(ADMISSION_FILE);
    if !path.exists() {
        return Err(Error::Admission(format!("no admission report at {}; run train first", path.display())));
    }
    let text = fs::read_to_string(&path)?;
    let file: AdmissionFile = serde_json::from_str(&text)?;
    if !file.report.passed {
        return Err(Error::Admission(format!("models were not admitted: {}", file.report.failures.join("; "))));
    }
    Ok(file.report)
}

/// Generate and train into the workdir unless it already holds models
/// admitted under the same config hash.
pub fn ensure_trained(cfg: &RunConfig) -> Result<AdmissionReport> {
    let dir = workdir(cfg)?;
    if let Ok(report) = read_admission(&dir) {
        if report.config_hash == cfg.content_hash() {
            return Ok(report);
        }
    }
    cmd_gen_data(cfg)?;
    cmd_train(cfg)
}

/// Command-line overrides for `attack`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackOverrides {
    pub limit: Option<usize>,
    pub grad_method: Option<GradMethod>,
    pub no_transforms: bool,
    pub timestep: Option<usize>,
}

impl AttackOverrides {
    /// `cfg` with the overrides applied and validated.
    pub fn apply(&self, cfg: &RunConfig) -> Result<RunConfig> {
        let mut c = cfg.clone();
        if let Some(l) = self.limit {
            c.eval.limit = Some(l);
        }
        if let Some(m) = self.grad_method {
            c.attack.grad_method = m;
        }
        if self.no_transforms {
            c.attack.transforms.clear();
        }
        if let Some(s) = self.timestep {
            c.attack.timestep = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AttackRun {
    config_hash: String,
    config: serde_json::Value,
    attacked: usize,
    successes: usize,
}

/// Corpus indices of the fake images in the evaluation split, limited.
pub fn attack_targets(samples: &[SyntheticSample], cfg: &RunConfig) -> Vec<usize> {
    let view = split_view(samples, cfg.eval.split);
    let fakes = view
        .indices
        .iter()
        .zip(&view.labels)
        .filter(|(_, &l)| l == LABEL_FAKE)
        .map(|(&i, _)| i);
    match cfg.eval.limit {
        Some(n) => fakes.take(n).collect(),
        None => fakes.collect(),
    }
}

/// Attack the evaluation split's fakes with admitted models. Records are
/// written in corpus order, one JSON object per line.
pub fn cmd_attack(cfg: &RunConfig, overrides: &AttackOverrides) -> Result<Vec<AttackResult>> {
    let cfg = overrides.apply(cfg)?;
    let dir = workdir(&cfg)?;
    read_admission(&dir)?;
    let samples = read_corpus(&dir)?;
    let bundle = ModelBundle::load(&dir, &cfg)?;
    let cond = bundle.score.table.embed(cfg.attack.cond_index)?;
    let null = bundle.score.table.null();
    let transfer = [bundle.transfer.clone()];
    let models = AttackModels {
        codec: &bundle.codec,
        score: &bundle.score.net,
        schedule: &bundle.schedule,
        cond: &cond,
        null_cond: &null,
        white_box: &bundle.white_box,
        transfer: &transfer,
    };
    let out_dir = dir.join(ATTACK_DIR);
    fs::create_dir_all(&out_dir)?;
    let mut file = std::io::BufWriter::new(fs::File::create(out_dir.join(RECORDS_FILE))?);
    let mut results = Vec::new();
    for i in attack_targets(&samples, &cfg) {
        let r = run_attack(&samples[i].image, &cfg.attack, &models, i)?;
        serde_json::to_writer(&mut file, &r)?;
        file.write_all(b"\n")?;
        results.push(r);
    }
    file.flush()?;
    write_json(
        &out_dir.join(ATTACK_RUN_FILE),
        &AttackRun {
            config_hash: cfg.content_hash(),
            config: resolved(&cfg),
            attacked: results.len(),
            successes: results.iter().filter(|r| r.success).count(),
        },
    )?;
    Ok(results)
}

pub fn read_attack_records(workdir: &Path) -> Result<Vec<AttackResult>> {
    let path = workdir.join(ATTACK_DIR).join(RECORDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| not_found(e, "attack records", &path))?;
    text.lines().filter(|l| !l.is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub records: Vec<EvalRecord>,
    pub summary: Summary,
    pub paths: ReportPaths,
}

/// Re-score the attack records with every detector and write the report.
/// SSIM is recomputed against the corpus originals.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutcome> {
    let dir = workdir(cfg)?;
    let samples = read_corpus(&dir)?;
    let attacks = read_attack_records(&dir)?;
    let bundle = ModelBundle::load(&dir, cfg)?;
    let mut records = Vec::with_capacity(attacks.len());
    for a in &attacks {
        let original = &samples
            .get(a.id)
            .ok_or_else(|| Error::Invalid(format!("attack record {} is not in the corpus", a.id)))?
            .image;
        let x = a.x_adv_image();
        let verdicts = bundle
            .classifiers()
            .map(|f| Ok(argmax_label(f.classify_logits(&x)?.data())))
            .collect::<Result<Vec<_>>>()?;
        records.push(EvalRecord {
            id: a.id,
            ssim: ssim(original, &x)?,
            verdicts,
            radius: a.radius,
            success: a.success,
        });
    }
    let names = classifier_names(bundle.white_box.len());
    let summary = summarize(&records, &names, bundle.white_box.len(), &cfg.content_hash(), resolved(cfg))?;
    let adv: Vec<_> = attacks.iter().map(|a| (a.x_adv_image(), a.x_recon_image())).collect();
    let panels: Vec<ImagePanels> = attacks
        .iter()
        .zip(&adv)
        .map(|(a, (x, r))| ImagePanels {
            id: a.id,
            original: &samples[a.id].image,
            recon: r,
            adversarial: x,
        })
        .collect();
    let paths = write_report(&dir.join(REPORT_DIR), &records, &names, &summary, &panels)?;
    Ok(EvalOutcome { records, summary, paths })
}

/// Run the built-in suites; fails with [`Error::SelfTest`] naming any
/// failed suite.
pub fn cmd_selftest(seed: u64) -> Result<Vec<SuiteOutcome>> {
    let out = run_selftest(seed);
    check_outcomes(&out)?;
    Ok(out)
}
