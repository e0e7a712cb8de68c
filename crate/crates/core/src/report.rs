//! Report files: per-image CSV, JSON summary and PPM image strips.
//!
//! CSV columns are `id, ssim, verdict_<classifier>…, radius, success`.
//! Verdicts are predicted labels (0 real, 1 fake); `radius` is empty for
//! failed attacks. Floats use Rust's shortest round-trip formatting, so
//! identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{asr, competition_score, EvalRecord, ScoreBreakdown};
use crate::models::{IMAGE_SHAPE, SIDE};
use crate::tensor::Tensor;

pub const REPORT_VERSION: u32 = 1;
pub const CSV_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const IMAGE_DIR: &str = "images";
/// Gain applied to `|x_adv − x|` in the difference panel.
pub const DIFF_GAIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierAsr {
    pub name: String,
    pub transfer: bool,
    pub asr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub report_version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub records: usize,
    /// Fraction of records fooling every white-box classifier.
    pub white_box_asr: Option<f64>,
    /// Mean over transfer classifiers of their individual ASR.
    pub transfer_asr: Option<f64>,
    pub per_classifier: Vec<ClassifierAsr>,
    pub mean_ssim: Option<f64>,
    pub mean_ssim_successful: Option<f64>,
    pub score: ScoreBreakdown,
}

/// Build the summary for records whose verdicts list the white-box
/// classifiers first, then `names.len() - white_box` transfer classifiers.
pub fn summarize(
    records: &[EvalRecord],
    names: &[String],
    white_box: usize,
    config_hash: &str,
    config: serde_json::Value,
) -> Result<Summary> {
    if white_box > names.len() {
        return Err(Error::Invalid(format!("{white_box} white-box of {} classifiers", names.len())));
    }
    let score = competition_score(records, names)?;
    let n = records.len();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let per_classifier = names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            Ok(ClassifierAsr {
                name: name.clone(),
                transfer: f >= white_box,
                asr: if n == 0 { None } else { Some(asr(records, f)?) },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let transfer: Vec<f64> = per_classifier.iter().filter(|c| c.transfer).filter_map(|c| c.asr).collect();
    let fooled = records
        .iter()
        .filter(|r| r.verdicts[..white_box].iter().all(|&v| v == crate::models::LABEL_REAL))
        .count();
    Ok(Summary {
        report_version: REPORT_VERSION,
        config_hash: config_hash.to_string(),
        config,
        records: n,
        white_box_asr: (n > 0).then(|| fooled as f64 / n as f64),
        transfer_asr: mean(transfer),
        per_classifier,
        mean_ssim: mean(records.iter().map(|r| r.ssim).collect()),
        mean_ssim_successful: mean(records.iter().filter(|r| r.success).map(|r| r.ssim).collect()),
        score,
    })
}

pub fn csv_text(records: &[EvalRecord], names: &[String]) -> String {
    let mut out = String::from("id,ssim");
    for n in names {
        write!(out, ",verdict_{n}").unwrap();
    }
    out.push_str(",radius,success\n");
    for r in records {
        write!(out, "{},{}", r.id, r.ssim).unwrap();
        for v in &r.verdicts {
            write!(out, ",{v}").unwrap();
        }
        match r.radius {
            Some(x) => write!(out, ",{x}").unwrap(),
            None => out.push(','),
        }
        writeln!(out, ",{}", r.success).unwrap();
    }
    out
}

/// Parse a CSV written by [`csv_text`] back into records.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<EvalRecord>)> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Invalid("empty CSV".into()))?
        .split(',')
        .collect();
    if header.len() < 4 || header[0] != "id" || header[1] != "ssim" {
        return Err(Error::Invalid("unexpected CSV header".into()));
    }
    let names: Vec<String> = header[2..header.len() - 2]
        .iter()
        .map(|h| h.trim_start_matches("verdict_").to_string())
        .collect();
    let bad = |l: &str| Error::Invalid(format!("bad CSV row {l:?}"));
    let mut records = Vec::new();
    for line in lines {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != header.len() {
            return Err(bad(line));
        }
        let k = c.len();
        records.push(EvalRecord {
            id: c[0].parse().map_err(|_| bad(line))?,
            ssim: c[1].parse().map_err(|_| bad(line))?,
            verdicts: c[2..k - 2]
                .iter()
                .map(|v| v.parse().map_err(|_| bad(line)))
                .collect::<Result<_>>()?,
            radius: if c[k - 2].is_empty() {
                None
            } else {
                Some(c[k - 2].parse().map_err(|_| bad(line))?)
            },
            success: c[k - 1].parse().map_err(|_| bad(line))?,
        });
    }
    Ok((names, records))
}

/// Images shown for one record: original, reconstruction, adversarial.
pub struct ImagePanels<'a> {
    pub id: usize,
    pub original: &'a Tensor,
    pub recon: &'a Tensor,
    pub adversarial: &'a Tensor,
}

/// Binary PPM strip `original | recon | adversarial | 5·|adv − original|`.
pub fn ppm_strip(p: &ImagePanels) -> Result<Vec<u8>> {
    for t in [p.original, p.recon, p.adversarial] {
        if t.len() != IMAGE_SHAPE.iter().product::<usize>() {
            return Err(Error::Shape(format!("panel has {} values", t.len())));
        }
    }
    let diff = p.adversarial.sub(&p.original.reshape(p.adversarial.shape().to_vec())?)?.map(|v| DIFF_GAIN * v.abs());
    let panels = [p.original.data(), p.recon.data(), p.adversarial.data(), diff.data()];
    let plane = SIDE * SIDE;
    let mut out = format!("P6\n{} {}\n255\n", SIDE * panels.len(), SIDE).into_bytes();
    for i in 0..SIDE {
        for panel in &panels {
            for j in 0..SIDE {
                for c in 0..3 {
                    let v = panel[c * plane + i * SIDE + j].clamp(0.0, 1.0);
                    out.push((v * 255.0).round() as u8);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub images: Vec<PathBuf>,
}

/// Write the CSV, the JSON summary and one PPM strip per panel set.
pub fn write_report(dir: &Path, records: &[EvalRecord], names: &[String], summary: &Summary, panels: &[ImagePanels]) -> Result<ReportPaths> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(CSV_FILE);
    fs::write(&csv, csv_text(records, names))?;
    let json = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(&json, text)?;
    let mut images = Vec::new();
    if !panels.is_empty() {
        let img_dir = dir.join(IMAGE_DIR);
        fs::create_dir_all(&img_dir)?;
        for p in panels {
            let path = img_dir.join(format!("{:05}.ppm", p.id));
            fs::write(&path, ppm_strip(p)?)?;
            images.push(path);
        }
    }
    Ok(ReportPaths {
        csv,
        summary: json,
        images,
    })
}
