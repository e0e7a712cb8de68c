//! Synthetic real/fake corpus and the checkpoint container.
//!
//! Real images are a few smooth Gaussian blobs on a low-frequency
//! background. Fake images are the same draw plus a one-pixel checkerboard
//! of random phase on one channel, the stand-in for a generator
//! fingerprint.

pub mod checkpoint;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CHANNELS, IMAGE_SHAPE, LABEL_FAKE, LABEL_REAL, PIXELS, SIDE};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_ARTIFACT_AMPLITUDE: f64 = 0.15;

pub const CORPUS_FILE: &str = "corpus.ladv";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 by position in the corpus.
    pub fn of_index(index: usize, total: usize) -> Split {
        if 10 * index < 8 * total {
            Split::Train
        } else if 10 * index < 9 * total {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: Tensor,
    pub label: usize,
    pub seed: u64,
    pub split: Split,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub seed: u64,
    pub label: usize,
    pub split: Split,
}

/// Draws of the shared real-image construction.
struct Scene {
    base: [f64; CHANNELS],
    wave: [(f64, f64, f64, f64); CHANNELS],
    blobs: Vec<([f64; 2], f64, [f64; CHANNELS])>,
}

impl Scene {
    fn draw(r: &mut rng::Rng) -> Self {
        let base = std::array::from_fn(|_| r.random_range(0.15..0.7));
        let wave = std::array::from_fn(|_| {
            (
                r.random_range(0.05..0.2),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(0.0..std::f64::consts::TAU),
            )
        });
        let count = r.random_range(2..=4);
        let blobs = (0..count)
            .map(|_| {
                let centre = [r.random_range(2.0..14.0), r.random_range(2.0..14.0)];
                let width = r.random_range(1.5..4.0);
                let colour = std::array::from_fn(|_| r.random_range(-0.45..0.5));
                (centre, width, colour)
            })
            .collect();
        Scene { base, wave, blobs }
    }

    fn pixel(&self, c: usize, i: usize, j: usize) -> f64 {
        let (amp, u, v, phase) = self.wave[c];
        let (y, x) = (i as f64, j as f64);
        let t = std::f64::consts::PI * (u * y + v * x) / SIDE as f64 + phase;
        let mut p = self.base[c] + amp * t.sin();
        for (centre, width, colour) in &self.blobs {
            let d2 = (y - centre[0]).powi(2) + (x - centre[1]).powi(2);
            p += colour[c] * (-d2 / (2.0 * width * width)).exp();
        }
        p
    }
}

/// Channel and phase of the checkerboard, drawn after the scene.
fn draw_artifact(r: &mut rng::Rng) -> (usize, usize) {
    (r.random_range(0..CHANNELS), r.random_range(0..2))
}

/// Render one sample. The scene is drawn first and the artifact last, so a
/// fake and its artifact-free twin share every scene draw. The
/// checkerboard adds `amplitude` where `(i + j + phase)` is odd.
pub fn render(seed: u64, label: usize, amplitude: f64) -> Tensor {
    let mut r = rng::stream(seed, 0);
    let scene = Scene::draw(&mut r);
    let (channel, phase) = draw_artifact(&mut r);
    let mut data = Vec::with_capacity(PIXELS);
    for c in 0..CHANNELS {
        for i in 0..SIDE {
            for j in 0..SIDE {
                let mut p = scene.pixel(c, i, j);
                if label == LABEL_FAKE && c == channel && (i + j + phase) % 2 == 1 {
                    p += amplitude;
                }
                data.push(p.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::from_parts(IMAGE_SHAPE.to_vec(), data)
}

/// Channel carrying the checkerboard for a fake sample drawn from `seed`.
pub fn artifact_channel(seed: u64) -> usize {
    let mut r = rng::stream(seed, 0);
    Scene::draw(&mut r);
    draw_artifact(&mut r).0
}

/// `2 · n_per_class` samples; sample `i` has label `i mod 2` and seed
/// `derive_seed(seed, i)`.
pub fn gen_dataset(n_per_class: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    gen_dataset_with(n_per_class, seed, DEFAULT_ARTIFACT_AMPLITUDE)
}

pub fn gen_dataset_with(n_per_class: usize, seed: u64, amplitude: f64) -> Result<Vec<SyntheticSample>> {
    if n_per_class == 0 {
        return Err(Error::Invalid("n_per_class must be at least 1".into()));
    }
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(Error::Invalid(format!("artifact amplitude {amplitude} must be non-negative")));
    }
    let total = 2 * n_per_class;
    Ok((0..total)
        .map(|i| {
            let s = rng::derive_seed(seed, i as u64);
            let label = if i % 2 == 0 { LABEL_REAL } else { LABEL_FAKE };
            SyntheticSample {
                image: render(s, label, amplitude),
                label,
                seed: s,
                split: Split::of_index(i, total),
            }
        })
        .collect())
}

/// Images of one split stacked as `[n, 768]`, with their labels and
/// positions in the corpus.
#[derive(Debug, Clone)]
pub struct SplitView {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl SplitView {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, k: usize) -> Tensor {
        Tensor::from_parts(
            IMAGE_SHAPE.to_vec(),
            self.images.data()[k * PIXELS..(k + 1) * PIXELS].to_vec(),
        )
    }
}

pub fn split_view(samples: &[SyntheticSample], split: Split) -> SplitView {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut indices = Vec::new();
    for (i, s) in samples.iter().enumerate().filter(|(_, s)| s.split == split) {
        data.extend_from_slice(s.image.data());
        labels.push(s.label);
        indices.push(i);
    }
    SplitView {
        images: Tensor::from_parts(vec![labels.len(), PIXELS], data),
        labels,
        indices,
    }
}

/// Write the corpus container and manifest into `dir`.
pub fn write_corpus(dir: &Path, samples: &[SyntheticSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = samples.len();
    let mut images = Vec::with_capacity(n * PIXELS);
    for s in samples {
        images.extend_from_slice(s.image.data());
    }
    let labels = samples.iter().map(|s| s.label as f64).collect();
    checkpoint::save_checkpoint(
        dir.join(CORPUS_FILE),
        &[
            ("images".into(), Tensor::new(vec![n, PIXELS], images)?),
            ("labels".into(), Tensor::vector(labels)),
        ],
    )?;
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    for s in samples {
        let rec = ManifestRecord {
            seed: s.seed,
            label: s.label,
            split: s.split,
        };
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = fs::File::open(path).map_err(|e| not_found(e, "corpus manifest", path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Load a corpus written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Vec<SyntheticSample>> {
    let path = dir.join(CORPUS_FILE);
    if !path.exists() {
        return Err(Error::NotFound {
            what: "corpus",
            path,
        });
    }
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut t = checkpoint::load_checkpoint(&path)?;
    let images = checkpoint::take(&mut t, "images")?;
    if images.shape() != [manifest.len(), PIXELS] {
        return Err(Error::Shape(format!(
            "corpus images {:?} do not match {} manifest lines",
            images.shape(),
            manifest.len()
        )));
    }
    Ok(manifest
        .into_iter()
        .enumerate()
        .map(|(i, m)| SyntheticSample {
            image: Tensor::from_parts(
                IMAGE_SHAPE.to_vec(),
                images.data()[i * PIXELS..(i + 1) * PIXELS].to_vec(),
            ),
            label: m.label,
            seed: m.seed,
            split: m.split,
        })
        .collect())
}

pub(crate) fn not_found(e: std::io::Error, what: &'static str, path: &Path) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound {
            what,
            path: path.to_path_buf(),
        }
    } else {
        Error::Io(e)
    }
}
