//! SSIM, attack success rate and the competition score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LABEL_REAL, SIDE};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = g[i] * g[j] / (total * total);
        }
    }
    w
}

/// Mean SSIM over every valid 7×7 window of every channel, for `[C, H, W]`
/// images (a flat 768-vector is read as `3×16×16`).
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "ssim of {:?} against {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        [n] if n % (SIDE * SIDE) == 0 => (n / (SIDE * SIDE), SIDE, SIDE),
        [1, n] if n % (SIDE * SIDE) == 0 => (n / (SIDE * SIDE), SIDE, SIDE),
        _ => return Err(Error::Shape(format!("ssim needs [C, H, W], got {:?}", x.shape()))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("image {h}×{w} smaller than the SSIM window")));
    }
    let win = gaussian_window();
    let (a, b) = (x.data(), y.data());
    let mut channel_sum = 0.0;
    for ch in 0..c {
        let base = ch * h * w;
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..=h - SSIM_WINDOW {
            for j in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (di, row) in win.iter().enumerate() {
                    for (dj, &g) in row.iter().enumerate() {
                        let k = base + (i + di) * w + j + dj;
                        let (p, q) = (a[k], b[k]);
                        mx += g * p;
                        my += g * q;
                        sxx += g * p * p;
                        syy += g * q * q;
                        sxy += g * p * q;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
        channel_sum += total / count as f64;
    }
    Ok(channel_sum / c as f64)
}

/// Per-image evaluation outcome. `verdicts[f]` is classifier `f`'s
/// predicted label on the adversarial image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: usize,
    pub ssim: f64,
    pub verdicts: Vec<usize>,
    pub radius: Option<f64>,
    pub success: bool,
}

/// Fraction of records in which classifier `classifier` predicted real.
pub fn asr(records: &[EvalRecord], classifier: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Invalid("attack success rate of an empty record set".into()));
    }
    let mut hits = 0;
    for r in records {
        let v = r.verdicts.get(classifier).ok_or_else(|| {
            Error::Invalid(format!("record {} has no verdict for classifier {classifier}", r.id))
        })?;
        if *v == LABEL_REAL {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// `(classifier name, Σ_k SSIM_k · [verdict_k = real])`.
    pub per_classifier: Vec<(String, f64)>,
    pub total: f64,
}

/// `Σ_f Σ_k SSIM_k · [f(x_adv_k) = real]`, with one partial sum per
/// classifier; the total adds the partials in classifier order.
pub fn competition_score(records: &[EvalRecord], classifiers: &[String]) -> Result<ScoreBreakdown> {
    for r in records {
        if r.verdicts.len() != classifiers.len() {
            return Err(Error::Invalid(format!(
                "record {} has {} verdicts for {} classifiers",
                r.id,
                r.verdicts.len(),
                classifiers.len()
            )));
        }
    }
    let per_classifier: Vec<(String, f64)> = classifiers
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let s = records
                .iter()
                .filter(|r| r.verdicts[f] == LABEL_REAL)
                .fold(0.0, |acc, r| acc + r.ssim);
            (name.clone(), s)
        })
        .collect();
    let total = per_classifier.iter().fold(0.0, |acc, (_, s)| acc + s);
    Ok(ScoreBreakdown {
        per_classifier,
        total,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng as _;

    use super::*;
    use crate::models::IMAGE_SHAPE;
    use crate::rng;

    fn random_image(seed: u64) -> Tensor {
        let mut r = rng::stream(seed, 0);
        Tensor::new(IMAGE_SHAPE.to_vec(), (0..768).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let x = random_image(1);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_closed_form() {
        let x = Tensor::full(IMAGE_SHAPE.to_vec(), 0.5);
        let y = Tensor::full(IMAGE_SHAPE.to_vec(), 0.6);
        let expected = (2.0 * 0.5 * 0.6 + SSIM_C1) / (0.25 + 0.36 + SSIM_C1);
        let got = ssim(&x, &y).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.98361).abs() < 1e-5);
    }

    #[test]
    fn window_weights_sum_to_one() {
        let s: f64 = gaussian_window().iter().flatten().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(ssim(&random_image(1), &Tensor::zeros(vec![3, 16, 15])).is_err());
    }

    #[test]
    fn symmetric_and_bounded() {
        for s in 0..10 {
            let (x, y) = (random_image(s), random_image(s + 100));
            let (a, b) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
            assert!((a - b).abs() < 1e-15);
            assert!((-1.0..=1.0).contains(&a));
        }
    }

    fn record(id: usize, ssim: f64, verdicts: Vec<usize>) -> EvalRecord {
        EvalRecord {
            id,
            ssim,
            verdicts,
            radius: None,
            success: false,
        }
    }

    #[test]
    fn asr_counts() {
        let all_fake: Vec<_> = (0..4).map(|i| record(i, 1.0, vec![1])).collect();
        assert_eq!(asr(&all_fake, 0).unwrap(), 0.0);
        let all_real: Vec<_> = (0..4).map(|i| record(i, 1.0, vec![0])).collect();
        assert_eq!(asr(&all_real, 0).unwrap(), 1.0);
        let mixed: Vec<_> = (0..4).map(|i| record(i, 1.0, vec![usize::from(i == 2)])).collect();
        assert_eq!(asr(&mixed, 0).unwrap(), 0.75);
        assert!(asr(&[], 0).is_err());
        assert!(asr(&mixed, 1).is_err());
    }

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn score_edge_cases() {
        let fake: Vec<_> = (0..5).map(|i| record(i, 0.9, vec![1, 1, 1])).collect();
        assert_eq!(competition_score(&fake, &names(3)).unwrap().total, 0.0);
        let real: Vec<_> = (0..5).map(|i| record(i, 1.0, vec![0, 0, 0])).collect();
        let s = competition_score(&real, &names(3)).unwrap();
        assert_eq!(s.total, 15.0);
        assert_eq!(s.per_classifier.len(), 3);
        assert!(competition_score(&real, &names(2)).is_err());
        assert_eq!(competition_score(&[], &names(2)).unwrap().total, 0.0);
    }

    proptest! {
        #[test]
        fn flipping_to_real_never_lowers_score(
            ssims in prop::collection::vec(0.0f64..1.0, 1..12),
            seed in any::<u64>(),
        ) {
            let mut r = rng::stream(seed, 0);
            let recs: Vec<_> = ssims
                .iter()
                .enumerate()
                .map(|(i, &s)| record(i, s, (0..3).map(|_| r.random_range(0..2)).collect()))
                .collect();
            let before = competition_score(&recs, &names(3)).unwrap().total;
            let (k, f) = (r.random_range(0..recs.len()), r.random_range(0..3));
            let mut flipped = recs.clone();
            flipped[k].verdicts[f] = LABEL_REAL;
            prop_assert!(competition_score(&flipped, &names(3)).unwrap().total >= before);
        }
    }
}
