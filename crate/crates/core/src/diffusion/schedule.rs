use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-β noise schedule with a DDIM sub-sequence of timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    train_steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    ddim_indices: Vec<usize>,
}

/// A timestep together with its cumulative signal level ᾱ_t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestep {
    pub t: usize,
    pub alpha_bar: f64,
}

/// Serializable schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    #[serde(rename = "T_train")]
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            ddim_steps: 20,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.train_steps, self.beta_start, self.beta_end, self.ddim_steps)
    }
}

impl NoiseSchedule {
    /// β_t interpolates linearly from `beta_start` (t = 1) to `beta_end`
    /// (t = `train_steps`); ᾱ_t = Π_{s ≤ t} (1 − β_s) with ᾱ_0 = 1. The DDIM
    /// sub-sequence is `⌊k · T / ddim_steps⌋` for `k = 0..=ddim_steps`.
    pub fn new(train_steps: usize, beta_start: f64, beta_end: f64, ddim_steps: usize) -> Result<Self> {
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        if train_steps == 0 || ddim_steps == 0 || ddim_steps > train_steps {
            return Err(Error::Invalid(format!(
                "need 1 <= ddim_steps <= T_train, got {ddim_steps}, {train_steps}"
            )));
        }
        let betas: Vec<f64> = (0..train_steps)
            .map(|i| {
                if train_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (train_steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(train_steps + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        let ddim_indices = (0..=ddim_steps).map(|k| k * train_steps / ddim_steps).collect();
        Ok(Self {
            train_steps,
            betas,
            alpha_bars,
            ddim_indices,
        })
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    /// β_1..β_T.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// ᾱ_0..ᾱ_T.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn ddim_indices(&self) -> &[usize] {
        &self.ddim_indices
    }

    pub fn ddim_steps(&self) -> usize {
        self.ddim_indices.len() - 1
    }

    pub fn timestep(&self, t: usize) -> Timestep {
        Timestep {
            t,
            alpha_bar: self.alpha_bars[t],
        }
    }

    /// The timestep at position `k` of the DDIM sub-sequence.
    pub fn ddim_timestep(&self, k: usize) -> Timestep {
        self.timestep(self.ddim_indices[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::new(1, 0.02, 0.02, 1).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.98]);
        assert_eq!(s.ddim_indices(), &[0, 1]);
    }

    #[test]
    fn two_step_constant_beta() {
        let s = NoiseSchedule::new(2, 0.1, 0.1, 2).unwrap();
        let a = s.alpha_bars();
        assert_eq!(a[0], 1.0);
        assert!((a[1] - 0.9).abs() < 1e-15);
        assert!((a[2] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_has_twenty_one_indices() {
        let s = ScheduleConfig::default().build().unwrap();
        let idx = s.ddim_indices();
        assert_eq!(idx.len(), 21);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 100);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn uneven_division_still_strictly_increasing() {
        let s = NoiseSchedule::new(7, 1e-3, 0.05, 3).unwrap();
        assert_eq!(s.ddim_indices(), &[0, 2, 4, 7]);
    }

    #[test]
    fn rejects_invalid_ranges() {
        assert!(NoiseSchedule::new(10, 0.0, 0.02, 5).is_err());
        assert!(NoiseSchedule::new(10, 0.03, 0.02, 5).is_err());
        assert!(NoiseSchedule::new(10, 1e-4, 1.0, 5).is_err());
        assert!(NoiseSchedule::new(10, 1e-4, 0.02, 0).is_err());
        assert!(NoiseSchedule::new(10, 1e-4, 0.02, 11).is_err());
    }
}
