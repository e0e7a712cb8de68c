use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layers::{check_param_shapes, Linear, Parameterized};
use super::{IMAGE_SHAPE, PIXELS};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    Identity,
    Linear,
}

/// Image ↔ latent map. The linear variant is an affine autoencoder on
/// centred pixels whose latents are standardized per dimension:
/// `z = ((x − x̄)·E + e − mean) / scale`. Decoding undoes the
/// standardization, applies `D`, and clamps to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Codec {
    Identity,
    Linear {
        encoder: Linear,
        decoder: Linear,
        pixel_mean: Arc<Tensor>,
        mean: Arc<Tensor>,
        scale: Arc<Tensor>,
    },
}

/// Leading parameters updated by gradient training: encoder and decoder.
pub(crate) const TRAINABLE: usize = 4;

/// Bound codec parameter nodes.
pub(crate) struct CodecNodes {
    vars: Vec<Var>,
    inv_scale: Option<Var>,
}

impl Codec {
    pub fn linear(rng: &mut Rng, latent_dim: usize) -> Self {
        Codec::Linear {
            encoder: Linear::init(rng, PIXELS, latent_dim, 1.0),
            decoder: Linear::init(rng, latent_dim, PIXELS, 0.1),
            pixel_mean: Arc::new(Tensor::zeros(vec![PIXELS])),
            mean: Arc::new(Tensor::zeros(vec![latent_dim])),
            scale: Arc::new(Tensor::full(vec![latent_dim], 1.0)),
        }
    }

    pub fn kind(&self) -> CodecKind {
        match self {
            Codec::Identity => CodecKind::Identity,
            Codec::Linear { .. } => CodecKind::Linear,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Codec::Identity => PIXELS,
            Codec::Linear { encoder, .. } => encoder.outputs(),
        }
    }

    pub(crate) fn bind(&self, g: &mut Graph, trainable: bool) -> CodecNodes {
        // standardization statistics are fitted, never trained
        let vars = self
            .params()
            .into_iter()
            .enumerate()
            .map(|(i, (_, t))| {
                if trainable && i < TRAINABLE {
                    g.input(t.shape())
                } else {
                    g.constant(t)
                }
            })
            .collect();
        let inv_scale = match self {
            Codec::Identity => None,
            Codec::Linear { scale, .. } => Some(g.constant(scale.map(|s| 1.0 / s))),
        };
        CodecNodes { vars, inv_scale }
    }

    /// `[batch, 768] → [batch, latent_dim]`.
    pub(crate) fn emit_encode_with(&self, g: &mut Graph, p: &CodecNodes, x: Var) -> Var {
        match self {
            Codec::Identity => x,
            Codec::Linear { .. } => {
                let h = g.sub(x, p.vars[4]);
                let h = g.matmul(h, p.vars[0]);
                let h = g.add(h, p.vars[1]);
                let h = g.sub(h, p.vars[5]);
                g.mul(h, p.inv_scale.expect("linear codec binds a scale"))
            }
        }
    }

    /// `[batch, latent_dim] → [batch, 768]`, clamped to `[0, 1]`.
    pub(crate) fn emit_decode_with(&self, g: &mut Graph, p: &CodecNodes, z: Var) -> Var {
        let raw = self.emit_decode_raw(g, p, z);
        g.clamp(raw, 0.0, 1.0)
    }

    /// Decoder output before the final clamp.
    pub(crate) fn emit_decode_raw(&self, g: &mut Graph, p: &CodecNodes, z: Var) -> Var {
        match self {
            Codec::Identity => z,
            Codec::Linear { .. } => {
                let h = g.mul(z, p.vars[6]);
                let h = g.add(h, p.vars[5]);
                let h = g.matmul(h, p.vars[2]);
                g.add(h, p.vars[3])
            }
        }
    }

    /// Differentiable decode with frozen parameters; `z` is `[batch, latent_dim]`.
    pub fn emit_decode(&self, g: &mut Graph, z: Var) -> Var {
        let p = self.bind(g, false);
        self.emit_decode_with(g, &p, z)
    }

    /// Differentiable encode with frozen parameters; `x` is `[batch, 768]`.
    pub fn emit_encode(&self, g: &mut Graph, x: Var) -> Var {
        let p = self.bind(g, false);
        self.emit_encode_with(g, &p, x)
    }

    /// Standardized latent `[1, latent_dim]` of one `3×16×16` image, or
    /// `[batch, latent_dim]` of a `[batch, 768]` batch.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        if x.is_empty() || !x.len().is_multiple_of(PIXELS) {
            return Err(Error::Shape(format!(
                "codec input has {} values, not a multiple of {PIXELS}",
                x.len()
            )));
        }
        if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pixel value {v} outside [0, 1]")));
        }
        let batch = x.len() / PIXELS;
        let flat = x.reshape(vec![batch, PIXELS])?;
        if let Codec::Identity = self {
            return Ok(flat);
        }
        let mut g = Graph::new();
        let xv = g.input(flat.shape());
        let z = self.emit_encode(&mut g, xv);
        Ok(g.build(&[z])?.eval(&[flat])?.remove(0))
    }

    /// Image `[3, 16, 16]` from a single latent, or `[batch, 768]` from a batch.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let d = self.latent_dim();
        if z.is_empty() || !z.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "latent has {} values, not a multiple of {d}",
                z.len()
            )));
        }
        let batch = z.len() / d;
        let flat = z.reshape(vec![batch, d])?;
        let mut g = Graph::new();
        let zv = g.input(flat.shape());
        let x = self.emit_decode(&mut g, zv);
        let out = g.build(&[x])?.eval(&[flat])?.remove(0);
        if batch == 1 {
            out.reshape(IMAGE_SHAPE.to_vec())
        } else {
            Ok(out)
        }
    }

    /// Centre encoder inputs on the data mean and start the decoder bias
    /// there, so training only has to learn the deviations.
    pub(crate) fn center(&mut self, mean_image: &Tensor) -> Result<()> {
        if let Codec::Linear {
            decoder, pixel_mean, ..
        } = self
        {
            if mean_image.shape() != decoder.bias.shape() {
                return Err(Error::Shape(format!("mean image {:?}", mean_image.shape())));
            }
            *pixel_mean = Arc::new(mean_image.clone());
            decoder.bias = Arc::new(mean_image.clone());
        }
        Ok(())
    }

    /// Unstandardized latents `x·E + e` for a `[batch, 768]` batch.
    pub(crate) fn raw_latents(&self, x: &Tensor) -> Result<Option<Tensor>> {
        match self {
            Codec::Identity => Ok(None),
            Codec::Linear {
                encoder, pixel_mean, ..
            } => {
                let m = pixel_mean.data();
                let centred = x.data().iter().enumerate().map(|(i, v)| v - m[i % PIXELS]).collect();
                let centred = Tensor::new(x.shape().to_vec(), centred)?;
                let h = crate::tensor::matmul(&centred, encoder.weight.as_ref());
                let b = encoder.bias.data();
                let d = b.len();
                let mut out = h.into_data();
                for (i, v) in out.iter_mut().enumerate() {
                    *v += b[i % d];
                }
                Ok(Some(Tensor::new(vec![x.shape()[0], d], out)?))
            }
        }
    }

    /// Fit the per-dimension standardization to `[batch, 768]` training
    /// images. Scale uses the population standard deviation, floored at 1e-6.
    pub fn fit_standardization(&mut self, x: &Tensor) -> Result<()> {
        let Some(raw) = self.raw_latents(x)? else {
            return Ok(());
        };
        let (n, d) = (raw.shape()[0], raw.shape()[1]);
        let mut m = vec![0.0; d];
        for row in raw.data().chunks(d) {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        let mut var = vec![0.0; d];
        for row in raw.data().chunks(d) {
            for ((a, v), mu) in var.iter_mut().zip(row).zip(&m) {
                *a += (v - mu) * (v - mu);
            }
        }
        let s: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt().max(1e-6)).collect();
        if let Codec::Linear { mean, scale, .. } = self {
            *mean = Arc::new(Tensor::vector(m));
            *scale = Arc::new(Tensor::vector(s));
        }
        Ok(())
    }
}

impl Parameterized for Codec {
    /// Encoder and decoder weights, then the fitted statistics: pixel mean,
    /// latent mean and latent scale.
    fn params(&self) -> Vec<(String, Arc<Tensor>)> {
        match self {
            Codec::Identity => Vec::new(),
            Codec::Linear {
                encoder,
                decoder,
                pixel_mean,
                mean,
                scale,
            } => {
                let mut p: Vec<_> = encoder.named("codec.encoder").into();
                p.extend(decoder.named("codec.decoder"));
                p.push(("codec.pixel_mean".into(), pixel_mean.clone()));
                p.push(("codec.latent_mean".into(), mean.clone()));
                p.push(("codec.latent_scale".into(), scale.clone()));
                p
            }
        }
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        check_param_shapes(&self.params(), &params)?;
        if let Codec::Linear {
            encoder,
            decoder,
            pixel_mean,
            mean,
            scale,
        } = self
        {
            let mut it = params.into_iter();
            encoder.replace(it.next().unwrap(), it.next().unwrap());
            decoder.replace(it.next().unwrap(), it.next().unwrap());
            *pixel_mean = Arc::new(it.next().unwrap());
            *mean = Arc::new(it.next().unwrap());
            *scale = Arc::new(it.next().unwrap());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng;
    use rand::Rng as _;

    fn images(seed: u64, n: usize) -> Tensor {
        let mut r = rng::stream(seed, 4);
        Tensor::new(vec![n, PIXELS], (0..n * PIXELS).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identity_round_trip_is_exact() {
        let x = images(1, 1).reshape(IMAGE_SHAPE.to_vec()).unwrap();
        let c = Codec::Identity;
        let back = c.decode(&c.encode(&x).unwrap()).unwrap();
        assert_eq!(back, x);
        assert_eq!(c.encode(&x).unwrap().data(), x.data());
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let mut x = images(1, 1);
        x.data_mut()[5] = 1.5;
        assert!(Codec::Identity.encode(&x).is_err());
        x.data_mut()[5] = -0.1;
        assert!(Codec::linear(&mut rng::stream(1, 0), 8).encode(&x).is_err());
    }

    #[test]
    fn zero_latent_zero_bias_decodes_black() {
        let mut c = Codec::linear(&mut rng::stream(1, 0), 8);
        let w = c.param_values();
        let mut zeroed = w.clone();
        zeroed[3] = Tensor::zeros(vec![PIXELS]);
        // mean is already zero; keep the random decoder weights
        c.set_params(zeroed).unwrap();
        let x = c.decode(&Tensor::zeros(vec![1, 8])).unwrap();
        assert_eq!(x.shape(), &IMAGE_SHAPE);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_encode_is_affine() {
        let c = Codec::linear(&mut rng::stream(2, 0), 8);
        let x = images(3, 1);
        let y = images(4, 1);
        let mid = x.add(&y).unwrap().scale(0.5);
        let (zx, zy, zm) = (c.encode(&x).unwrap(), c.encode(&y).unwrap(), c.encode(&mid).unwrap());
        let avg = zx.add(&zy).unwrap().scale(0.5);
        assert!(avg.sub(&zm).unwrap().abs_max() < 1e-10);
    }

    #[test]
    fn standardization_whitens_training_latents() {
        let mut c = Codec::linear(&mut rng::stream(2, 0), 8);
        let x = images(5, 200);
        c.fit_standardization(&x).unwrap();
        let z = c.encode(&x).unwrap();
        for j in 0..8 {
            let col: Vec<f64> = z.data().chunks(8).map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / 200.0;
            let v = col.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 200.0;
            assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-8, "dim {j}: mean {m}, var {v}");
        }
    }

    #[test]
    fn decode_gradient_matches_differences() {
        let mut c = Codec::linear(&mut rng::stream(7, 0), 8);
        c.fit_standardization(&images(8, 50)).unwrap();
        let mut g = Graph::new();
        let z = g.input(&[1, 8]);
        let x = c.emit_decode(&mut g, z);
        let sq = g.mul(x, x);
        let loss = g.sum(sq);
        let program = g.build(&[loss]).unwrap();
        // small latent keeps most pixels off the clamp boundary
        let z0 = Tensor::new(vec![1, 8], rng::normals(&mut rng::stream(9, 0), 8).iter().map(|v| 0.05 * v).collect()).unwrap();
        let err = grad_check(&program, &[z0], 1e-6).unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }
}
