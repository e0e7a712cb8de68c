//! Random differentiable image transforms, resampled every iteration.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::models::{CHANNELS, IMAGE_SHAPE, SIDE};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Side of the centre crop before it is resized back to 16×16.
pub const CROP_SIDE: usize = 12;

/// Pool members, listed in the order they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Hflip,
    Vflip,
    Rot90,
    CenterCropResize,
    ChannelDropout,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Hflip,
        TransformKind::Vflip,
        TransformKind::Rot90,
        TransformKind::CenterCropResize,
        TransformKind::ChannelDropout,
    ];
}

/// One sampled transform with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Transform {
    Hflip,
    Vflip,
    /// Counter-clockwise rotation by `quarter_turns · 90°`.
    Rot90 { quarter_turns: usize },
    CenterCropResize,
    ChannelDropout { channel: usize },
}

/// The transforms drawn for one iteration, in application order.
pub type TransformDraw = Vec<Transform>;

/// Sample each pool member independently with probability `p`, in the fixed
/// order of [`TransformKind::ALL`]. Rotation draws 1–3 quarter turns and
/// dropout draws the channel, both only when the member is applied.
pub fn sample_draw(pool: &[TransformKind], p: f64, rng: &mut Rng) -> TransformDraw {
    let mut draw = Vec::new();
    for kind in TransformKind::ALL {
        if !pool.contains(&kind) || rng.random::<f64>() >= p {
            continue;
        }
        draw.push(match kind {
            TransformKind::Hflip => Transform::Hflip,
            TransformKind::Vflip => Transform::Vflip,
            TransformKind::Rot90 => Transform::Rot90 {
                quarter_turns: rng.random_range(1..=3),
            },
            TransformKind::CenterCropResize => Transform::CenterCropResize,
            TransformKind::ChannelDropout => Transform::ChannelDropout {
                channel: rng.random_range(0..CHANNELS),
            },
        });
    }
    draw
}

fn index_map(out_side: usize, source: impl Fn(usize, usize) -> (usize, usize)) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(CHANNELS * out_side * out_side);
    for c in 0..CHANNELS {
        for i in 0..out_side {
            for j in 0..out_side {
                let (si, sj) = source(i, j);
                idx.push(c * SIDE * SIDE + si * SIDE + sj);
            }
        }
    }
    idx.into()
}

fn emit_one(g: &mut Graph, x: Var, t: Transform) -> Var {
    let last = SIDE - 1;
    match t {
        Transform::Hflip => g.gather(x, index_map(SIDE, |i, j| (i, last - j)), &IMAGE_SHAPE),
        Transform::Vflip => g.gather(x, index_map(SIDE, |i, j| (last - i, j)), &IMAGE_SHAPE),
        Transform::Rot90 { quarter_turns } => {
            // output (i, j) of a counter-clockwise quarter turn reads input (j, last - i)
            let map = index_map(SIDE, move |i, j| {
                let (mut a, mut b) = (i, j);
                for _ in 0..quarter_turns % 4 {
                    (a, b) = (b, last - a);
                }
                (a, b)
            });
            g.gather(x, map, &IMAGE_SHAPE)
        }
        Transform::CenterCropResize => {
            let off = (SIDE - CROP_SIDE) / 2;
            let crop = g.gather(
                x,
                index_map(CROP_SIDE, |i, j| (i + off, j + off)),
                &[CHANNELS, CROP_SIDE, CROP_SIDE],
            );
            g.resize(crop, SIDE, SIDE)
        }
        Transform::ChannelDropout { channel } => {
            let plane = SIDE * SIDE;
            let mask: Vec<f64> = (0..CHANNELS * plane)
                .map(|k| if k / plane == channel { 0.0 } else { 1.0 })
                .collect();
            let m = g.constant(Tensor::from_parts(IMAGE_SHAPE.to_vec(), mask));
            g.mul(x, m)
        }
    }
}

/// Apply a draw to a `[3, 16, 16]` image node.
pub fn emit_transforms(g: &mut Graph, x: Var, draw: &[Transform]) -> Var {
    draw.iter().fold(x, |v, &t| emit_one(g, v, t))
}

/// Apply a draw to an image tensor.
pub fn apply_transforms(x: &Tensor, draw: &[Transform]) -> Result<Tensor> {
    let x = x.reshape(IMAGE_SHAPE.to_vec())?;
    let mut g = Graph::new();
    let xv = g.input(&IMAGE_SHAPE);
    let y = emit_transforms(&mut g, xv, draw);
    Ok(g.build(&[y])?.eval(&[x])?.remove(0))
}

/// Sample a draw and apply it.
pub fn transform_sample(
    x: &Tensor,
    pool: &[TransformKind],
    p: f64,
    rng: &mut Rng,
) -> Result<(Tensor, TransformDraw)> {
    let draw = sample_draw(pool, p, rng);
    Ok((apply_transforms(x, &draw)?, draw))
}
