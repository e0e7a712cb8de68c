//! The transform pool: each member is a linear index, mask or resize map,
//! so its pullback is exact.

use latent_adv::attack::{apply_transforms, sample_draw, Transform, TransformKind};
use latent_adv::autodiff::Graph;
use latent_adv::{rng, Tensor};

fn main() -> latent_adv::Result<()> {
    let x = Tensor::new(vec![3, 16, 16], (0..768).map(|i| i as f64 / 767.0).collect())?;
    for t in [
        Transform::Hflip,
        Transform::Vflip,
        Transform::Rot90 { quarter_turns: 1 },
        Transform::CenterCropResize,
        Transform::ChannelDropout { channel: 2 },
    ] {
        let y = apply_transforms(&x, &[t])?;
        println!("{t:?}: first row {:.3?}", &y.data()[..4]);
    }

    let mut r = rng::stream(3, 0);
    for _ in 0..4 {
        println!("draw: {:?}", sample_draw(&TransformKind::ALL, 0.5, &mut r));
    }

    // pullback of a sum through channel dropout zeroes the dropped channel
    let mut g = Graph::new();
    let xv = g.input(&[3, 16, 16]);
    let y = latent_adv::attack::emit_transforms(&mut g, xv, &[Transform::ChannelDropout { channel: 1 }]);
    let s = g.sum(y);
    let (_, grads) = g.build(&[s])?.value_and_grad(&[x])?;
    let per_channel: Vec<f64> = grads[0].data().chunks(256).map(|c| c.iter().sum()).collect();
    println!("gradient mass per channel: {per_channel:?}");
    Ok(())
}
