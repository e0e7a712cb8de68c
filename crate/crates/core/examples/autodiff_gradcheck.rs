//! Record a small graph, pull back its gradient and compare it with
//! central differences.

use latent_adv::autodiff::{grad_check, Graph};
use latent_adv::{rng, Tensor};

fn main() -> latent_adv::Result<()> {
    let mut g = Graph::new();
    let x = g.input(&[1, 4]);
    let w = g.input(&[4, 3]);
    let h = g.matmul(x, w);
    let a = g.tanh(h);
    let b = g.silu(h);
    let prod = g.mul(a, b);
    let loss = g.sum(prod);
    let program = g.build(&[loss])?;

    let mut r = rng::stream(0, 0);
    let inputs = [
        Tensor::new(vec![1, 4], rng::normals(&mut r, 4))?,
        Tensor::new(vec![4, 3], rng::normals(&mut r, 12))?,
    ];
    let (value, grads) = program.value_and_grad(&inputs)?;
    println!("loss = {value:.6}");
    println!("dL/dx = {:?}", grads[0].data());
    println!("grad_check max relative error = {:.2e}", grad_check(&program, &inputs, 1e-6)?);
    Ok(())
}
