use super::Program;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient scales below this are treated as zero.
pub const GRAD_CHECK_FLOOR: f64 = 1e-12;

/// `|a - n| / max(scale, GRAD_CHECK_FLOOR)`, zero when `a == n`.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / scale.max(GRAD_CHECK_FLOOR)
}

/// Largest per-coordinate error between the pullback of a scalar program
/// and the central difference `(f(x+h) - f(x-h)) / 2h`, over every
/// coordinate of every input.
///
/// Each coordinate's error is taken relative to the gradient's magnitude
/// `max_i max(|a_i|, |n_i|)`, so round-off in near-zero coordinates does not
/// dominate. A program with an identically zero gradient reports 0.
pub fn grad_check(program: &Program, inputs: &[Tensor], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step {h} must be positive")));
    }
    let (_, analytic) = program.value_and_grad(inputs)?;
    let f = |args: &[Tensor]| -> Result<f64> { Ok(program.eval(args)?[0].item()) };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut pairs = Vec::new();
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let x = work[k].data()[i];
            work[k].data_mut()[i] = x + h;
            let plus = f(&work)?;
            work[k].data_mut()[i] = x - h;
            let minus = f(&work)?;
            work[k].data_mut()[i] = x;
            pairs.push((grad.data()[i], (plus - minus) / (2.0 * h)));
        }
    }
    let scale = pairs
        .iter()
        .fold(0.0f64, |m, &(a, n)| m.max(a.abs()).max(n.abs()));
    Ok(pairs
        .iter()
        .map(|&(a, n)| relative_error(a, n, scale))
        .fold(0.0, f64::max))
}
