use super::tensor::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Central-difference step used when callers have no better choice.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Largest relative disagreement between reverse-mode gradients of `f` at
/// `x` and central differences with the given `step`.
///
/// Each coordinate contributes `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradient_check(f: impl Fn(&Tensor) -> Result<Tensor>, x: &Tensor, step: f64) -> Result<f64> {
    gradient_check_many(|xs| f(&xs[0]), std::slice::from_ref(x), step)
}

/// [`gradient_check`] over several inputs at once; the maximum is taken over
/// every coordinate of every input.
pub fn gradient_check_many(
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {step}")));
    }
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient_check needs a scalar-valued function, got shape {:?}",
            out.shape()
        )));
    }
    if out.requires_grad() {
        out.backward()?;
    }

    let eval = |k: usize, i: usize, delta: f64| -> Result<f64> {
        no_grad(|| {
            let mut data = inputs[k].to_vec();
            data[i] += delta;
            let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
            probe[k] = Tensor::new(data, inputs[k].shape())?;
            f(&probe)?.item()
        })
    };

    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let numeric = (eval(k, i, step)? - eval(k, i, -step)?) / (2.0 * step);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
