//! High-frequency amplification: split token features into a Gaussian
//! low-pass part and its residual, then re-inject the residual with
//! per-channel scale and shift predicted from its global average.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::ParamStore;

/// Normalized `k × k` Gaussian, row-major.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Vec<f64> {
    let r = (k / 2) as f64;
    let mut g: Vec<f64> = (0..k * k)
        .map(|i| {
            let (y, x) = ((i / k) as f64 - r, (i % k) as f64 - r);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Intermediates of one HFAM pass, all in `[D, gh, gw]` layout except the
/// per-channel `gamma` / `beta` (`[1, D]`).
#[derive(Debug, Clone)]
pub struct HfamTrace {
    pub x: Tensor,
    pub x_low: Tensor,
    pub x_hf: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub output: Tensor,
}

/// Parameter-name view over the HFAM entries of a store.
pub struct Hfam<'a> {
    pub(crate) params: &'a ParamStore,
}

impl Hfam<'_> {
    pub fn kernel(&self) -> Result<&Tensor> {
        self.params.get("hfam.kernel")
    }

    /// `tokens` is `[N, D]` with `N == gh·gw`; returns `[N, D]`.
    pub fn forward(&self, tokens: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
        Ok(self.forward_traced(tokens, grid)?.output)
    }

    pub fn forward_traced(&self, tokens: &Tensor, grid: (usize, usize)) -> Result<HfamTrace> {
        let (gh, gw) = grid;
        let d = match *tokens.shape() {
            [n, d] if n == gh * gw => d,
            _ => {
                return Err(Error::Shape(format!(
                    "HFAM got tokens {:?} for a {gh}×{gw} grid",
                    tokens.shape()
                )))
            }
        };
        let x = tokens.transpose_last()?.reshape(&[d, gh, gw])?;
        let x_low = x.conv2d_depthwise(self.kernel()?)?;
        let x_hf = x.sub(&x_low)?;
        let pooled = x_hf.mean_axes(&[1, 2], false)?.reshape(&[1, d])?;
        let hidden = pooled
            .matmul(self.params.get("hfam.fc1.weight")?)?
            .add(self.params.get("hfam.fc1.bias")?)?
            .gelu();
        let film = hidden
            .matmul(self.params.get("hfam.fc2.weight")?)?
            .add(self.params.get("hfam.fc2.bias")?)?;
        let gamma = film.narrow(1, 0, d)?;
        let beta = film.narrow(1, d, d)?;
        let hf_tokens = x_hf.reshape(&[d, gh * gw])?.transpose_last()?;
        let output = tokens.add(&gamma.mul(&hf_tokens)?)?.add(&beta)?;
        Ok(HfamTrace {
            x,
            x_low,
            x_hf,
            gamma,
            beta,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for (k, sigma) in [(5, 1.0), (3, 0.5), (7, 2.0)] {
            let g = gaussian_kernel(k, sigma);
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for y in 0..k {
                for x in 0..k {
                    let v = g[y * k + x];
                    assert_eq!(v, g[y * k + (k - 1 - x)]);
                    assert_eq!(v, g[(k - 1 - y) * k + x]);
                }
            }
            let centre = g[(k / 2) * k + k / 2];
            assert!(g.iter().all(|&v| v <= centre));
        }
    }
}
