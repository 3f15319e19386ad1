//! 2-D discrete Fourier transform over the last two axes.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn last_two(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(Error::Shape(format!(
            "fft2 needs rank >= 2 (…×H×W), got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((t.numel() / (h * w), h, w))
}

/// In-place unnormalized 2-D transform of one `h×w` row-major plane.
fn transform_plane(plane: &mut [Complex64], h: usize, w: usize, dir: FftDirection, planner: &mut FftPlanner<f64>) {
    let row_fft = planner.plan_fft(w, dir);
    for row in plane.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(h, dir);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = plane[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            plane[y * w + x] = col[y];
        }
    }
}

/// Forward transform of every `h×w` plane in `data`.
pub(crate) fn fft2_planes(data: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    for plane in buf.chunks_mut(h * w) {
        transform_plane(plane, h, w, FftDirection::Forward, &mut planner);
    }
    buf
}

/// Unnormalized inverse transform of every plane.
fn ifft2_planes(buf: &mut [Complex64], h: usize, w: usize) {
    let mut planner = FftPlanner::new();
    for plane in buf.chunks_mut(h * w) {
        transform_plane(plane, h, w, FftDirection::Inverse, &mut planner);
    }
}

/// Unnormalized forward 2-D FFT over the last two axes, returned as
/// (real, imaginary) tensors of the input shape. Not differentiable.
pub fn fft2(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, h, w) = last_two(x)?;
    let spec = fft2_planes(x.data(), h, w);
    let re = Tensor::new(spec.iter().map(|c| c.re).collect(), x.shape())?;
    let im = Tensor::new(spec.iter().map(|c| c.im).collect(), x.shape())?;
    Ok((re, im))
}

impl Tensor {
    /// Magnitude `|F(x)|` of the unnormalized 2-D FFT over the last two axes.
    ///
    /// Differentiable; bins with zero magnitude contribute a zero
    /// subgradient.
    pub fn spectral_magnitude(&self) -> Result<Tensor> {
        let (_, h, w) = last_two(self)?;
        let spec = fft2_planes(self.data(), h, w);
        let mags: Vec<f64> = spec.iter().map(|c| c.norm()).collect();
        Ok(Tensor::from_op(
            "spectral_magnitude",
            self.shape().to_vec(),
            mags,
            vec![self.clone()],
            Box::new(move |g, mags| {
                // d|Z_k|/dx_n = Re(conj(Z_k)/|Z_k| · e^{-iωkn}), summed over k with
                // weights g_k, is the real part of an unnormalized inverse FFT.
                let mut u: Vec<Complex64> = spec
                    .iter()
                    .zip(mags)
                    .zip(g)
                    .map(|((z, &m), &gk)| if m > 0.0 { z * (gk / m) } else { Complex64::new(0.0, 0.0) })
                    .collect();
                ifft2_planes(&mut u, h, w);
                vec![Some(u.iter().map(|c| c.re).collect())]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_dft(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        acc += Complex64::from_polar(x[y * w + xx], ang);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_is_dc_only() {
        let x = Tensor::full(&[4, 8], 0.25);
        let (re, im) = fft2(&x).unwrap();
        assert!((re.data()[0] - 0.25 * 32.0).abs() < 1e-12);
        for i in 1..32 {
            assert!(re.data()[i].abs() < 1e-12 && im.data()[i].abs() < 1e-12);
        }
        assert!(im.data()[0].abs() < 1e-12);
    }

    #[test]
    fn zeros_transform_to_zeros() {
        let (re, im) = fft2(&Tensor::zeros(&[8, 8])).unwrap();
        assert!(re.data().iter().chain(im.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn agrees_with_direct_dft_on_all_small_sizes() {
        let mut seed = 7u64;
        for h in 1..=16 {
            for w in 1..=16 {
                let x: Vec<f64> = (0..h * w)
                    .map(|_| {
                        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
                        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                    })
                    .collect();
                let want = direct_dft(&x, h, w);
                let (re, im) = fft2(&Tensor::new(x, &[h, w]).unwrap()).unwrap();
                for i in 0..h * w {
                    assert!((re.data()[i] - want[i].re).abs() < 1e-8, "{h}×{w}");
                    assert!((im.data()[i] - want[i].im).abs() < 1e-8, "{h}×{w}");
                }
            }
        }
    }

    #[test]
    fn rank_one_rejected() {
        assert!(matches!(fft2(&Tensor::zeros(&[8])), Err(Error::Shape(_))));
    }
}
