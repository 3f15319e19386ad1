//! Restoration objectives: edge-weighted Charbonnier, spectral-magnitude
//! loss, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{to_gray, Image};
use crate::numerics::{fft2_planes, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// λ on the FFT term.
    pub lambda_fft: f64,
    pub charbonnier_epsilon: f64,
    /// Strength of the edge weighting; 0 gives plain Charbonnier.
    pub edge_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_fft: 0.1,
            charbonnier_epsilon: 1e-3,
            edge_alpha: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fft >= 0.0) {
            return Err(Error::Config(format!("lambda_fft must be >= 0, got {}", self.lambda_fft)));
        }
        if !(self.charbonnier_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "charbonnier_epsilon must be > 0, got {}",
                self.charbonnier_epsilon
            )));
        }
        if !(self.edge_alpha >= 0.0) {
            return Err(Error::Config(format!("edge_alpha must be >= 0, got {}", self.edge_alpha)));
        }
        Ok(())
    }
}

/// Per-pixel weights in `[1, 1 + alpha]`, shape `[1, H, W]`.
#[derive(Debug, Clone)]
pub struct EdgeWeightMap {
    w: Tensor,
}

impl EdgeWeightMap {
    /// All-ones map.
    pub fn uniform(h: usize, w: usize) -> EdgeWeightMap {
        EdgeWeightMap { w: Tensor::ones(&[1, h, w]) }
    }

    pub fn values(&self) -> &Tensor {
        &self.w
    }
}

const LAPLACIAN_FLOOR: f64 = 1e-8;

/// `[[0,1,0],[1,−4,1],[0,1,0]]` applied with edge-replicated borders.
pub fn laplacian3x3(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        plane[y * w + x]
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            out[y as usize * w + x as usize] =
                at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x);
        }
    }
    out
}

/// `w = 1 + alpha · |∇²gray| / max(max|∇²gray|, 1e-8)` on the luminance of
/// `gt`.
pub fn edge_weight_map(gt: &Image, alpha: f64) -> Result<EdgeWeightMap> {
    let gray = to_gray(gt)?;
    let (h, w) = gray.dims();
    let lap = laplacian3x3(gray.data(), h, w);
    let peak = lap.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(LAPLACIAN_FLOOR);
    let data = lap.iter().map(|v| 1.0 + alpha * v.abs() / peak).collect();
    Ok(EdgeWeightMap {
        w: Tensor::new(data, &[1, h, w])?,
    })
}

fn same_shape(pred: &Tensor, gt: &Tensor, what: &str) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "{what}: prediction {:?} and target {:?} differ",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// `mean(sqrt(w·(pred − gt)² + ε²))`, evaluated as `ε + mean(sqrt(…) − ε)`
/// so identical inputs give exactly `ε`.
pub fn charbonnier_loss(pred: &Tensor, gt: &Tensor, w: &EdgeWeightMap, eps: f64) -> Result<Tensor> {
    same_shape(pred, gt, "charbonnier loss")?;
    let (h, wd) = (pred.shape()[pred.rank() - 2], pred.shape()[pred.rank() - 1]);
    if w.w.shape() != [1, h, wd] {
        return Err(Error::Shape(format!(
            "edge weight map {:?} does not match a {h}×{wd} image",
            w.w.shape()
        )));
    }
    let d2 = pred.sub(gt)?.square();
    let inner = d2.mul(&w.w)?.add_scalar(eps * eps).sqrt()?;
    Ok(inner.add_scalar(-eps).mean_all().add_scalar(eps))
}

/// Mean over channels and frequency bins of `|F(pred − gt)|`.
pub fn fft_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    same_shape(pred, gt, "fft loss")?;
    Ok(pred.sub(gt)?.spectral_magnitude()?.mean_all())
}

/// The same quantity as [`fft_loss`] computed from the two spectra
/// separately, `mean |F(pred) − F(gt)|`. Value only.
pub fn fft_loss_two_spectra(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same_shape(pred, gt, "fft loss")?;
    let r = pred.rank();
    if r < 2 {
        return Err(Error::Shape(format!("fft loss needs …×H×W inputs, got {:?}", pred.shape())));
    }
    let (h, w) = (pred.shape()[r - 2], pred.shape()[r - 1]);
    let a = fft2_planes(pred.data(), h, w);
    let b = fft2_planes(gt.data(), h, w);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64)
}

/// `L_char + λ·L_fft` with the value of each term.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub charbonnier: f64,
    pub fft: f64,
}

pub fn total_loss(pred: &Tensor, gt: &Tensor, w: &EdgeWeightMap, weights: &LossWeights) -> Result<LossBreakdown> {
    let char_term = charbonnier_loss(pred, gt, w, weights.charbonnier_epsilon)?;
    let fft_term = fft_loss(pred, gt)?;
    let total = if weights.lambda_fft == 0.0 {
        char_term.clone()
    } else {
        char_term.add(&fft_term.mul_scalar(weights.lambda_fft))?
    };
    Ok(LossBreakdown {
        charbonnier: char_term.item()?,
        fft: fft_term.item()?,
        total,
    })
}

/// One row of a training loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub charbonnier: f64,
    pub fft: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,l_char,l_fft,l_total";

    pub fn from_breakdown(step: u64, b: &LossBreakdown) -> Result<LossRecord> {
        Ok(LossRecord {
            step,
            charbonnier: b.charbonnier,
            fft: b.fft,
            total: b.total.item()?,
        })
    }

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.step, self.charbonnier, self.fft, self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{synth_shadow_pair, ColorSpace};
    use crate::numerics::{gradient_check, DEFAULT_STEP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen())
    }

    #[test]
    fn weight_map_cases() {
        let flat = Image::filled(ColorSpace::Srgb, 6, 7, &[0.3, 0.6, 0.9]).unwrap();
        assert!(edge_weight_map(&flat, 1.0).unwrap().values().data().iter().all(|&v| v == 1.0));

        let mut data = vec![0.0; 3 * 49];
        for c in 0..3 {
            data[c * 49 + 3 * 7 + 3] = 1.0;
        }
        let dot = Image::from_planes(ColorSpace::Srgb, 7, 7, data).unwrap();
        let w = edge_weight_map(&dot, 2.0).unwrap();
        let v = w.values().data();
        // stencil: −4 at the pixel, +1 at its four neighbours
        assert!((v[24] - 3.0).abs() < 1e-12);
        for n in [17, 23, 25, 31] {
            assert!((v[n] - 1.5).abs() < 1e-12);
        }
        assert!(v.iter().all(|&x| (1.0..=3.0).contains(&x)));
        assert!(edge_weight_map(&dot, 0.0).unwrap().values().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn charbonnier_identities() {
        let gt = rand_tensor(&[3, 4, 4], 1);
        let w = EdgeWeightMap::uniform(4, 4);
        assert_eq!(charbonnier_loss(&gt, &gt, &w, 1e-3).unwrap().item().unwrap(), 1e-3);

        let pred = gt.add_scalar(0.5);
        let l = charbonnier_loss(&pred, &gt, &w, 1e-3).unwrap().item().unwrap();
        assert!((l - 0.5).abs() / 0.5 < 0.01);
        assert!(matches!(
            charbonnier_loss(&pred, &rand_tensor(&[3, 4, 5], 0), &w, 1e-3),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn charbonnier_gradients_including_zero_difference() {
        let gt = rand_tensor(&[3, 4, 4], 2);
        let pred = rand_tensor(&[3, 4, 4], 3);
        let img = Image::new(ColorSpace::Srgb, gt.clone()).unwrap();
        let w = edge_weight_map(&img, 1.0).unwrap();
        for p in [&pred, &gt] {
            let err = gradient_check(|x| charbonnier_loss(x, &gt, &w, 1e-3), p, DEFAULT_STEP).unwrap();
            assert!(err < 1e-3, "{err}");
        }
    }

    #[test]
    fn fft_identities() {
        let gt = rand_tensor(&[3, 4, 4], 4);
        assert_eq!(fft_loss(&gt, &gt).unwrap().item().unwrap(), 0.0);
        let pred = gt.add_scalar(0.25);
        assert!((fft_loss(&pred, &gt).unwrap().item().unwrap() - 0.25).abs() < 1e-12);
        let other = rand_tensor(&[3, 4, 4], 5);
        let ab = fft_loss(&other, &gt).unwrap().item().unwrap();
        let ba = fft_loss(&gt, &other).unwrap().item().unwrap();
        assert_eq!(ab, ba);
        assert!((ab - fft_loss_two_spectra(&other, &gt).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn fft_gradients() {
        let gt = rand_tensor(&[2, 4, 4], 6);
        let pred = rand_tensor(&[2, 4, 4], 7);
        for p in [&pred, &gt] {
            let err = gradient_check(|x| fft_loss(x, &gt), p, DEFAULT_STEP).unwrap();
            assert!(err < 1e-3, "{err}");
        }
    }

    #[test]
    fn fft_loss_is_not_monotone_under_pointwise_scaling() {
        let gt = Tensor::zeros(&[1, 1, 4]);
        let small = Tensor::new(vec![1.0, 1.0, 1.0, 0.01], &[1, 1, 4]).unwrap();
        let scaled = Tensor::new(vec![1.0, 1.0, 1.0, 1.0], &[1, 1, 4]).unwrap();
        let a = fft_loss(&small, &gt).unwrap().item().unwrap();
        let b = fft_loss(&scaled, &gt).unwrap().item().unwrap();
        assert!(b < a);
    }

    #[test]
    fn total_loss_recomposes() {
        let (shadow, free) = synth_shadow_pair(11, 16, 16).unwrap();
        let w = edge_weight_map(&free, 1.0).unwrap();
        let weights = LossWeights::default();
        let t = total_loss(shadow.pixels(), free.pixels(), &w, &weights).unwrap();
        let c = charbonnier_loss(shadow.pixels(), free.pixels(), &w, 1e-3).unwrap().item().unwrap();
        let f = fft_loss(shadow.pixels(), free.pixels()).unwrap().item().unwrap();
        assert!((t.total.item().unwrap() - (c + 0.1 * f)).abs() < 1e-12);

        let zero = LossWeights { lambda_fft: 0.0, ..weights.clone() };
        assert_eq!(total_loss(shadow.pixels(), free.pixels(), &w, &zero).unwrap().total.item().unwrap(), c);
        let same = total_loss(free.pixels(), free.pixels(), &w, &weights).unwrap();
        assert_eq!(same.total.item().unwrap(), 1e-3);
        assert!(LossWeights { lambda_fft: -1.0, ..weights }.validate().is_err());
    }

    #[test]
    fn csv_line_round_trips_values() {
        let r = LossRecord { step: 3, charbonnier: 0.1, fft: 1.0 / 3.0, total: 0.2 };
        let line = r.csv_line();
        let parts: Vec<f64> = line.split(',').skip(1).map(|s| s.parse().unwrap()).collect();
        assert_eq!(parts, vec![0.1, 1.0 / 3.0, 0.2]);
    }

    proptest! {
        #[test]
        fn scaling_difference_up_never_lowers_losses(
            base in proptest::collection::vec(-1.0f64..1.0, 16),
            factors in proptest::collection::vec(1.0f64..3.0, 16),
            uniform in 1.0f64..3.0,
        ) {
            let gt = Tensor::zeros(&[1, 4, 4]);
            let w = EdgeWeightMap::uniform(4, 4);
            let d = Tensor::new(base.clone(), &[1, 4, 4]).unwrap();
            let pointwise = Tensor::new(base.iter().zip(&factors).map(|(b, f)| b * f).collect(), &[1, 4, 4]).unwrap();
            let c0 = charbonnier_loss(&d, &gt, &w, 1e-3).unwrap().item().unwrap();
            let c1 = charbonnier_loss(&pointwise, &gt, &w, 1e-3).unwrap().item().unwrap();
            prop_assert!(c1 >= c0);
            let f0 = fft_loss(&d, &gt).unwrap().item().unwrap();
            let f1 = fft_loss(&d.mul_scalar(uniform), &gt).unwrap().item().unwrap();
            prop_assert!(f1 >= f0 * (1.0 - 1e-12));
        }
    }
}
