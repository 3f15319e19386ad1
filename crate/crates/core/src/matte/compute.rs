use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{lightness_plane, load_image, save_image, scan_pairs, ColorSpace, Image};
use crate::numerics::Tensor;

/// ε in the luminance ratio; keeps `matte(white, white)` below 1e-8.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Per-pixel shadow intensity in [0, 1], stored as `[1, H, W]`.
#[derive(Debug, Clone)]
pub struct ShadowMatte {
    values: Tensor,
    epsilon_used: f64,
}

impl ShadowMatte {
    /// Clamps into [0, 1]. `values` must be `[1, H, W]`.
    pub fn new(values: Tensor, epsilon_used: f64) -> Result<ShadowMatte> {
        if values.rank() != 3 || values.shape()[0] != 1 {
            return Err(Error::Shape(format!("matte must be [1, H, W], got {:?}", values.shape())));
        }
        let values = if values.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            values.detach()
        } else {
            Tensor::new(values.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(), values.shape())?
        };
        Ok(ShadowMatte { values, epsilon_used })
    }

    pub fn from_plane(h: usize, w: usize, data: Vec<f64>) -> Result<ShadowMatte> {
        ShadowMatte::new(Tensor::new(data, &[1, h, w])?, 0.0)
    }

    /// Reads an 8-bit grayscale matte image (`value / 255`).
    pub fn from_image(img: &Image) -> Result<ShadowMatte> {
        if img.space() != ColorSpace::Gray {
            return Err(Error::Format(format!("matte images must be grayscale, got {:?}", img.space())));
        }
        ShadowMatte::new(img.pixels().clone(), 0.0)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    pub fn epsilon_used(&self) -> f64 {
        self.epsilon_used
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::new(ColorSpace::Gray, self.values.clone())
    }
}

/// `{0, 1}` shadow mask obtained by thresholding a matte.
#[derive(Debug, Clone)]
pub struct BinaryMask {
    values: Tensor,
    threshold: f64,
}

impl BinaryMask {
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// The mask viewed as a (hard) matte.
    pub fn as_matte(&self) -> ShadowMatte {
        ShadowMatte {
            values: self.values.clone(),
            epsilon_used: 0.0,
        }
    }
}

/// Shadow matte of one pixel: `clamp(1 − L_shadow / (L_free + ε), 0, 1)`.
pub fn matte_value(l_shadow: f64, l_free: f64, epsilon: f64) -> f64 {
    (1.0 - l_shadow / (l_free + epsilon)).clamp(0.0, 1.0)
}

/// Matte from a shadow / shadow-free pair via the ratio of their L*
/// channels.
pub fn compute_matte(shadow: &Image, shadow_free: &Image, epsilon: f64) -> Result<ShadowMatte> {
    shadow.same_dims(shadow_free)?;
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("matte epsilon must be positive, got {epsilon}")));
    }
    let ls = lightness_plane(shadow)?;
    let lf = lightness_plane(shadow_free)?;
    matte_from_lightness(&ls, &lf, shadow.height(), shadow.width(), epsilon)
}

/// Matte from two L* planes (any common scale; the ratio is scale-free up
/// to ε).
pub fn matte_from_lightness(l_shadow: &[f64], l_free: &[f64], h: usize, w: usize, epsilon: f64) -> Result<ShadowMatte> {
    if l_shadow.len() != h * w || l_free.len() != h * w {
        return Err(Error::Shape(format!(
            "lightness planes of {} and {} values for a {h}×{w} matte",
            l_shadow.len(),
            l_free.len()
        )));
    }
    let data = l_shadow
        .iter()
        .zip(l_free)
        .map(|(&s, &f)| matte_value(s, f, epsilon))
        .collect();
    ShadowMatte::new(Tensor::new(data, &[1, h, w])?, epsilon)
}

/// 1 where `matte ≥ threshold`, else 0. `threshold` must lie in (0, 1).
pub fn binarize_matte(matte: &ShadowMatte, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("binarization threshold must lie in (0, 1), got {threshold}")));
    }
    let data = matte
        .data()
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
    Ok(BinaryMask {
        values: Tensor::new(data, matte.values().shape())?,
        threshold,
    })
}

/// Outcome of [`build_matte_dataset`].
#[derive(Debug, Clone, Default)]
pub struct MatteBuildReport {
    pub written: usize,
    pub outputs: Vec<PathBuf>,
    /// Files without a partner on the other side of the pair.
    pub unmatched: Vec<String>,
    /// `(stem, reason)` for pairs that could not be processed.
    pub failed: Vec<(String, String)>,
}

/// Computes the matte of every matched pair under `pairs_root` and writes it
/// as `<out_root>/<stem>.png` (8-bit gray, `round(matte·255)`). Problem
/// pairs are reported and skipped.
pub fn build_matte_dataset(pairs_root: impl AsRef<Path>, out_root: impl AsRef<Path>) -> Result<MatteBuildReport> {
    let layout = scan_pairs(pairs_root)?;
    let out_root = out_root.as_ref();
    let results: Vec<(String, Result<PathBuf>)> = layout
        .pairs
        .par_iter()
        .map(|pair| {
            let run = || -> Result<PathBuf> {
                let shadow = load_image(&pair.shadow)?;
                let free = load_image(&pair.shadow_free)?;
                let matte = compute_matte(&shadow, &free, DEFAULT_EPSILON)?;
                let path = out_root.join(format!("{}.png", pair.stem));
                save_image(&matte.to_image()?, &path)?;
                Ok(path)
            };
            (pair.stem.clone(), run())
        })
        .collect();
    let mut report = MatteBuildReport {
        unmatched: layout.unmatched,
        ..Default::default()
    };
    for (stem, r) in results {
        match r {
            Ok(path) => {
                report.written += 1;
                report.outputs.push(path);
            }
            Err(e) => report.failed.push((stem, e.to_string())),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{synth_pair_detailed, write_synthetic_dataset, SHADOW_DIR};
    use proptest::prelude::*;

    #[test]
    fn identical_images_give_near_zero() {
        let pair = synth_pair_detailed(3, 16, 16).unwrap();
        let m = compute_matte(&pair.shadow_free, &pair.shadow_free, DEFAULT_EPSILON).unwrap();
        assert!(m.data().iter().all(|&v| v <= 1e-6));
        let white = Image::filled(ColorSpace::Srgb, 2, 2, &[1.0, 1.0, 1.0]).unwrap();
        let mw = compute_matte(&white, &white, DEFAULT_EPSILON).unwrap();
        assert!(mw.data().iter().all(|&v| v < 1e-8));
    }

    #[test]
    fn direct_substitution() {
        assert!((matte_value(50.0, 100.0, DEFAULT_EPSILON) - 0.5).abs() < 1e-8);
        assert!((matte_value(0.0, 70.0, DEFAULT_EPSILON) - 1.0).abs() < 1e-12);
        // brighter shadow pixel clamps to zero
        assert_eq!(matte_value(80.0, 60.0, DEFAULT_EPSILON), 0.0);
    }

    #[test]
    fn lightness_scale_does_not_matter() {
        let ls = [20.0, 45.0, 90.0];
        let lf = [40.0, 60.0, 95.0];
        let a = matte_from_lightness(&ls, &lf, 1, 3, 1e-12).unwrap();
        let b = matte_from_lightness(&ls.map(|v| v / 100.0), &lf.map(|v| v / 100.0), 1, 3, 1e-14).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = Image::filled(ColorSpace::Srgb, 2, 2, &[0.5; 3]).unwrap();
        let b = Image::filled(ColorSpace::Srgb, 2, 3, &[0.5; 3]).unwrap();
        assert!(matches!(compute_matte(&a, &b, DEFAULT_EPSILON), Err(Error::Shape(_))));
    }

    #[test]
    fn binarize_cases() {
        let zero = ShadowMatte::from_plane(2, 2, vec![0.0; 4]).unwrap();
        assert!(binarize_matte(&zero, 0.1).unwrap().values().data().iter().all(|&v| v == 0.0));
        let half = ShadowMatte::from_plane(1, 1, vec![0.5]).unwrap();
        assert_eq!(binarize_matte(&half, 0.1).unwrap().values().data(), &[1.0]);
        let m = ShadowMatte::from_plane(1, 4, vec![0.05, 0.1, 0.3, 0.9]).unwrap();
        let once = binarize_matte(&m, 0.1).unwrap();
        let twice = binarize_matte(&once.as_matte(), 0.1).unwrap();
        assert_eq!(once.values().data(), twice.values().data());
        assert!(binarize_matte(&m, 0.0).is_err());
        assert!(binarize_matte(&m, 1.0).is_err());
    }

    #[test]
    fn build_dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let empty = build_matte_dataset(dir.path(), &out).unwrap();
        assert_eq!(empty.written, 0);

        write_synthetic_dataset(dir.path(), 2, 16, 9).unwrap();
        // a pair with mismatched sizes
        save_image(
            &Image::filled(ColorSpace::Srgb, 16, 20, &[0.5; 3]).unwrap(),
            dir.path().join("shadow_free/bad.png"),
        )
        .unwrap();
        save_image(
            &Image::filled(ColorSpace::Srgb, 16, 16, &[0.4; 3]).unwrap(),
            dir.path().join(SHADOW_DIR).join("bad.png"),
        )
        .unwrap();
        let report = build_matte_dataset(dir.path(), &out).unwrap();
        assert_eq!(report.written, 2);
        assert_eq!(report.failed.len(), 1);
        assert_eq!(report.failed[0].0, "bad");

        let shadow = load_image(dir.path().join("shadow/synth_0000.png")).unwrap();
        let free = load_image(dir.path().join("shadow_free/synth_0000.png")).unwrap();
        let want = compute_matte(&shadow, &free, DEFAULT_EPSILON).unwrap();
        let got = ShadowMatte::from_image(&load_image(out.join("synth_0000.png")).unwrap()).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn darker_shadow_never_lowers_matte(ls in 0.0f64..100.0, lf in 0.0f64..100.0, dark in 0.0f64..1.0) {
            let before = matte_value(ls, lf, DEFAULT_EPSILON);
            let after = matte_value(ls * dark, lf, DEFAULT_EPSILON);
            prop_assert!(after >= before);
            prop_assert!((0.0..=1.0).contains(&after));
        }

        #[test]
        fn self_matte_is_tiny(l in 1.0f64..100.0) {
            let m = matte_value(l, l, DEFAULT_EPSILON);
            prop_assert!(m <= DEFAULT_EPSILON / (l + DEFAULT_EPSILON) + 4.0 * f64::EPSILON);
            prop_assert!(m <= 1e-6);
        }
    }
}
