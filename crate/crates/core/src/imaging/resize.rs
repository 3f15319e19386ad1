use super::image::Image;
use crate::error::{Error, Result};

/// Source sample positions and weights for one output axis, half-pixel
/// centred (`align_corners = false`), clamped at the borders.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resampling to `out_h × out_w`.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("resize target must be at least 1×1, got {out_h}×{out_w}")));
    }
    let (h, w) = img.dims();
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let mut out = Vec::with_capacity(img.channels() * out_h * out_w);
    for c in 0..img.channels() {
        let p = img.plane(c);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Image::from_planes(img.space(), out_h, out_w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ColorSpace;

    #[test]
    fn same_size_is_identity() {
        let img = Image::from_planes(ColorSpace::Gray, 3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let r = resize_bilinear(&img, 3, 2).unwrap();
        assert_eq!(r.data(), img.data());
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(ColorSpace::Srgb, 5, 7, &[0.3, 0.6, 0.9]).unwrap();
        let r = resize_bilinear(&img, 11, 3).unwrap();
        for c in 0..3 {
            for v in r.plane(c) {
                assert!((v - [0.3, 0.6, 0.9][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkerboard_upsample_matches_hand_grid() {
        // Source [[0,1],[1,0]]; sample offsets along each axis are
        // {0, 0.25, 0.75, 1}, value = fx + fy - 2·fx·fy.
        let img = Image::from_planes(ColorSpace::Gray, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&img, 4, 4).unwrap();
        let want = [
            0.0, 0.25, 0.75, 1.0, //
            0.25, 0.375, 0.625, 0.75, //
            0.75, 0.625, 0.375, 0.25, //
            1.0, 0.75, 0.25, 0.0,
        ];
        for (a, b) in r.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{:?}", r.data());
        }
    }

    #[test]
    fn zero_target_rejected() {
        let img = Image::filled(ColorSpace::Gray, 2, 2, &[0.5]).unwrap();
        assert!(resize_bilinear(&img, 0, 2).is_err());
    }
}
