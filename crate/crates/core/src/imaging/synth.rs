//! Procedural shadow / shadow-free document pairs for tests and desk-scale
//! training runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::color::{lab_pixel_to_srgb, srgb_pixel_to_lab};
use super::image::{ColorSpace, Image};
use crate::error::{Error, Result};

/// A generated pair together with the luminance attenuation that produced
/// the shadow.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub shadow: Image,
    pub shadow_free: Image,
    /// Row-major `h × w` multiplicative factor on L*, in (0, 1].
    pub attenuation: Vec<f64>,
}

impl SyntheticPair {
    /// Matte implied by the attenuation: `1 − a`.
    pub fn reference_matte(&self) -> Vec<f64> {
        self.attenuation.iter().map(|a| 1.0 - a).collect()
    }
}

/// Deterministic pair for `seed`. Both sides must be at least 16 pixels.
pub fn synth_shadow_pair(seed: u64, h: usize, w: usize) -> Result<(Image, Image)> {
    let pair = synth_pair_detailed(seed, h, w)?;
    Ok((pair.shadow, pair.shadow_free))
}

pub fn synth_pair_detailed(seed: u64, h: usize, w: usize) -> Result<SyntheticPair> {
    if h < 16 || w < 16 {
        return Err(Error::Shape(format!("synthetic pairs need at least 16×16, got {h}×{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow_free = synth_document(&mut rng, h, w)?;
    let attenuation = synth_attenuation(&mut rng, h, w);
    let shadow = apply_attenuation(&shadow_free, &attenuation)?;
    Ok(SyntheticPair {
        shadow,
        shadow_free,
        attenuation,
    })
}

/// Light paper with rows of dark glyph-like strokes.
fn synth_document(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<Image> {
    let base = rng.gen_range(0.80..0.92);
    let tint: [f64; 3] = [rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.03..0.01)];
    let paper = tint.map(|t| base + t);
    let n = h * w;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        let grain = rng.gen_range(-0.01..0.01);
        for c in 0..3 {
            data[c * n + i] = paper[c] + grain;
        }
    }

    let pitch = (h / 8).max(6);
    let glyph_h = (pitch * 3 / 5).max(3);
    let margin = (w / 16).max(2);
    let mut top = margin;
    while top + glyph_h + 1 < h - margin / 2 {
        let ink = if rng.gen_bool(0.2) {
            [0.10, 0.14, rng.gen_range(0.35..0.5)]
        } else {
            let v = rng.gen_range(0.06..0.22);
            [v, v, v]
        };
        let mut x = margin + rng.gen_range(0..3);
        let line_end = w - margin - rng.gen_range(0..w / 4);
        while x + 2 < line_end {
            let gw = rng.gen_range(2..=4);
            if x + gw >= line_end {
                break;
            }
            draw_glyph(rng, &mut data, (h, w), (top, x), (glyph_h, gw), ink);
            x += gw + 1 + if rng.gen_bool(0.2) { rng.gen_range(2..4) } else { 0 };
        }
        top += pitch;
    }
    Image::from_planes(ColorSpace::Srgb, h, w, data)
}

fn draw_glyph(
    rng: &mut ChaCha8Rng,
    data: &mut [f64],
    (h, w): (usize, usize),
    (top, left): (usize, usize),
    (gh, gw): (usize, usize),
    ink: [f64; 3],
) {
    let n = h * w;
    let mut put = |y: usize, x: usize| {
        if y < h && x < w {
            for c in 0..3 {
                data[c * n + y * w + x] = ink[c];
            }
        }
    };
    // strokes: left, right, top, middle, bottom; at least two
    let mut strokes = [false; 5];
    while strokes.iter().filter(|&&s| s).count() < 2 {
        for s in strokes.iter_mut() {
            *s |= rng.gen_bool(0.45);
        }
    }
    for y in top..top + gh {
        if strokes[0] {
            put(y, left);
        }
        if strokes[1] {
            put(y, left + gw - 1);
        }
    }
    for (flag, y) in [(strokes[2], top), (strokes[3], top + gh / 2), (strokes[4], top + gh - 1)] {
        if flag {
            for x in left..left + gw {
                put(y, x);
            }
        }
    }
}

/// Smooth field in (0, 1]: a soft-edged shadow (half-plane or blob) times a
/// gentle illumination ramp.
fn synth_attenuation(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let depth = rng.gen_range(0.35..0.65);
    let soft = rng.gen_range(0.06..0.18);
    let tilt = rng.gen_range(0.0..0.1);
    let ramp_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let blob = rng.gen_bool(0.5);
    let (cx, cy) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
    let (rx, ry) = (rng.gen_range(0.25..0.5), rng.gen_range(0.25..0.5));
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let offset = rng.gen_range(-0.2..0.2);

    let mut field = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            // signed distance-like coordinate: positive inside the shadow
            let d = if blob {
                1.0 - (((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2)).sqrt()
            } else {
                (u - 0.5) * angle.cos() + (v - 0.5) * angle.sin() - offset
            };
            let s = 1.0 / (1.0 + (-d / soft).exp());
            let ramp = 0.5 + 0.5 * ((u - 0.5) * ramp_angle.cos() + (v - 0.5) * ramp_angle.sin());
            let a = (1.0 - depth * s) * (1.0 - tilt * ramp.clamp(0.0, 1.0));
            field.push(a.clamp(1e-3, 1.0));
        }
    }
    field
}

/// Scales L* of every pixel of an sRGB image by the matching factor,
/// leaving a* and b* unchanged. Factors equal to 1 copy the pixel exactly.
pub fn apply_attenuation(shadow_free: &Image, field: &[f64]) -> Result<Image> {
    if shadow_free.space() != ColorSpace::Srgb {
        return Err(Error::Format("attenuation applies to sRGB images".into()));
    }
    let (h, w) = shadow_free.dims();
    let n = h * w;
    if field.len() != n {
        return Err(Error::Shape(format!(
            "attenuation field has {} values, image has {n} pixels",
            field.len()
        )));
    }
    if let Some(a) = field.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::Domain(format!("attenuation must lie in (0, 1], got {a}")));
    }
    let src = shadow_free.data();
    let mut out = src.to_vec();
    for (i, &a) in field.iter().enumerate() {
        if a >= 1.0 {
            continue;
        }
        let mut lab = srgb_pixel_to_lab([src[i], src[n + i], src[2 * n + i]]);
        lab[0] *= a;
        let rgb = lab_pixel_to_srgb(lab);
        for c in 0..3 {
            out[c * n + i] = rgb[c];
        }
    }
    Image::from_planes(ColorSpace::Srgb, h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::color::lightness_plane;

    #[test]
    fn same_seed_is_bit_identical() {
        let (s1, f1) = synth_shadow_pair(42, 32, 48).unwrap();
        let (s2, f2) = synth_shadow_pair(42, 32, 48).unwrap();
        assert_eq!(s1.data(), s2.data());
        assert_eq!(f1.data(), f2.data());
        let (s3, _) = synth_shadow_pair(43, 32, 48).unwrap();
        assert_ne!(s1.data(), s3.data());
    }

    #[test]
    fn unit_field_leaves_image_unchanged() {
        let pair = synth_pair_detailed(1, 16, 16).unwrap();
        let same = apply_attenuation(&pair.shadow_free, &vec![1.0; 256]).unwrap();
        assert_eq!(same.data(), pair.shadow_free.data());
    }

    #[test]
    fn too_small_rejected() {
        assert!(synth_shadow_pair(0, 15, 64).is_err());
    }

    #[test]
    fn shadow_never_brighter_and_in_range() {
        for seed in 0..8 {
            let pair = synth_pair_detailed(seed, 32, 32).unwrap();
            assert!(pair.shadow.in_range() && pair.shadow_free.in_range());
            assert!(pair.attenuation.iter().all(|&a| a > 0.0 && a <= 1.0));
            let ls = lightness_plane(&pair.shadow).unwrap();
            let lf = lightness_plane(&pair.shadow_free).unwrap();
            for (s, f) in ls.iter().zip(&lf) {
                assert!(s <= &(f + 1e-9), "{s} > {f}");
            }
        }
    }
}
