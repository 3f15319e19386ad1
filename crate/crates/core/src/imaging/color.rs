//! sRGB ⇄ CIE L*a*b* (D65) conversion.

use super::image::{ColorSpace, Image};
use crate::error::{Error, Result};

/// Linear sRGB → XYZ, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

/// Reference white: the XYZ image of linear (1, 1, 1), so sRGB white maps
/// to a = b = 0 exactly.
fn white() -> [f64; 3] {
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|row| row[0] * v[0] + row[1] * v[1] + row[2] * v[2])
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// One sRGB pixel (channels clamped to [0, 1]) to (L, a, b).
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)));
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let wp = white();
    let (fx, fy, fz) = (lab_f(xyz[0] / wp[0]), lab_f(xyz[1] / wp[1]), lab_f(xyz[2] / wp[2]));
    let l = (116.0 * fy - 16.0).clamp(0.0, 100.0);
    [l, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse of [`srgb_pixel_to_lab`]; out-of-gamut results are clamped.
pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let wp = white();
    let xyz = [wp[0] * lab_f_inv(fx), wp[1] * lab_f_inv(fy), wp[2] * lab_f_inv(fz)];
    let lin = mat_vec(&invert3(&RGB_TO_XYZ), xyz);
    lin.map(|c| linear_to_srgb(c.max(0.0)).clamp(0.0, 1.0))
}

/// Lightness L* of one sRGB pixel.
pub fn srgb_lightness(rgb: [f64; 3]) -> f64 {
    srgb_pixel_to_lab(rgb)[0]
}

fn map_pixels(img: &Image, to: ColorSpace, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Image> {
    let (h, w) = img.dims();
    let n = h * w;
    let mut out = vec![0.0; 3 * n];
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    for i in 0..n {
        let v = f([r[i], g[i], b[i]]);
        out[i] = v[0];
        out[n + i] = v[1];
        out[2 * n + i] = v[2];
    }
    Image::from_planes(to, h, w, out)
}

pub fn rgb_to_lab(img: &Image) -> Result<Image> {
    if img.space() != ColorSpace::Srgb {
        return Err(Error::Format(format!("rgb_to_lab expects sRGB input, got {:?}", img.space())));
    }
    map_pixels(img, ColorSpace::Lab, srgb_pixel_to_lab)
}

pub fn lab_to_rgb(img: &Image) -> Result<Image> {
    if img.space() != ColorSpace::Lab {
        return Err(Error::Format(format!("lab_to_rgb expects LAB input, got {:?}", img.space())));
    }
    map_pixels(img, ColorSpace::Srgb, lab_pixel_to_srgb)
}

/// L* plane (values in [0, 100]) of an sRGB or gray image. Gray is treated
/// as an sRGB image with equal channels.
pub fn lightness_plane(img: &Image) -> Result<Vec<f64>> {
    match img.space() {
        ColorSpace::Srgb => {
            let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
            Ok((0..r.len()).map(|i| srgb_lightness([r[i], g[i], b[i]])).collect())
        }
        ColorSpace::Gray => Ok(img.plane(0).iter().map(|&v| srgb_lightness([v, v, v])).collect()),
        ColorSpace::Lab => Ok(img.plane(0).to_vec()),
    }
}

/// BT.601 luma of an sRGB image as a gray image; gray input passes through.
pub fn to_gray(img: &Image) -> Result<Image> {
    match img.space() {
        ColorSpace::Gray => Ok(img.clone()),
        ColorSpace::Srgb => {
            let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
            let data = (0..r.len())
                .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
                .collect();
            Image::from_planes(ColorSpace::Gray, img.height(), img.width(), data)
        }
        ColorSpace::Lab => to_gray(&lab_to_rgb(img)?),
    }
}

/// Expands a gray image to three equal sRGB channels.
pub fn gray_to_rgb(img: &Image) -> Result<Image> {
    if img.space() != ColorSpace::Gray {
        return Err(Error::Format(format!("gray_to_rgb expects gray input, got {:?}", img.space())));
    }
    let p = img.plane(0);
    let data = p.iter().chain(p).chain(p).copied().collect();
    Image::from_planes(ColorSpace::Srgb, img.height(), img.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn white_and_black_anchors() {
        let w = srgb_pixel_to_lab([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-9, "{w:?}");
        assert!(w[1].abs() < 0.5 && w[2].abs() < 0.5);
        assert!(w[1].abs() < 1e-9 && w[2].abs() < 1e-9);
        let b = srgb_pixel_to_lab([0.0, 0.0, 0.0]);
        assert_eq!(b[0], 0.0);
    }

    #[test]
    fn round_trip_ten_thousand_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let back = lab_pixel_to_srgb(srgb_pixel_to_lab(rgb));
            for c in 0..3 {
                worst = worst.max((back[c] - rgb[c]).abs());
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn image_conversion_keeps_range() {
        let img = Image::from_planes(
            ColorSpace::Srgb,
            2,
            2,
            vec![0.0, 0.2, 0.5, 1.0, 1.0, 0.3, 0.0, 0.9, 0.1, 0.1, 0.8, 1.0],
        )
        .unwrap();
        let lab = rgb_to_lab(&img).unwrap();
        assert!(lab.in_range());
        let back = lab_to_rgb(&lab).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(rgb_to_lab(&lab).is_err());
    }
}
