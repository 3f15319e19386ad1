//! PNG and binary PPM (P6) reading and writing, 8 bits per channel.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ImageFormat};

use super::color::gray_to_rgb;
use super::image::{ColorSpace, Image};
use crate::error::{Error, Result};

fn header_hex(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") => Ok(ImageFormat::Pnm),
        other => Err(Error::Format(format!(
            "unsupported image extension {:?} for {} (expected .png or .ppm)",
            other.unwrap_or(""),
            path.display()
        ))),
    }
}

/// Decodes an 8-bit PNG (gray, gray+alpha, RGB, RGBA) or a P6 PPM. Alpha is
/// dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let format = if bytes.starts_with(b"\x89PNG") {
        ImageFormat::Png
    } else if bytes.starts_with(b"P6") {
        ImageFormat::Pnm
    } else {
        return Err(Error::Format(format!(
            "unrecognized image header [{}]; expected PNG or binary PPM (P6)",
            header_hex(bytes)
        )));
    };
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| {
        Error::Format(format!("cannot decode image with header [{}]: {e}", header_hex(bytes)))
    })?;
    from_dynamic(decoded, bytes)
}

fn from_dynamic(img: DynamicImage, header: &[u8]) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let to_unit = |v: u8| v as f64 / 255.0;
    match img.color() {
        ColorType::L8 | ColorType::La8 => {
            let gray = img.to_luma8();
            Image::from_planes(ColorSpace::Gray, h, w, gray.as_raw().iter().map(|&v| to_unit(v)).collect())
        }
        ColorType::Rgb8 | ColorType::Rgba8 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            let n = h * w;
            let mut data = vec![0.0; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    data[c * n + i] = to_unit(raw[3 * i + c]);
                }
            }
            Image::from_planes(ColorSpace::Srgb, h, w, data)
        }
        other => Err(Error::Format(format!(
            "unsupported pixel format {other:?} ({} bits per channel) in image with header [{}]; only 8-bit is supported",
            other.bits_per_pixel() / other.channel_count() as u16,
            header_hex(header)
        ))),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes to PNG or PPM by extension, clamping to [0, 1] and rounding to
/// 8 bits. LAB images must be converted first.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let img = match (img.space(), format) {
        (ColorSpace::Lab, _) => {
            return Err(Error::Format("convert LAB images to sRGB before saving".into()));
        }
        (ColorSpace::Gray, ImageFormat::Pnm) => gray_to_rgb(img)?,
        _ => img.clone(),
    };
    let (h, w) = img.dims();
    let n = h * w;
    let dynamic = match img.space() {
        ColorSpace::Gray => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w as u32, h as u32, img.plane(0).iter().map(|&v| to_u8(v)).collect())
                .expect("buffer size matches"),
        ),
        _ => {
            let mut raw = vec![0u8; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    raw[3 * i + c] = to_u8(img.data()[c * n + i]);
                }
            }
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"))
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let write_err = |e: image::ImageError| Error::Format(format!("cannot write {}: {e}", path.display()));
    if format == ImageFormat::Pnm {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary));
        dynamic.write_with_encoder(encoder).map_err(write_err)
    } else {
        dynamic.save_with_format(path, format).map_err(write_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rgb(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen::<f64>()).collect();
        Image::from_planes(ColorSpace::Srgb, h, w, data).unwrap()
    }

    #[test]
    fn png_and_ppm_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_rgb(4, 4, 3);
        let want = img.quantized().unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(back.space(), ColorSpace::Srgb);
            for (a, b) in back.data().iter().zip(want.data()) {
                assert_eq!((a * 255.0).round(), (b * 255.0).round());
            }
        }
    }

    #[test]
    fn gray_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_planes(ColorSpace::Gray, 2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let p = dir.path().join("g.png");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.space(), ColorSpace::Gray);
        assert_eq!(back.data(), img.quantized().unwrap().data());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_image(&random_rgb(8, 8, 1), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Format(_))));
    }

    #[test]
    fn sixteen_bit_png_names_bit_depth() {
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(2, 2, vec![0, 1000, 40000, 65535]).unwrap();
        let mut buf = std::io::Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(img).write_to(&mut buf, ImageFormat::Png).unwrap();
        let err = decode_image(buf.get_ref()).unwrap_err().to_string();
        assert!(err.contains("16 bits"), "{err}");
        assert!(err.contains("89 50 4e 47"), "{err}");
    }

    #[test]
    fn unknown_header_reported() {
        let err = decode_image(b"GIF89a....").unwrap_err().to_string();
        assert!(err.contains("47 49 46 38"), "{err}");
    }
}
