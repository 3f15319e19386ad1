use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    /// Gamma-encoded sRGB, each channel in [0, 1].
    Srgb,
    /// CIE L*a*b*, L in [0, 100], a and b in [-128, 127].
    Lab,
    /// Single channel in [0, 1].
    Gray,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Srgb | ColorSpace::Lab => 3,
            ColorSpace::Gray => 1,
        }
    }

    /// Inclusive value bounds for channel `c`.
    pub fn range(self, c: usize) -> (f64, f64) {
        match (self, c) {
            (ColorSpace::Lab, 0) => (0.0, 100.0),
            (ColorSpace::Lab, _) => (-128.0, 127.0),
            _ => (0.0, 1.0),
        }
    }
}

/// Planar `[C, H, W]` raster tagged with its color space.
#[derive(Debug, Clone)]
pub struct Image {
    space: ColorSpace,
    pixels: Tensor,
}

impl Image {
    /// Wraps a `[C, H, W]` tensor, clamping every channel into the space's
    /// declared range.
    pub fn new(space: ColorSpace, pixels: Tensor) -> Result<Image> {
        let channels = match *pixels.shape() {
            [c, _, _] => c,
            _ => {
                return Err(Error::Shape(format!(
                    "image pixels must be [C, H, W], got {:?}",
                    pixels.shape()
                )))
            }
        };
        if channels != space.channels() {
            return Err(Error::Shape(format!(
                "{space:?} needs {} channels, got {channels}",
                space.channels()
            )));
        }
        let plane = pixels.shape()[1] * pixels.shape()[2];
        let needs_clamp = pixels.data().chunks(plane).enumerate().any(|(c, p)| {
            let (lo, hi) = space.range(c);
            p.iter().any(|v| !(lo..=hi).contains(v))
        });
        let pixels = if needs_clamp {
            let data = pixels
                .data()
                .chunks(plane)
                .enumerate()
                .flat_map(|(c, p)| {
                    let (lo, hi) = space.range(c);
                    p.iter().map(move |v| if v.is_nan() { lo } else { v.clamp(lo, hi) })
                })
                .collect();
            Tensor::new(data, pixels.shape())?
        } else {
            pixels.detach()
        };
        Ok(Image { space, pixels })
    }

    pub fn from_planes(space: ColorSpace, height: usize, width: usize, data: Vec<f64>) -> Result<Image> {
        Image::new(space, Tensor::new(data, &[space.channels(), height, width])?)
    }

    pub fn filled(space: ColorSpace, height: usize, width: usize, value: &[f64]) -> Result<Image> {
        if value.len() != space.channels() {
            return Err(Error::Shape(format!(
                "fill value has {} channels, {space:?} needs {}",
                value.len(),
                space.channels()
            )));
        }
        let data = value
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(height * width))
            .collect();
        Image::from_planes(space, height, width, data)
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn data(&self) -> &[f64] {
        self.pixels.data()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height() * self.width();
        &self.data()[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "image dimensions differ: {}×{} vs {}×{}",
                self.height(),
                self.width(),
                other.height(),
                other.width()
            )));
        }
        Ok(())
    }

    /// True when every channel lies in the declared range.
    pub fn in_range(&self) -> bool {
        (0..self.channels()).all(|c| {
            let (lo, hi) = self.space.range(c);
            self.plane(c).iter().all(|v| (lo..=hi).contains(v))
        })
    }

    /// Rounds each channel to the nearest of 256 levels (sRGB/gray only).
    pub fn quantized(&self) -> Result<Image> {
        if self.space == ColorSpace::Lab {
            return Err(Error::Format("8-bit quantization applies to sRGB or gray images".into()));
        }
        let data = self.data().iter().map(|v| (v * 255.0).round() / 255.0).collect();
        Image::from_planes(self.space, self.height(), self.width(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_on_construction() {
        let img = Image::from_planes(ColorSpace::Gray, 1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
        assert!(img.in_range());
    }

    #[test]
    fn channel_count_must_match_space() {
        let t = Tensor::zeros(&[1, 2, 2]);
        assert!(Image::new(ColorSpace::Lab, t.clone()).is_err());
        assert!(Image::new(ColorSpace::Gray, t).is_ok());
    }
}
