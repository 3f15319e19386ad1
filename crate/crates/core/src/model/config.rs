use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What, if anything, is concatenated to the RGB input as a fourth channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    None,
    /// Thresholded matte in {0, 1}.
    Binary,
    /// Continuous matte in [0, 1].
    Matte,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 3] = [GuidanceMode::None, GuidanceMode::Binary, GuidanceMode::Matte];

    pub fn is_guided(self) -> bool {
        self != GuidanceMode::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GuidanceMode::None => "none",
            GuidanceMode::Binary => "binary",
            GuidanceMode::Matte => "matte",
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceMode::None),
            "binary" => Ok(GuidanceMode::Binary),
            "matte" => Ok(GuidanceMode::Matte),
            other => Err(Error::Config(format!(
                "unknown guidance mode {other:?} (expected none, binary or matte)"
            ))),
        }
    }
}

/// Restoration network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub guidance_mode: GuidanceMode,
    pub hfam_enabled: bool,
    pub hfam_kernel: usize,
    pub hfam_sigma: f64,
    /// Train the Gaussian low-pass kernel too (stored either way).
    pub hfam_kernel_trainable: bool,
    /// Side length of the square input; fixes the positional-embedding size.
    pub image_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            num_heads: 4,
            mlp_ratio: 4,
            guidance_mode: GuidanceMode::Matte,
            hfam_enabled: true,
            hfam_kernel: 5,
            hfam_sigma: 1.0,
            hfam_kernel_trainable: false,
            image_size: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.embed_dim == 0 || self.num_heads == 0 || self.mlp_ratio == 0 {
            return bad("patch_size, embed_dim, num_heads and mlp_ratio must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.hfam_enabled && self.embed_dim < 2 {
            return bad("HFAM needs embed_dim >= 2".into());
        }
        if self.hfam_kernel % 2 == 0 {
            return bad(format!("hfam_kernel must be odd, got {}", self.hfam_kernel));
        }
        if !(self.hfam_sigma > 0.0) {
            return bad(format!("hfam_sigma must be positive, got {}", self.hfam_sigma));
        }
        if self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} is not a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        if self.guidance_mode.is_guided() {
            4
        } else {
            3
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        let g = self.image_size / self.patch_size;
        (g, g)
    }

    pub fn num_tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }

    pub fn hfam_hidden(&self) -> usize {
        (self.embed_dim / 2).max(1)
    }

    /// Trainable scalars in the HFAM (zero when disabled).
    pub fn hfam_param_count(&self) -> usize {
        if !self.hfam_enabled {
            return 0;
        }
        let (d, h) = (self.embed_dim, self.hfam_hidden());
        let kernel = if self.hfam_kernel_trainable {
            d * self.hfam_kernel * self.hfam_kernel
        } else {
            0
        };
        kernel + d * h + h + h * 2 * d + 2 * d
    }

    /// Trainable scalars of the whole network.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let p2 = self.patch_size * self.patch_size;
        let m = self.mlp_hidden();
        let patch = self.input_channels() * p2 * d + d;
        let pos = self.num_tokens() * d;
        let block = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * m + m) + (m * d + d);
        let head = d * 3 * p2 + 3 * p2;
        patch + pos + self.hfam_param_count() + self.depth * block + head
    }
}
