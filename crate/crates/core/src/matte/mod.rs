//! Continuous shadow mattes: closed-form computation from paired images and
//! a learned U-Net generator.

mod compute;
mod generator;

pub use compute::{
    binarize_matte, build_matte_dataset, compute_matte, matte_from_lightness, matte_value, BinaryMask,
    MatteBuildReport, ShadowMatte, DEFAULT_EPSILON,
};
pub use generator::{matte_loss, MatteGenConfig, MatteGenerator, MatteLoss};
