//! The guided restoration transformer.

mod config;
mod hfam;
mod network;

pub use config::{GuidanceMode, ModelConfig};
pub use hfam::{gaussian_kernel, Hfam, HfamTrace};
pub use network::{
    assemble_input, guidance_from_matte, guidance_map, patchify, unpatchify, ForwardTrace, MatteViT,
};
