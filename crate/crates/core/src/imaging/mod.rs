//! Images, color conversion, resizing, file I/O and synthetic pairs.

mod color;
mod dataset;
mod image;
mod io;
mod resize;
mod synth;

pub use color::{
    gray_to_rgb, lab_pixel_to_srgb, lab_to_rgb, lightness_plane, linear_to_srgb, rgb_to_lab, srgb_lightness,
    srgb_pixel_to_lab, srgb_to_linear, to_gray,
};
pub use dataset::{
    list_images, scan_pairs, write_synthetic_dataset, DatasetPair, PairedLayout, MATTE_DIR, SHADOW_DIR,
    SHADOW_FREE_DIR,
};
pub(crate) use dataset::list_with_extensions;
pub use image::{ColorSpace, Image};
pub use io::{decode_image, load_image, save_image};
pub use resize::resize_bilinear;
pub use synth::{apply_attenuation, synth_pair_detailed, synth_shadow_pair, SyntheticPair};
