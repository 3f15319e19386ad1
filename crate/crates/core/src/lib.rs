//! Document shadow removal with continuous shadow-matte guidance, a vision
//! transformer with high-frequency amplification, and frequency-aware losses.
//!
//! Everything runs on the small reverse-mode tensor engine in [`numerics`].

pub mod error;
pub mod imaging;
pub mod losses;
pub mod matte;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod pipeline;

pub use error::{Error, Result};
