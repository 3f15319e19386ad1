//! Paired dataset layout: `<root>/shadow/*.png`, `<root>/shadow_free/*.png`
//! matched by filename stem, with optional `<root>/matte/*.png`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::io::save_image;
use super::synth::synth_pair_detailed;
use crate::error::{Error, Result};

pub const SHADOW_DIR: &str = "shadow";
pub const SHADOW_FREE_DIR: &str = "shadow_free";
pub const MATTE_DIR: &str = "matte";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPair {
    pub stem: String,
    pub shadow: PathBuf,
    pub shadow_free: PathBuf,
    pub matte: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct PairedLayout {
    /// Sorted by stem.
    pub pairs: Vec<DatasetPair>,
    /// Stems present on only one side, prefixed with the side they came from.
    pub unmatched: Vec<String>,
}

/// Image files (`.png`, `.ppm`) in `dir` keyed by stem. A missing
/// directory is empty.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    list_with_extensions(dir, &["png", "ppm"])
}

pub(crate) fn list_with_extensions(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

pub fn scan_pairs(root: impl AsRef<Path>) -> Result<PairedLayout> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
    }
    let shadow = list_images(&root.join(SHADOW_DIR))?;
    let free = list_images(&root.join(SHADOW_FREE_DIR))?;
    let mattes = list_images(&root.join(MATTE_DIR))?;
    let mut layout = PairedLayout::default();
    for (stem, s) in &shadow {
        match free.get(stem) {
            Some(f) => layout.pairs.push(DatasetPair {
                stem: stem.clone(),
                shadow: s.clone(),
                shadow_free: f.clone(),
                matte: mattes.get(stem).cloned(),
            }),
            None => layout.unmatched.push(format!("{SHADOW_DIR}/{stem}")),
        }
    }
    for stem in free.keys().filter(|s| !shadow.contains_key(*s)) {
        layout.unmatched.push(format!("{SHADOW_FREE_DIR}/{stem}"));
    }
    Ok(layout)
}

/// Writes `count` synthetic pairs named `synth_0000.png`, … into the paired
/// layout under `root`. Pair `i` uses seed `seed + i`.
pub fn write_synthetic_dataset(root: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Vec<String>> {
    let root = root.as_ref();
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let pair = synth_pair_detailed(seed.wrapping_add(i as u64), size, size)?;
        let stem = format!("synth_{i:04}");
        save_image(&pair.shadow, root.join(SHADOW_DIR).join(format!("{stem}.png")))?;
        save_image(&pair.shadow_free, root.join(SHADOW_FREE_DIR).join(format!("{stem}.png")))?;
        stems.push(stem);
    }
    Ok(stems)
}
