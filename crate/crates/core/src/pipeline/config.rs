use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::matte::MatteGenConfig;
use crate::model::ModelConfig;

/// Everything a training, sweep or ablation run needs. Read from UTF-8
/// JSON; missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Paired dataset (`shadow/`, `shadow_free/`, optional `matte/`). When
    /// absent, `synthetic_pairs` pairs are generated from `seed`.
    pub dataset_root: Option<PathBuf>,
    pub synthetic_pairs: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Removal-network epochs.
    pub epochs: usize,
    /// Removal-network batch size.
    pub batch_size: usize,
    /// Removal-network Adam learning rate.
    pub lr: f64,
    /// Optional cap on removal optimizer steps.
    pub max_steps: Option<u64>,
    /// Optional cap on matte-generator optimizer steps.
    pub matte_max_steps: Option<u64>,
    /// Side length images are resized to.
    pub image_size: usize,
    pub model: ModelConfig,
    pub matte: MatteGenConfig,
    pub loss: LossWeights,
    pub lambda_sweep: Vec<f64>,
    /// Binary-mask guidance threshold.
    pub threshold: f64,
    /// Checkpoint every this many epochs (the final state is always saved).
    pub checkpoint_every: usize,
    /// Number of periodic checkpoints kept on disk.
    pub keep_checkpoints: usize,
    pub resume: Option<PathBuf>,
    pub matte_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: None,
            synthetic_pairs: 8,
            output_dir: PathBuf::from("runs"),
            seed: 0,
            epochs: 100,
            batch_size: 4,
            lr: 4e-4,
            max_steps: None,
            matte_max_steps: None,
            image_size: 64,
            model: ModelConfig::default(),
            matte: MatteGenConfig::default(),
            loss: LossWeights::default(),
            lambda_sweep: vec![0.01, 0.05, 0.1, 0.5],
            threshold: 0.1,
            checkpoint_every: 1,
            keep_checkpoints: 2,
            resume: None,
            matte_checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with `model.image_size` tied to `image_size`.
    pub fn normalized(&self) -> RunConfig {
        let mut c = self.clone();
        c.model.image_size = c.image_size;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.normalized();
        c.model.validate()?;
        c.matte.validate()?;
        c.loss.validate()?;
        let m = 1usize << c.matte.depth;
        if c.image_size < 16 || c.image_size % m != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be at least 16 and a multiple of {m} (2^matte.depth)",
                c.image_size
            )));
        }
        if c.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(c.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", c.lr)));
        }
        if !(c.threshold > 0.0 && c.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", c.threshold)));
        }
        if c.checkpoint_every == 0 || c.keep_checkpoints == 0 {
            return Err(Error::Config("checkpoint_every and keep_checkpoints must be at least 1".into()));
        }
        if c.dataset_root.is_none() && c.synthetic_pairs == 0 {
            return Err(Error::Config("no dataset_root and synthetic_pairs is 0".into()));
        }
        for (what, p) in [
            ("dataset_root", &c.dataset_root),
            ("resume", &c.resume),
            ("matte_checkpoint", &c.matte_checkpoint),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{what} {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lambda_sweep, vec![0.01, 0.05, 0.1, 0.5]);
        let back: RunConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 5, "model": {"depth": 2}}"#).unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.model.depth, 2);
        assert_eq!(partial.model.embed_dim, 64);
    }

    #[test]
    fn missing_paths_rejected() {
        let c = RunConfig {
            dataset_root: Some(PathBuf::from("/definitely/not/here")),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("dataset_root")));
        let c = RunConfig { image_size: 40, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
