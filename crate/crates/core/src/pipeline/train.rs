//! In-memory training loops for the matte generator and the removal network.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::RunConfig;
use super::optim::{OptimizerSettings, OptimizerState};
use crate::error::{Error, Result};
use crate::imaging::{load_image, resize_bilinear, scan_pairs, synth_pair_detailed, ColorSpace, Image};
use crate::losses::{edge_weight_map, total_loss, EdgeWeightMap, LossRecord, LossWeights};
use crate::matte::{compute_matte, matte_loss, MatteGenConfig, MatteGenerator, ShadowMatte, DEFAULT_EPSILON};
use crate::metrics::{ImageMetrics, MetricsReport};
use crate::model::{guidance_map, GuidanceMode, MatteViT, ModelConfig};
use crate::numerics::{no_grad, Tensor};

/// One training pair with its target matte.
#[derive(Debug, Clone)]
pub struct Sample {
    pub stem: String,
    pub shadow: Image,
    pub shadow_free: Image,
    pub matte: ShadowMatte,
}

/// `count` synthetic `size × size` pairs; pair `i` uses seed `seed + i`.
pub fn synthetic_samples(count: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let p = synth_pair_detailed(seed.wrapping_add(i as u64), size, size)?;
            let matte = compute_matte(&p.shadow, &p.shadow_free, DEFAULT_EPSILON)?;
            Ok(Sample {
                stem: format!("synth_{i:04}"),
                shadow: p.shadow,
                shadow_free: p.shadow_free,
                matte,
            })
        })
        .collect()
}

fn fit(img: Image, size: usize) -> Result<Image> {
    if img.dims() == (size, size) {
        Ok(img)
    } else {
        resize_bilinear(&img, size, size)
    }
}

/// Loads every matched pair under `root`, resized to `size × size`. Mattes
/// come from `matte/` when present and are computed otherwise.
pub fn load_samples(root: impl AsRef<Path>, size: usize) -> Result<Vec<Sample>> {
    let layout = scan_pairs(root)?;
    for u in &layout.unmatched {
        log::warn!("unmatched file {u}");
    }
    layout
        .pairs
        .iter()
        .map(|pair| {
            let shadow = fit(load_image(&pair.shadow)?, size)?;
            let shadow_free = fit(load_image(&pair.shadow_free)?, size)?;
            let matte = match &pair.matte {
                Some(p) => ShadowMatte::from_image(&fit(load_image(p)?, size)?)?,
                None => compute_matte(&shadow, &shadow_free, DEFAULT_EPSILON)?,
            };
            Ok(Sample {
                stem: pair.stem.clone(),
                shadow,
                shadow_free,
                matte,
            })
        })
        .collect()
}

/// The dataset a run config points at, or its synthetic stand-in.
pub fn samples_for(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let samples = match &cfg.dataset_root {
        Some(root) => load_samples(root, cfg.image_size)?,
        None => synthetic_samples(cfg.synthetic_pairs, cfg.image_size, cfg.seed)?,
    };
    if samples.is_empty() {
        return Err(Error::Config("dataset has no matched shadow / shadow-free pairs".into()));
    }
    Ok(samples)
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn budget_left(step: u64, budget: Option<u64>) -> bool {
    budget.map_or(true, |b| step < b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatteStepLog {
    pub step: u64,
    pub epoch: u64,
    pub l1: f64,
    pub bce: f64,
    pub total: f64,
}

impl MatteStepLog {
    pub const CSV_HEADER: &'static str = "step,epoch,l1,bce,total";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.epoch, self.l1, self.bce, self.total)
    }
}

/// RMSprop training of the matte generator on the composite matte loss.
#[derive(Debug, Clone)]
pub struct MatteTrainer {
    pub generator: MatteGenerator,
    pub optimizer: OptimizerState,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl MatteTrainer {
    pub fn new(config: MatteGenConfig, seed: u64) -> Result<MatteTrainer> {
        let generator = MatteGenerator::new(config.clone(), seed)?;
        let optimizer = OptimizerState::new(OptimizerSettings::rmsprop(config.lr), generator.params())?;
        Ok(MatteTrainer {
            generator,
            optimizer,
            step: 0,
            epoch: 0,
            seed,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<MatteTrainer> {
        if ck.header.kind != CheckpointKind::MatteGenerator {
            return Err(Error::Config("expected a matte-generator checkpoint, got a removal checkpoint".into()));
        }
        let config: MatteGenConfig = ck.config_as()?;
        let mut generator = MatteGenerator::new(config, ck.header.seed)?;
        generator.params_mut().load_values(&ck.params)?;
        let optimizer = ck.optimizer_state();
        check_slots(&optimizer, generator.params())?;
        Ok(MatteTrainer {
            generator,
            optimizer,
            step: ck.header.step,
            epoch: ck.header.epoch,
            seed: ck.header.seed,
        })
    }

    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<MatteStepLog> {
        let cfg = self.generator.config().clone();
        let scale = 1.0 / batch.len() as f64;
        let (mut l1, mut bce) = (0.0, 0.0);
        let mut total: Option<Tensor> = None;
        for s in batch {
            let pred = self.generator.forward(s.shadow.pixels())?;
            let l = matte_loss(&pred, s.matte.values(), &cfg)?;
            l1 += l.l1 * scale;
            bce += l.bce * scale;
            let term = l.total.mul_scalar(scale);
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
        let total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
        let value = total.item()?;
        total.backward()?;
        self.optimizer.step(self.generator.params_mut())?;
        self.step += 1;
        Ok(MatteStepLog {
            step: self.step,
            epoch: self.epoch,
            l1,
            bce,
            total: value,
        })
    }

    /// One shuffled pass, stopping early once `budget` total steps is reached.
    pub fn run_epoch(&mut self, samples: &[Sample], budget: Option<u64>) -> Result<Vec<MatteStepLog>> {
        let bs = self.generator.config().batch_size;
        let order = epoch_order(samples.len(), self.seed, self.epoch);
        let mut logs = Vec::new();
        for chunk in order.chunks(bs) {
            if !budget_left(self.step, budget) {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            logs.push(self.train_step(&batch)?);
        }
        self.epoch += 1;
        Ok(logs)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            CheckpointKind::MatteGenerator,
            serde_json::to_value(self.generator.config())?,
            self.generator.params(),
            &self.optimizer,
            self.step,
            self.epoch,
            self.seed,
        ))
    }
}

fn check_slots(opt: &OptimizerState, params: &crate::params::ParamStore) -> Result<()> {
    let trainable: Vec<&str> = params.iter().filter(|p| p.trainable).map(|p| p.name.as_str()).collect();
    let slots: Vec<&str> = opt.slots.iter().map(|(n, _, _)| n.as_str()).collect();
    if trainable != slots {
        return Err(Error::Checkpoint("optimizer state does not match the parameter set".into()));
    }
    Ok(())
}

/// Loads the generator stored in a matte-generator checkpoint, frozen.
pub fn load_frozen_generator(path: impl AsRef<Path>) -> Result<MatteGenerator> {
    let ck = Checkpoint::load(path)?;
    Ok(MatteTrainer::from_checkpoint(&ck)?.generator.frozen())
}

/// Configuration stored with a removal checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalMeta {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub threshold: f64,
}

/// Adam training of the restoration network on the total loss, with the
/// matte generator frozen and its guidance cached per sample.
#[derive(Debug, Clone)]
pub struct RemovalTrainer {
    pub model: MatteViT,
    pub optimizer: OptimizerState,
    guide: Option<MatteGenerator>,
    pub weights: LossWeights,
    pub threshold: f64,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    cache: HashMap<String, (Option<Tensor>, EdgeWeightMap)>,
}

impl RemovalTrainer {
    pub fn new(
        model: ModelConfig,
        weights: LossWeights,
        lr: f64,
        guide: Option<&MatteGenerator>,
        threshold: f64,
        seed: u64,
    ) -> Result<RemovalTrainer> {
        weights.validate()?;
        let model = MatteViT::new(model, seed)?;
        let optimizer = OptimizerState::new(OptimizerSettings::adam(lr), model.params())?;
        RemovalTrainer::assemble(model, optimizer, guide.map(MatteGenerator::frozen), weights, threshold, seed)
    }

    fn assemble(
        model: MatteViT,
        optimizer: OptimizerState,
        guide: Option<MatteGenerator>,
        weights: LossWeights,
        threshold: f64,
        seed: u64,
    ) -> Result<RemovalTrainer> {
        let mode = model.config().guidance_mode;
        let guide = if mode.is_guided() {
            Some(guide.ok_or_else(|| {
                Error::Config(format!("guidance mode {mode} needs a matte-generator checkpoint"))
            })?)
        } else {
            None
        };
        Ok(RemovalTrainer {
            model,
            optimizer,
            guide,
            weights,
            threshold,
            step: 0,
            epoch: 0,
            seed,
            cache: HashMap::new(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<RemovalTrainer> {
        if ck.header.kind != CheckpointKind::Removal {
            return Err(Error::Config("expected a removal checkpoint, got a matte-generator checkpoint".into()));
        }
        let meta: RemovalMeta = ck.config_as()?;
        let mut model = MatteViT::new(meta.model, ck.header.seed)?;
        model.params_mut().load_values(&ck.params)?;
        let optimizer = ck.optimizer_state();
        check_slots(&optimizer, model.params())?;
        let guide = match &ck.header.guide_config {
            Some(v) => {
                let cfg: MatteGenConfig = serde_json::from_value(v.clone())?;
                let mut g = MatteGenerator::new(cfg, 0)?;
                g.params_mut().load_values(&ck.guide)?;
                Some(g.frozen())
            }
            None => None,
        };
        let mut t = RemovalTrainer::assemble(model, optimizer, guide, meta.loss, meta.threshold, ck.header.seed)?;
        t.step = ck.header.step;
        t.epoch = ck.header.epoch;
        Ok(t)
    }

    pub fn guide(&self) -> Option<&MatteGenerator> {
        self.guide.as_ref()
    }

    pub fn guidance_mode(&self) -> GuidanceMode {
        self.model.config().guidance_mode
    }

    fn prepared(&mut self, s: &Sample) -> Result<(Option<Tensor>, EdgeWeightMap)> {
        if let Some(v) = self.cache.get(&s.stem) {
            return Ok(v.clone());
        }
        let guidance = guidance_map(self.guidance_mode(), &s.shadow, self.guide.as_ref(), self.threshold)?;
        let w = edge_weight_map(&s.shadow_free, self.weights.edge_alpha)?;
        self.cache.insert(s.stem.clone(), (guidance.clone(), w.clone()));
        Ok((guidance, w))
    }

    /// Errors if any parameter of the guidance generator tracks or holds a
    /// gradient.
    pub fn assert_guide_frozen(&self) -> Result<()> {
        if let Some(g) = &self.guide {
            for p in g.params().iter() {
                if p.tensor.requires_grad() || p.tensor.grad().is_some() {
                    return Err(Error::Contract(format!(
                        "frozen matte generator parameter {} received a gradient",
                        p.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<LossRecord> {
        let scale = 1.0 / batch.len() as f64;
        let (mut ch, mut ff) = (0.0, 0.0);
        let mut total: Option<Tensor> = None;
        for s in batch {
            let (guidance, w) = self.prepared(s)?;
            let pred = self.model.forward(s.shadow.pixels(), guidance.as_ref())?;
            let l = total_loss(&pred, s.shadow_free.pixels(), &w, &self.weights)?;
            ch += l.charbonnier * scale;
            ff += l.fft * scale;
            let term = l.total.mul_scalar(scale);
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
        let total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
        let value = total.item()?;
        total.backward()?;
        self.assert_guide_frozen()?;
        self.optimizer.step(self.model.params_mut())?;
        self.step += 1;
        Ok(LossRecord {
            step: self.step,
            charbonnier: ch,
            fft: ff,
            total: value,
        })
    }

    pub fn run_epoch(&mut self, samples: &[Sample], batch_size: usize, budget: Option<u64>) -> Result<Vec<LossRecord>> {
        let order = epoch_order(samples.len(), self.seed, self.epoch);
        let mut logs = Vec::new();
        for chunk in order.chunks(batch_size.max(1)) {
            if !budget_left(self.step, budget) {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            logs.push(self.train_step(&batch)?);
        }
        self.epoch += 1;
        Ok(logs)
    }

    /// Restored image for one sample.
    pub fn predict(&mut self, s: &Sample) -> Result<Image> {
        let (guidance, _) = self.prepared(s)?;
        let out = no_grad(|| self.model.forward(s.shadow.pixels(), guidance.as_ref()))?;
        Image::new(ColorSpace::Srgb, out)
    }

    /// PSNR / SSIM / RMSE of the current predictions against the targets.
    pub fn evaluate(&mut self, samples: &[Sample]) -> Result<MetricsReport> {
        let mut report = MetricsReport::default();
        for s in samples {
            let pred = self.predict(s)?;
            report.rows.push(ImageMetrics::image_quality(&s.stem, &pred, &s.shadow_free)?);
        }
        Ok(report)
    }

    pub fn meta(&self) -> RemovalMeta {
        RemovalMeta {
            model: self.model.config().clone(),
            loss: self.weights.clone(),
            threshold: self.threshold,
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let ck = Checkpoint::new(
            CheckpointKind::Removal,
            serde_json::to_value(self.meta())?,
            self.model.params(),
            &self.optimizer,
            self.step,
            self.epoch,
            self.seed,
        );
        Ok(match &self.guide {
            Some(g) => ck.with_guide(serde_json::to_value(g.config())?, g.params()),
            None => ck,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_matte() -> MatteGenConfig {
        MatteGenConfig {
            depth: 2,
            base_channels: 4,
            lr: 1e-3,
            batch_size: 2,
            ..Default::default()
        }
    }

    fn tiny_model(mode: GuidanceMode) -> ModelConfig {
        ModelConfig {
            patch_size: 4,
            embed_dim: 16,
            depth: 1,
            num_heads: 2,
            mlp_ratio: 2,
            guidance_mode: mode,
            image_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn matte_training_is_deterministic_and_resumable() {
        let samples = synthetic_samples(3, 16, 1).unwrap();
        let run = || {
            let mut t = MatteTrainer::new(tiny_matte(), 5).unwrap();
            let mut logs = t.run_epoch(&samples, None).unwrap();
            logs.extend(t.run_epoch(&samples, None).unwrap());
            (t, logs)
        };
        let (a, la) = run();
        let (_, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(la.len(), 4);

        let mut first = MatteTrainer::new(tiny_matte(), 5).unwrap();
        first.run_epoch(&samples, None).unwrap();
        let bytes = first.checkpoint().unwrap().to_bytes().unwrap();
        let mut resumed = MatteTrainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(resumed.step, 2);
        let tail = resumed.run_epoch(&samples, None).unwrap();
        assert_eq!(tail, la[2..]);
        assert_eq!(resumed.generator.params().records(), a.generator.params().records());
    }

    #[test]
    fn budget_caps_steps() {
        let samples = synthetic_samples(4, 16, 2).unwrap();
        let mut t = MatteTrainer::new(tiny_matte(), 0).unwrap();
        let logs = t.run_epoch(&samples, Some(1)).unwrap();
        assert_eq!(logs.len(), 1);
        assert!(t.run_epoch(&samples, Some(1)).unwrap().is_empty());
    }

    #[test]
    fn removal_requires_guide_when_guided() {
        let err = RemovalTrainer::new(tiny_model(GuidanceMode::Matte), LossWeights::default(), 1e-3, None, 0.1, 0);
        assert!(matches!(err, Err(Error::Config(_))));
        RemovalTrainer::new(tiny_model(GuidanceMode::None), LossWeights::default(), 1e-3, None, 0.1, 0).unwrap();
    }

    #[test]
    fn removal_keeps_guide_frozen_and_resumes() {
        let samples = synthetic_samples(2, 16, 3).unwrap();
        let gen = MatteTrainer::new(tiny_matte(), 1).unwrap().generator;
        let before = gen.params().records();
        let mut t =
            RemovalTrainer::new(tiny_model(GuidanceMode::Binary), LossWeights::default(), 1e-3, Some(&gen), 0.1, 4)
                .unwrap();
        let logs = t.run_epoch(&samples, 1, None).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(t.guide().unwrap().params().records(), before);
        assert_eq!(gen.params().records(), before);

        let ck = Checkpoint::from_bytes(&t.checkpoint().unwrap().to_bytes().unwrap()).unwrap();
        let mut r = RemovalTrainer::from_checkpoint(&ck).unwrap();
        assert_eq!(r.step, 2);
        assert_eq!(r.guide().unwrap().params().records(), before);
        let a = t.run_epoch(&samples, 1, None).unwrap();
        let b = r.run_epoch(&samples, 1, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].step, 3);
    }
}
