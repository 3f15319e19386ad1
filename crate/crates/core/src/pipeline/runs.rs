//! File-level operations: training runs with logs and checkpoints,
//! inference, evaluation, λ sweeps and the ablation matrix.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::RunConfig;
use super::train::{load_frozen_generator, samples_for, MatteTrainer, RemovalMeta, RemovalTrainer, Sample};
use crate::error::{Error, Result};
use crate::imaging::{list_images, load_image, save_image, ColorSpace};
use crate::losses::{LossRecord, LossWeights};
use crate::matte::{MatteGenConfig, MatteGenerator};
use crate::metrics::{ImageMetrics, MetricsReport};
use crate::model::{GuidanceMode, MatteViT};

pub const MATTE_RUN_DIR: &str = "matte_generator";
pub const REMOVAL_RUN_DIR: &str = "removal";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_LOG: &str = "loss.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Opens the CSV log, truncating (with a fresh header) unless resuming.
fn open_log(path: &Path, header: &str, resume: bool) -> Result<File> {
    if resume && path.exists() {
        return OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e));
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    Ok(f)
}

fn append_lines(f: &mut File, path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Saves `epoch_NNNNN.ckpt` and removes all but the newest `keep`.
fn save_periodic(dir: &Path, ck: &Checkpoint, keep: usize) -> Result<()> {
    ck.save(dir.join(format!("epoch_{:05}.ckpt", ck.header.epoch)))?;
    let mut old: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch_") && n.ends_with(".ckpt"))
        })
        .collect();
    old.sort();
    let excess = old.len().saturating_sub(keep);
    for p in &old[..excess] {
        std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Trains the matte generator described by `cfg`; returns the final
/// checkpoint path (`<output_dir>/matte_generator/final.ckpt`).
pub fn train_matte_generator(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let cfg = cfg.normalized();
    let samples = samples_for(&cfg)?;
    let dir = cfg.output_dir.join(MATTE_RUN_DIR);
    create_dir(&dir)?;
    let mut trainer = match &cfg.resume {
        Some(p) => MatteTrainer::from_checkpoint(&Checkpoint::load(p)?)?,
        None => MatteTrainer::new(cfg.matte.clone(), cfg.seed)?,
    };
    let log_path = dir.join(LOSS_LOG);
    let mut log = open_log(&log_path, super::train::MatteStepLog::CSV_HEADER, cfg.resume.is_some())?;
    while (trainer.epoch as usize) < cfg.matte.epochs && budget_open(trainer.step, cfg.matte_max_steps) {
        let logs = trainer.run_epoch(&samples, cfg.matte_max_steps)?;
        append_lines(&mut log, &log_path, logs.iter().map(|l| l.csv_line()))?;
        if let Some(last) = logs.last() {
            log::info!("matte epoch {} step {} loss {:.6}", trainer.epoch, last.step, last.total);
        }
        if trainer.epoch as usize % cfg.checkpoint_every == 0 {
            save_periodic(&dir, &trainer.checkpoint()?, cfg.keep_checkpoints)?;
        }
    }
    let path = dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint()?.save(&path)?;
    Ok(path)
}

fn budget_open(step: u64, budget: Option<u64>) -> bool {
    budget.map_or(true, |b| step < b)
}

/// Trains the removal network; `matte_ckpt` (or `cfg.matte_checkpoint`)
/// supplies the frozen generator when the guidance mode needs one.
/// Returns `<output_dir>/removal/final.ckpt`.
pub fn train_removal(cfg: &RunConfig, matte_ckpt: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let cfg = cfg.normalized();
    let samples = samples_for(&cfg)?;
    let dir = cfg.output_dir.join(REMOVAL_RUN_DIR);
    create_dir(&dir)?;
    let mut trainer = match &cfg.resume {
        Some(p) => {
            let t = RemovalTrainer::from_checkpoint(&Checkpoint::load(p)?)?;
            if t.guidance_mode() != cfg.model.guidance_mode {
                return Err(Error::Config(format!(
                    "checkpoint was trained with guidance {} but the config asks for {}",
                    t.guidance_mode(),
                    cfg.model.guidance_mode
                )));
            }
            t
        }
        None => {
            let guide = guide_for(&cfg, matte_ckpt)?;
            RemovalTrainer::new(cfg.model.clone(), cfg.loss.clone(), cfg.lr, guide.as_ref(), cfg.threshold, cfg.seed)?
        }
    };
    let log_path = dir.join(LOSS_LOG);
    let mut log = open_log(&log_path, LossRecord::CSV_HEADER, cfg.resume.is_some())?;
    while (trainer.epoch as usize) < cfg.epochs && budget_open(trainer.step, cfg.max_steps) {
        let logs = trainer.run_epoch(&samples, cfg.batch_size, cfg.max_steps)?;
        append_lines(&mut log, &log_path, logs.iter().map(LossRecord::csv_line))?;
        if let Some(last) = logs.last() {
            log::info!(
                "removal epoch {} step {} char {:.6} fft {:.6} total {:.6}",
                trainer.epoch,
                last.step,
                last.charbonnier,
                last.fft,
                last.total
            );
        }
        if trainer.epoch as usize % cfg.checkpoint_every == 0 {
            save_periodic(&dir, &trainer.checkpoint()?, cfg.keep_checkpoints)?;
        }
    }
    let path = dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint()?.save(&path)?;
    Ok(path)
}

fn guide_for(cfg: &RunConfig, matte_ckpt: Option<&Path>) -> Result<Option<MatteGenerator>> {
    let path = matte_ckpt.or(cfg.matte_checkpoint.as_deref());
    match (cfg.model.guidance_mode.is_guided(), path) {
        (false, Some(p)) => {
            log::warn!("guidance mode none: ignoring matte checkpoint {}", p.display());
            Ok(None)
        }
        (false, None) => Ok(None),
        (true, None) => Err(Error::Config(format!(
            "guidance mode {} needs a matte-generator checkpoint",
            cfg.model.guidance_mode
        ))),
        (true, Some(p)) => Ok(Some(load_frozen_generator(p)?)),
    }
}

/// Restores every image in `input_dir` with a removal checkpoint and writes
/// `<output_dir>/<stem>.png`. `guidance`, when given, must match the
/// checkpoint.
pub fn infer(
    checkpoint: impl AsRef<Path>,
    input_dir: impl AsRef<Path>,
    output_dir: impl AsRef<Path>,
    guidance: Option<GuidanceMode>,
) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(checkpoint)?;
    let trainer = RemovalTrainer::from_checkpoint(&ck)?;
    let mode = trainer.guidance_mode();
    if let Some(g) = guidance.filter(|g| *g != mode) {
        return Err(Error::Config(format!(
            "checkpoint was trained with guidance {mode}, not {g}"
        )));
    }
    let (input_dir, output_dir) = (input_dir.as_ref(), output_dir.as_ref());
    if !input_dir.is_dir() {
        return Err(Error::Config(format!("input directory {} does not exist", input_dir.display())));
    }
    let inputs: Vec<(String, PathBuf)> = list_images(input_dir)?.into_iter().collect();
    create_dir(output_dir)?;
    let model: &MatteViT = &trainer.model;
    let size = model.config().image_size;
    inputs
        .par_iter()
        .map(|(stem, path)| {
            let img = load_image(path)?;
            let img = match img.space() {
                ColorSpace::Gray => crate::imaging::gray_to_rgb(&img)?,
                _ => img,
            };
            if img.dims() != (size, size) {
                return Err(Error::Shape(format!(
                    "{}: image is {}×{} but the model expects {size}×{size}; resize it (e.g. --size {size}) first",
                    path.display(),
                    img.height(),
                    img.width()
                )));
            }
            let out = model.predict(&img, trainer.guide(), trainer.threshold)?;
            let dest = output_dir.join(format!("{stem}.png"));
            save_image(&out, &dest)?;
            Ok(dest)
        })
        .collect()
}

/// PSNR / SSIM / RMSE for same-stem images of two directories.
pub fn evaluate(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<MetricsReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let pred = list_images(pred_dir)?;
    let gt = list_images(gt_dir)?;
    let matched: Vec<(&String, &PathBuf, &PathBuf)> =
        pred.iter().filter_map(|(s, p)| gt.get(s).map(|g| (s, p, g))).collect();
    if matched.is_empty() {
        return Err(Error::Config(format!(
            "no same-stem images in {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let rows = matched
        .par_iter()
        .map(|(stem, p, g)| ImageMetrics::image_quality(stem.as_str(), &load_image(p)?, &load_image(g)?))
        .collect::<Result<Vec<_>>>()?;
    let mut unmatched: Vec<String> = pred.keys().filter(|s| !gt.contains_key(*s)).map(|s| format!("pred/{s}")).collect();
    unmatched.extend(gt.keys().filter(|s| !pred.contains_key(*s)).map(|s| format!("gt/{s}")));
    Ok(MetricsReport { rows, unmatched })
}

/// Generator for guided runs: loaded from `cfg.matte_checkpoint`, or trained
/// in memory on `samples`.
pub fn prepare_guide(cfg: &RunConfig, samples: &[Sample]) -> Result<MatteGenerator> {
    if let Some(p) = &cfg.matte_checkpoint {
        return load_frozen_generator(p);
    }
    let mut t = MatteTrainer::new(cfg.matte.clone(), cfg.seed)?;
    while (t.epoch as usize) < cfg.matte.epochs && budget_open(t.step, cfg.matte_max_steps) {
        t.run_epoch(samples, cfg.matte_max_steps)?;
    }
    Ok(t.generator.frozen())
}

/// Outcome of one in-memory removal run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trainer: RemovalTrainer,
    pub losses: Vec<LossRecord>,
    pub report: MetricsReport,
}

/// Trains a removal network from scratch on `samples` and evaluates it on
/// the same samples.
pub fn run_removal_in_memory(cfg: &RunConfig, samples: &[Sample], guide: Option<&MatteGenerator>) -> Result<RunResult> {
    let cfg = cfg.normalized();
    let guide = guide.filter(|_| cfg.model.guidance_mode.is_guided());
    let mut trainer =
        RemovalTrainer::new(cfg.model.clone(), cfg.loss.clone(), cfg.lr, guide, cfg.threshold, cfg.seed)?;
    let mut losses = Vec::new();
    while (trainer.epoch as usize) < cfg.epochs && budget_open(trainer.step, cfg.max_steps) {
        losses.extend(trainer.run_epoch(samples, cfg.batch_size, cfg.max_steps)?);
    }
    let report = trainer.evaluate(samples)?;
    Ok(RunResult { trainer, losses, report })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub final_loss: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "lambda,psnr_db,ssim,rmse,final_loss";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.lambda, self.psnr_db, self.ssim, self.rmse, self.final_loss)
    }
}

fn summary_of(r: &RunResult) -> (f64, f64, f64, f64) {
    let a = r.report.aggregate();
    (
        a.psnr_db.unwrap_or(f64::NAN),
        a.ssim.unwrap_or(f64::NAN),
        a.rmse.unwrap_or(f64::NAN),
        r.losses.last().map_or(f64::NAN, |l| l.total),
    )
}

/// One removal run per λ in `cfg.lambda_sweep`, all from the same seed and
/// guidance generator.
pub fn lambda_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    if cfg.lambda_sweep.is_empty() {
        return Err(Error::Config("lambda_sweep is empty".into()));
    }
    cfg.validate()?;
    let cfg = cfg.normalized();
    let samples = samples_for(&cfg)?;
    let guide = match cfg.model.guidance_mode.is_guided() {
        true => Some(prepare_guide(&cfg, &samples)?),
        false => None,
    };
    cfg.lambda_sweep
        .iter()
        .map(|&lambda| {
            let run_cfg = RunConfig {
                loss: LossWeights { lambda_fft: lambda, ..cfg.loss.clone() },
                ..cfg.clone()
            };
            let r = run_removal_in_memory(&run_cfg, &samples, guide.as_ref())?;
            let (psnr_db, ssim, rmse, final_loss) = summary_of(&r);
            log::info!("lambda {lambda}: PSNR {psnr_db:.3} dB, SSIM {ssim:.4}, RMSE {rmse:.3}");
            Ok(SweepRow { lambda, psnr_db, ssim, rmse, final_loss })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub guidance: GuidanceMode,
    pub hfam: bool,
    /// Trainable scalars of the constructed network.
    pub params: usize,
    /// The closed-form count from the config.
    pub predicted_params: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub final_loss: f64,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "guidance,hfam,params,predicted_params,psnr_db,ssim,rmse,final_loss";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.guidance,
            if self.hfam { "on" } else { "off" },
            self.params,
            self.predicted_params,
            self.psnr_db,
            self.ssim,
            self.rmse,
            self.final_loss
        )
    }
}

/// Guidance ∈ {none, binary, matte} × HFAM ∈ {on, off}, one shared seed and
/// one shared guidance generator.
pub fn ablation_matrix(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let cfg = cfg.normalized();
    let samples = samples_for(&cfg)?;
    let guide = prepare_guide(&cfg, &samples)?;
    let cells: Vec<(GuidanceMode, bool)> = GuidanceMode::ALL
        .iter()
        .flat_map(|&g| [(g, true), (g, false)])
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(guidance, hfam)| {
            let mut run_cfg = cfg.clone();
            run_cfg.model.guidance_mode = guidance;
            run_cfg.model.hfam_enabled = hfam;
            let r = run_removal_in_memory(&run_cfg, &samples, Some(&guide))?;
            let (psnr_db, ssim, rmse, final_loss) = summary_of(&r);
            log::info!("ablation guidance={guidance} hfam={hfam}: PSNR {psnr_db:.3} dB");
            Ok(AblationRow {
                guidance,
                hfam,
                params: r.trainer.model.params().trainable_count(),
                predicted_params: run_cfg.model.param_count(),
                psnr_db,
                ssim,
                rmse,
                final_loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

/// Reads the stored configuration of any checkpoint, for display.
pub fn describe_checkpoint(path: impl AsRef<Path>) -> Result<String> {
    let ck = Checkpoint::load(path)?;
    let body = match ck.header.kind {
        CheckpointKind::MatteGenerator => serde_json::to_string_pretty(&ck.config_as::<MatteGenConfig>()?)?,
        CheckpointKind::Removal => serde_json::to_string_pretty(&ck.config_as::<RemovalMeta>()?)?,
    };
    Ok(format!(
        "kind: {:?}\nstep: {}\nepoch: {}\nseed: {}\nconfig: {body}",
        ck.header.kind, ck.header.step, ck.header.epoch, ck.header.seed
    ))
}
