use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mattevit::matte::build_matte_dataset;
use mattevit::metrics::ocr_eval;
use mattevit::model::GuidanceMode;
use mattevit::numerics::gradient_audit;
use mattevit::pipeline::{
    ablation_matrix, end_to_end_gradient_check, evaluate, infer, lambda_sweep, train_matte_generator,
    train_removal, AblationRow, RunConfig, SweepRow,
};
use mattevit::{Error, Result};

const OP_TOLERANCE: f64 = 1e-3;
const END_TO_END_TOLERANCE: f64 = 1e-2;

#[derive(Parser)]
#[command(name = "mattevit", version, about = "Document shadow removal with matte-guided vision transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute shadow mattes for every pair under a dataset root.
    MatteBuild {
        /// Root containing `shadow/` and `shadow_free/`.
        #[arg(long)]
        pairs: PathBuf,
        /// Directory the matte PNGs are written to (`<root>/matte` for training).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the shadow-matte generator.
    TrainMatte(RunArgs),
    /// Train the removal network.
    TrainRemoval(RunArgs),
    /// Restore every image of a directory with a removal checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        guidance: Option<GuidanceMode>,
    },
    /// PSNR / SSIM / RMSE between predictions and ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write the per-image CSV here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edit distance between ground-truth and recognized `.txt` files.
    OcrEval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one removal run per λ.
    SweepLambda(RunArgs),
    /// Train and evaluate the guidance × HFAM ablation matrix.
    Ablation(RunArgs),
    /// Finite-difference audit of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic paired dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags shared by the training commands. Each overrides the config field of
/// the same name.
#[derive(Args, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (`output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Image side length (`image_size`).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    guidance: Option<GuidanceMode>,
    #[arg(long)]
    no_hfam: bool,
    /// FFT-loss weight; for `sweep-lambda` it replaces the sweep list.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Paired dataset root (`dataset_root`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Frozen matte-generator checkpoint (`matte_checkpoint`).
    #[arg(long)]
    matte_ckpt: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, sweep: bool) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.size {
            cfg.image_size = v;
        }
        if let Some(v) = self.guidance {
            cfg.model.guidance_mode = v;
        }
        if self.no_hfam {
            cfg.model.hfam_enabled = false;
        }
        if let Some(v) = self.lambda {
            if sweep {
                cfg.lambda_sweep = vec![v];
            } else {
                cfg.loss.lambda_fft = v;
            }
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = &self.data {
            cfg.dataset_root = Some(v.clone());
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
            cfg.matte.epochs = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = Some(v);
            cfg.matte_max_steps = Some(v);
        }
        if let Some(v) = &self.resume {
            cfg.resume = Some(v.clone());
        }
        if let Some(v) = &self.matte_ckpt {
            cfg.matte_checkpoint = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MatteBuild { pairs, out } => {
            let r = build_matte_dataset(&pairs, &out)?;
            for u in &r.unmatched {
                log::warn!("unmatched: {u}");
            }
            for (stem, why) in &r.failed {
                log::warn!("failed {stem}: {why}");
            }
            println!("wrote {} mattes to {}", r.written, out.display());
        }
        Command::TrainMatte(args) => {
            let cfg = args.resolve(false)?;
            println!("{}", train_matte_generator(&cfg)?.display());
        }
        Command::TrainRemoval(args) => {
            let cfg = args.resolve(false)?;
            let ckpt = cfg.matte_checkpoint.clone();
            println!("{}", train_removal(&cfg, ckpt.as_deref())?.display());
        }
        Command::Infer { checkpoint, input, out, guidance } => {
            let written = infer(&checkpoint, &input, &out, guidance)?;
            log::info!("restored {} images into {}", written.len(), out.display());
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Eval { pred, gt, out } => {
            let report = evaluate(&pred, &gt)?;
            for u in &report.unmatched {
                log::warn!("unmatched: {u}");
            }
            let csv = report.to_csv();
            if let Some(p) = out {
                write_text(&p, &csv)?;
            }
            print!("{csv}");
            eprint!("{}", report.summary());
        }
        Command::OcrEval { gt, pred, out } => {
            let report = ocr_eval(&gt, &pred)?;
            let csv = report.to_csv();
            if let Some(p) = out {
                write_text(&p, &csv)?;
            }
            print!("{csv}");
            eprint!("{}", report.summary());
        }
        Command::SweepLambda(args) => {
            let cfg = args.resolve(true)?;
            let rows = lambda_sweep(&cfg)?;
            let mut csv = format!("{}\n", SweepRow::CSV_HEADER);
            for r in &rows {
                csv.push_str(&r.csv_line());
                csv.push('\n');
            }
            write_text(&cfg.output_dir.join("lambda_sweep.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Ablation(args) => {
            let cfg = args.resolve(false)?;
            let rows = ablation_matrix(&cfg)?;
            let mut csv = format!("{}\n", AblationRow::CSV_HEADER);
            for r in &rows {
                csv.push_str(&r.csv_line());
                csv.push('\n');
            }
            write_text(&cfg.output_dir.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Gradcheck { seed } => {
            let mut failed = Vec::new();
            for c in gradient_audit(seed)? {
                let ok = c.rel_err < OP_TOLERANCE;
                println!("{:<32} {:.3e} {}", c.name, c.rel_err, if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(c.name);
                }
            }
            let e2e = end_to_end_gradient_check(seed)?;
            let ok = e2e < END_TO_END_TOLERANCE;
            println!("{:<32} {:.3e} {}", "matte_vit + total loss", e2e, if ok { "ok" } else { "FAIL" });
            if !ok {
                failed.push("matte_vit + total loss".into());
            }
            if !failed.is_empty() {
                return Err(Error::Contract(format!("gradient check failed for: {}", failed.join(", "))));
            }
        }
        Command::SynthData { out, count, size, seed } => {
            let stems = mattevit::imaging::write_synthetic_dataset(&out, count, size, seed)?;
            println!("wrote {} pairs to {}", stems.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
