//! Image-quality metrics and character-level edit distance.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{list_with_extensions, Image};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(pred: &Image, gt: &Image) -> Result<()> {
    gt.same_dims(pred)?;
    if pred.channels() != gt.channels() {
        return Err(Error::Shape(format!(
            "channel counts differ: {} vs {}",
            pred.channels(),
            gt.channels()
        )));
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `20·log10(1 / sqrt(MSE))` over all channels, capped at 100 dB.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    check_pair(pred, gt)?;
    let m = mse(pred.data(), gt.data());
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (1.0 / m.sqrt()).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmseScale {
    /// Values on 0–255.
    EightBit,
    /// Raw [0, 1] values (mattes).
    Unit,
}

pub fn rmse(pred: &Image, gt: &Image, scale: RmseScale) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(rmse_slices(pred.data(), gt.data(), scale))
}

pub fn rmse_slices(pred: &[f64], gt: &[f64], scale: RmseScale) -> f64 {
    let r = mse(pred, gt).sqrt();
    match scale {
        RmseScale::EightBit => 255.0 * r,
        RmseScale::Unit => r,
    }
}

/// Side length of the SSIM window for an `h × w` image: 11, or the largest
/// odd size that fits.
pub fn ssim_window(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn ssim_taps(win: usize) -> Vec<f64> {
    let r = (win / 2) as f64;
    let g: Vec<f64> = (0..win)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM from local statistics of one window.
pub fn ssim_from_stats(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Mean SSIM of one `h × w` plane pair over all valid windows.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let taps = ssim_taps(ssim_window(h, w));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let ma = filter_valid(a, h, w, &taps);
    let mb = filter_valid(b, h, w, &taps);
    let saa = filter_valid(&prod(a, a), h, w, &taps);
    let sbb = filter_valid(&prod(b, b), h, w, &taps);
    let sab = filter_valid(&prod(a, b), h, w, &taps);
    let n = ma.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (ma[i], mb[i]);
            ssim_from_stats(mx, my, saa[i] - mx * mx, sbb[i] - my * my, sab[i] - mx * my)
        })
        .sum();
    total / n as f64
}

/// Per-channel mean SSIM (11×11 Gaussian window, σ 1.5), averaged over
/// channels.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    check_pair(pred, gt)?;
    let (h, w) = pred.dims();
    let c = pred.channels();
    Ok((0..c).map(|ch| ssim_plane(pred.plane(ch), gt.plane(ch), h, w)).sum::<f64>() / c as f64)
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image: String,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub rmse: Option<f64>,
    pub edit_distance: Option<usize>,
}

impl ImageMetrics {
    pub fn image_quality(image: impl Into<String>, pred: &Image, gt: &Image) -> Result<ImageMetrics> {
        Ok(ImageMetrics {
            image: image.into(),
            psnr_db: Some(psnr(pred, gt)?),
            ssim: Some(ssim(pred, gt)?),
            rmse: Some(rmse(pred, gt, RmseScale::EightBit)?),
            edit_distance: None,
        })
    }
}

/// Means over the rows that carry each column.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub rmse: Option<f64>,
    pub edit_distance: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<ImageMetrics>,
    /// Inputs without a partner, e.g. `pred/foo`.
    pub unmatched: Vec<String>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "image,psnr_db,ssim,rmse,edit_distance";

    pub fn aggregate(&self) -> Aggregate {
        Aggregate {
            psnr_db: mean_of(self.rows.iter().filter_map(|r| r.psnr_db)),
            ssim: mean_of(self.rows.iter().filter_map(|r| r.ssim)),
            rmse: mean_of(self.rows.iter().filter_map(|r| r.rmse)),
            edit_distance: mean_of(self.rows.iter().filter_map(|r| r.edit_distance.map(|d| d as f64))),
        }
    }

    /// Header, one line per row, then a `mean` line.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.image,
                cell(r.psnr_db),
                cell(r.ssim),
                cell(r.rmse),
                cell(r.edit_distance)
            );
        }
        let a = self.aggregate();
        let _ = writeln!(
            s,
            "mean,{},{},{},{}",
            cell(a.psnr_db),
            cell(a.ssim),
            cell(a.rmse),
            cell(a.edit_distance)
        );
        s
    }

    pub fn summary(&self) -> String {
        let a = self.aggregate();
        let mut s = format!("images evaluated: {}\n", self.rows.len());
        if let Some(v) = a.psnr_db {
            let _ = writeln!(s, "mean PSNR: {v:.2} dB");
        }
        if let Some(v) = a.ssim {
            let _ = writeln!(s, "mean SSIM: {v:.4}");
        }
        if let Some(v) = a.rmse {
            let _ = writeln!(s, "mean RMSE: {v:.3}");
        }
        if let Some(v) = a.edit_distance {
            let _ = writeln!(s, "mean edit distance: {v:.3}");
        }
        if !self.unmatched.is_empty() {
            let _ = writeln!(s, "unmatched: {}", self.unmatched.join(", "));
        }
        s
    }
}

/// Edit distance between same-stem `.txt` files of two directories.
pub fn ocr_eval(gt_dir: impl AsRef<Path>, pred_dir: impl AsRef<Path>) -> Result<MetricsReport> {
    let (gt_dir, pred_dir) = (gt_dir.as_ref(), pred_dir.as_ref());
    for d in [gt_dir, pred_dir] {
        if !d.is_dir() {
            return Err(Error::Config(format!("{} is not a directory", d.display())));
        }
    }
    let gt = list_with_extensions(gt_dir, &["txt"])?;
    let pred = list_with_extensions(pred_dir, &["txt"])?;
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let mut report = MetricsReport::default();
    for (stem, gpath) in &gt {
        match pred.get(stem) {
            Some(ppath) => report.rows.push(ImageMetrics {
                image: stem.clone(),
                psnr_db: None,
                ssim: None,
                rmse: None,
                edit_distance: Some(edit_distance(&read(gpath)?, &read(ppath)?)),
            }),
            None => report.unmatched.push(format!("gt/{stem}")),
        }
    }
    report
        .unmatched
        .extend(pred.keys().filter(|s| !gt.contains_key(*s)).map(|s| format!("pred/{s}")));
    Ok(report)
}
