//! SSIM, PSNR and evaluation reports with dense histograms.
//!
//! Conventions, echoed in every written report: images are compared as
//! 8-bit renderings in `[0, 255]` with peak 255; SSIM runs on luminance
//! (0.299, 0.587, 0.114) with an 11×11 Gaussian window, σ = 1.5, averaged
//! over windows lying fully inside the image.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::StageCheckpoint;
use crate::dataset::{DatasetManifest, Split};
use crate::image::Image;
use crate::training::Pipeline;
use crate::{Error, Result, Stage};

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const HIST_BINS: usize = 50;
pub const SSIM_RANGE: (f64, f64) = (0.0, 1.0);
pub const PSNR_RANGE: (f64, f64) = (5.0, 40.0);
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum();
    Ok(s / a.data().len() as f64)
}

/// `10·log10(peak²/MSE)`; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    })
}

pub fn luminance(img: &Image) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64)
        .collect()
}

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `w × h` plane.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            rows[y * ow + ox] = k.iter().zip(&src[ox..ox + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = k.iter().enumerate().map(|(i, a)| a * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean windowed SSIM on luminance with peak 255.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_peak(a, b, PEAK)
}

pub fn ssim_with_peak(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (la, lb) = (luminance(a), luminance(b));
    let k = gaussian_kernel();
    let f = |v: &[f64]| filter_valid(v, w, h, &k);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (ma, mb) = (f(&la), f(&lb));
    let (saa, sbb, sab) = (f(&prod(&la, &la)), f(&prod(&lb, &lb)), f(&prod(&la, &lb)));
    let mut sum = 0.0;
    for i in 0..ma.len() {
        let (mu_a, mu_b) = (ma[i], mb[i]);
        let va = saa[i] - mu_a * mu_a;
        let vb = sbb[i] - mu_b * mu_b;
        let cov = sab[i] - mu_a * mu_b;
        sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    }
    Ok(sum / ma.len() as f64)
}

/// Uniform bins over `[lo, hi]`; values outside (and `±∞`) land in the edge
/// bins, NaN is rejected by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], (lo, hi): (f64, f64), bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for &v in values {
            let t = ((v - lo) / (hi - lo) * bins as f64).floor();
            let i = if t.is_nan() {
                0
            } else {
                t.clamp(0.0, bins as f64 - 1.0) as usize
            };
            counts[i] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let e = self.edges();
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", e[i], e[i + 1], c);
        }
        s
    }

    /// Simple bar chart: dark bars on white, one column group per bin.
    pub fn to_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (bar, gap, height) = (8usize, 2usize, 160usize);
        let n = self.counts.len();
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let img = Image::from_fn(n * (bar + gap) + gap, height + 2 * gap, |x, y| {
            let slot = x / (bar + gap);
            let inside = x % (bar + gap) >= gap && slot < n;
            let level = if inside {
                (self.counts[slot] as f64 / max * height as f64).round() as usize
            } else {
                0
            };
            let from_bottom = (height + gap).saturating_sub(y);
            if inside && from_bottom > 0 && from_bottom <= level {
                [40.0, 70.0, 140.0]
            } else if y == height + gap {
                [0.0, 0.0, 0.0]
            } else {
                [255.0, 255.0, 255.0]
            }
        });
        img.save(path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordScore {
    pub id: String,
    pub ssim: f64,
    /// `+∞` for a pixel-exact match.
    pub psnr_db: f64,
    /// Mean absolute error in `[−1, 1]` units.
    pub l1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub stage: Stage,
    pub split: Split,
    pub records: Vec<RecordScore>,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    pub mean_l1: f64,
    pub ssim_hist: Histogram,
    pub psnr_hist: Histogram,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

impl EvalReport {
    pub fn from_scores(stage: Stage, split: Split, records: Vec<RecordScore>) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&RecordScore) -> f64| records.iter().map(f).sum::<f64>() / n;
        let ssims: Vec<f64> = records.iter().map(|r| r.ssim).collect();
        let psnrs: Vec<f64> = records.iter().map(|r| r.psnr_db).collect();
        Self {
            stage,
            split,
            mean_ssim: mean(|r| r.ssim),
            mean_psnr: mean(|r| r.psnr_db),
            mean_l1: mean(|r| r.l1),
            ssim_hist: Histogram::new(&ssims, SSIM_RANGE, HIST_BINS),
            psnr_hist: Histogram::new(&psnrs, PSNR_RANGE, HIST_BINS),
            records,
        }
    }

    /// Per-record CSV; `#` lines carry the conventions and the means.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# stage={} split={} records={}",
            self.stage,
            self.split.name(),
            self.records.len()
        );
        let _ = writeln!(s, "# psnr: 8-bit renderings, peak 255, inf = exact match");
        let _ = writeln!(
            s,
            "# ssim: luminance 0.299/0.587/0.114, gaussian window 11x11 sigma 1.5, valid windows, peak 255"
        );
        let _ = writeln!(
            s,
            "# mean_ssim={} mean_psnr_db={} mean_l1={}",
            self.mean_ssim,
            fmt_db(self.mean_psnr),
            self.mean_l1
        );
        s.push_str("id,ssim,psnr_db,l1\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.id, r.ssim, fmt_db(r.psnr_db), r.l1);
        }
        s
    }

    /// Writes `out` plus `<stem>_ssim_hist.csv` and `<stem>_psnr_hist.csv`
    /// beside it (and PNG charts when `plots`). Returns every path written.
    pub fn write(&self, out: &Path, plots: bool) -> Result<Vec<PathBuf>> {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let sib = |suffix: &str| out.with_file_name(format!("{stem}_{suffix}"));
        let mut written = vec![out.to_path_buf()];
        std::fs::write(out, self.to_csv()).map_err(|e| Error::io(out, e))?;
        for (name, h) in [("ssim", &self.ssim_hist), ("psnr", &self.psnr_hist)] {
            let p = sib(&format!("{name}_hist.csv"));
            std::fs::write(&p, h.to_csv()).map_err(|e| Error::io(&p, e))?;
            written.push(p);
            if plots {
                let p = sib(&format!("{name}_hist.png"));
                h.to_png(&p)?;
                written.push(p);
            }
        }
        Ok(written)
    }
}

/// Which FOV drives the synthesis input during evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EvalFov {
    /// The classifier's prediction, as at inference.
    #[default]
    Predicted,
    /// The FOV recorded in the manifest.
    Recorded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub split: Split,
    pub stage: Stage,
    pub fov: EvalFov,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            stage: Stage::Large,
            fov: EvalFov::Predicted,
        }
    }
}

/// Score one prediction against its ground truth, both in `[0, 255]`.
pub fn score(id: &str, pred: &Image, gt: &Image) -> Result<RecordScore> {
    check_same(pred, gt)?;
    let l1 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum::<f64>()
        / pred.data().len() as f64
        / 127.5;
    Ok(RecordScore {
        id: id.to_string(),
        ssim: ssim(pred, gt)?,
        psnr_db: psnr(pred, gt, PEAK)?,
        l1,
    })
}

/// Run inference on every record of the split and score it against the
/// ground truth at `opts.stage`.
pub fn evaluate(ckpt: &StageCheckpoint, manifest: &DatasetManifest, opts: EvalOptions) -> Result<EvalReport> {
    if ckpt.stage < opts.stage {
        return Err(Error::Precondition(format!(
            "a {} checkpoint cannot be evaluated at the {} scale",
            ckpt.stage, opts.stage
        )));
    }
    let records = manifest.split(opts.split);
    if records.is_empty() {
        return Err(Error::Data(format!("the {} split is empty", opts.split.name())));
    }
    let pipe = Pipeline::from_checkpoint(ckpt, opts.stage)?;
    let scores = records
        .par_iter()
        .map(|r| {
            let views = manifest.load_views(r)?;
            let fov = match opts.fov {
                EvalFov::Predicted => None,
                EvalFov::Recorded => Some(r.fov_deg),
            };
            let out = pipe.run(&views, fov)?;
            let gt = manifest.load_gt(r, opts.stage)?;
            score(&r.id, out.panorama.image(), &gt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(opts.stage, opts.split, scores))
}
