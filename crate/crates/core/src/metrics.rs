//! PSNR and SSIM, per frame and aggregated over a sequence.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tomo::inscribed_circle_mask;

/// Gaussian-window SSIM parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    /// Odd window side.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

fn check_pair(x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::dims("image pair", format!("{:?}", y.dim()), format!("{:?}", x.dim())));
    }
    Ok(())
}

/// `10 log10(max_val^2 / MSE)` over pixels where `mask` is true (all when `None`).
///
/// Identical images give `f64::INFINITY`.
pub fn psnr_masked(x: &Array2<f64>, x_star: &Array2<f64>, max_val: f64, mask: Option<&Array2<bool>>) -> Result<f64> {
    check_pair(x, x_star)?;
    if !(max_val > 0.0) {
        return Err(Error::invalid(format!("max_val must be > 0, got {max_val}")));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((idx, &a), &b) in x.indexed_iter().zip(x_star.iter()) {
        if mask.is_none_or(|m| m[idx]) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("mask selects no pixels"));
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (max_val * max_val / mse).log10() })
}

pub fn psnr(x: &Array2<f64>, x_star: &Array2<f64>, max_val: f64) -> Result<f64> {
    psnr_masked(x, x_star, max_val, None)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect()
}

/// Mean SSIM over pixels selected by `mask`.
///
/// Window statistics are weighted Gaussian moments renormalised over the
/// window taps that fall inside the image and inside the mask, so borders and
/// masked-out pixels are never read.
pub fn ssim_masked(
    x: &Array2<f64>,
    x_star: &Array2<f64>,
    max_val: f64,
    cfg: &SsimConfig,
    mask: Option<&Array2<bool>>,
) -> Result<f64> {
    check_pair(x, x_star)?;
    if cfg.window % 2 == 0 || cfg.window == 0 {
        return Err(Error::invalid(format!("SSIM window must be odd, got {}", cfg.window)));
    }
    if !(max_val > 0.0) || !(cfg.sigma > 0.0) {
        return Err(Error::invalid("max_val and sigma must be > 0"));
    }
    let c1 = (cfg.k1 * max_val).powi(2);
    let c2 = (cfg.k2 * max_val).powi(2);
    let g = gaussian_window(cfg.window, cfg.sigma);
    let r = (cfg.window / 2) as isize;
    let (h, w) = x.dim();
    let inside = |i: isize, j: isize| {
        i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w && mask.is_none_or(|m| m[[i as usize, j as usize]])
    };
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..h as isize {
        for j in 0..w as isize {
            if !inside(i, j) {
                continue;
            }
            let (mut sw, mut mx, mut my) = (0.0, 0.0, 0.0);
            for di in -r..=r {
                for dj in -r..=r {
                    if inside(i + di, j + dj) {
                        let wt = g[(di + r) as usize] * g[(dj + r) as usize];
                        let p = [(i + di) as usize, (j + dj) as usize];
                        sw += wt;
                        mx += wt * x[p];
                        my += wt * x_star[p];
                    }
                }
            }
            mx /= sw;
            my /= sw;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for di in -r..=r {
                for dj in -r..=r {
                    if inside(i + di, j + dj) {
                        let wt = g[(di + r) as usize] * g[(dj + r) as usize] / sw;
                        let p = [(i + di) as usize, (j + dj) as usize];
                        let (a, b) = (x[p] - mx, x_star[p] - my);
                        vx += wt * a * a;
                        vy += wt * b * b;
                        cxy += wt * a * b;
                    }
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("mask selects no pixels"));
    }
    Ok(total / count as f64)
}

pub fn ssim(x: &Array2<f64>, x_star: &Array2<f64>, max_val: f64, cfg: &SsimConfig) -> Result<f64> {
    ssim_masked(x, x_star, max_val, cfg, None)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    #[default]
    Full,
    /// Inscribed circle of the image.
    Circle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_frame: Vec<FrameMetrics>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub mask: MaskMode,
    pub max_val: f64,
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 || !mean.is_finite() {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Dynamic range (max - min) over every frame of a sequence.
pub fn dynamic_range(frames: &[Array2<f64>]) -> f64 {
    let (lo, hi) = frames
        .iter()
        .flat_map(|f| f.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Scores each reconstructed frame against its ground truth.
///
/// The peak value is the dynamic range of the whole ground-truth sequence.
pub fn evaluate_sequence(recon: &[Array2<f64>], truth: &[Array2<f64>], mode: MaskMode, ssim_cfg: &SsimConfig) -> Result<MetricReport> {
    if recon.len() != truth.len() || recon.is_empty() {
        return Err(Error::dims("frame count", truth.len(), recon.len()));
    }
    let mut max_val = dynamic_range(truth);
    if !(max_val > 0.0) {
        max_val = 1.0;
    }
    let mask = match mode {
        MaskMode::Full => None,
        MaskMode::Circle => {
            let (h, w) = truth[0].dim();
            Some(inscribed_circle_mask(h, w))
        }
    };
    let per_frame = recon
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            Ok(FrameMetrics {
                psnr: psnr_masked(r, t, max_val, mask.as_ref())?,
                ssim: ssim_masked(r, t, max_val, ssim_cfg, mask.as_ref())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (psnr_mean, psnr_std) = mean_std(&per_frame.iter().map(|m| m.psnr).collect::<Vec<_>>());
    let (ssim_mean, ssim_std) = mean_std(&per_frame.iter().map(|m| m.ssim).collect::<Vec<_>>());
    Ok(MetricReport {
        per_frame,
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        mask: mode,
        max_val,
    })
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Writes one row per frame followed by `mean` and `std` rows.
pub fn write_report_csv(path: &Path, method: &str, report: &MetricReport) -> Result<()> {
    let io_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut wr = csv::Writer::from_path(path).map_err(io_err)?;
    wr.write_record(["method", "frame", "psnr_db", "ssim"]).map_err(io_err)?;
    for (t, m) in report.per_frame.iter().enumerate() {
        wr.write_record([method, &t.to_string(), &fmt_value(m.psnr), &fmt_value(m.ssim)])
            .map_err(io_err)?;
    }
    wr.write_record([method, "mean", &fmt_value(report.psnr_mean), &fmt_value(report.ssim_mean)])
        .map_err(io_err)?;
    wr.write_record([method, "std", &fmt_value(report.psnr_std), &fmt_value(report.ssim_std)])
        .map_err(io_err)?;
    wr.flush().map_err(|e| Error::io(path, e))
}
