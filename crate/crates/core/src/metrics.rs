//! MSE, PSNR and SSIM, plus per-image / aggregate reports.
//!
//! Colour images: MSE (and so PSNR) averages the squared error over all
//! channels; SSIM is computed per channel and averaged.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SsimMode {
    /// Gaussian-weighted local windows, averaged over all valid centers.
    #[default]
    Windowed,
    /// One window covering the whole channel.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub max_i: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub ssim_mode: SsimMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { max_i: 1.0, ssim_window: 11, ssim_sigma: 1.5, k1: 0.01, k2: 0.03, ssim_mode: SsimMode::Windowed }
    }
}

impl MetricsConfig {
    pub fn global() -> Self {
        Self { ssim_mode: SsimMode::Global, ..Self::default() }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.max_i).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.max_i).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_i > 0.0 && self.max_i.is_finite()) {
            return Err(Error::ConfigInvalid(format!("max_i {} must be > 0", self.max_i)));
        }
        if self.ssim_window == 0 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::ConfigInvalid(format!("SSIM window {} must be odd", self.ssim_window)));
        }
        if self.ssim_sigma.is_nan() || self.ssim_sigma <= 0.0 {
            return Err(Error::ConfigInvalid("SSIM sigma must be > 0".into()));
        }
        Ok(())
    }
}

fn same_shape(x: &ImageTensor, y: &ImageTensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Mean squared difference over every channel and pixel.
pub fn mse(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    same_shape(x, y)?;
    let n = x.data().len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = x.data().iter().zip(y.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum();
    Ok(sum / n as f64)
}

/// PSNR in dB; identical images have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

pub fn psnr_from_mse(mse: f64, max_i: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (max_i * max_i / mse).log10())
    }
}

pub fn psnr(x: &ImageTensor, y: &ImageTensor, cfg: &MetricsConfig) -> Result<Psnr> {
    cfg.validate()?;
    Ok(psnr_from_mse(mse(x, y)?, cfg.max_i))
}

/// First and second moments of one SSIM window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimWindowStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    pub sigma_xy: f64,
}

impl SsimWindowStats {
    /// Builds stats from raw moments `E[x], E[y], E[x^2], E[y^2], E[xy]`.
    pub fn from_moments(ex: f64, ey: f64, exx: f64, eyy: f64, exy: f64) -> Self {
        // tiny negative variances are rounding residue
        Self {
            mu_x: ex,
            mu_y: ey,
            sigma_x2: (exx - ex * ex).max(0.0),
            sigma_y2: (eyy - ey * ey).max(0.0),
            sigma_xy: exy - ex * ey,
        }
    }

    pub fn ssim(&self, c1: f64, c2: f64) -> f64 {
        let num = (2.0 * self.mu_x * self.mu_y + c1) * (2.0 * self.sigma_xy + c2);
        let den = (self.mu_x * self.mu_x + self.mu_y * self.mu_y + c1) * (self.sigma_x2 + self.sigma_y2 + c2);
        (num / den).min(1.0)
    }
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let mut taps: Vec<f64> = (0..window).map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" filtering of an `h x w` plane.
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

fn channel_ssim(x: &[f32], y: &[f32], h: usize, w: usize, cfg: &MetricsConfig) -> f64 {
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let xs: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let ys: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    match cfg.ssim_mode {
        SsimMode::Global => {
            let n = xs.len() as f64;
            let mean = |f: &dyn Fn(usize) -> f64| (0..xs.len()).map(f).sum::<f64>() / n;
            SsimWindowStats::from_moments(
                mean(&|i| xs[i]),
                mean(&|i| ys[i]),
                mean(&|i| xs[i] * xs[i]),
                mean(&|i| ys[i] * ys[i]),
                mean(&|i| xs[i] * ys[i]),
            )
            .ssim(c1, c2)
        }
        SsimMode::Windowed => {
            let taps = gaussian_taps(cfg.ssim_window, cfg.ssim_sigma);
            let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
            let ex = filter_valid(&xs, h, w, &taps);
            let ey = filter_valid(&ys, h, w, &taps);
            let exx = filter_valid(&sq(&xs, &xs), h, w, &taps);
            let eyy = filter_valid(&sq(&ys, &ys), h, w, &taps);
            let exy = filter_valid(&sq(&xs, &ys), h, w, &taps);
            let total: f64 = (0..ex.len())
                .map(|i| SsimWindowStats::from_moments(ex[i], ey[i], exx[i], eyy[i], exy[i]).ssim(c1, c2))
                .sum();
            total / ex.len() as f64
        }
    }
}

/// Mean SSIM over channels.
pub fn ssim(x: &ImageTensor, y: &ImageTensor, cfg: &MetricsConfig) -> Result<f64> {
    same_shape(x, y)?;
    cfg.validate()?;
    let (c, h, w) = x.shape();
    if h * w == 0 {
        return Err(Error::EmptyInput);
    }
    if cfg.ssim_mode == SsimMode::Windowed && h.min(w) < cfg.ssim_window {
        return Err(Error::ImageTooSmall { height: h, width: w, window: cfg.ssim_window });
    }
    let total: f64 = (0..c).map(|ch| channel_ssim(x.channel(ch), y.channel(ch), h, w, cfg)).sum();
    Ok(total / c as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Per-image rows plus arithmetic-mean aggregates. The PSNR mean skips
/// infinite entries and counts them separately.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ImageMetrics>,
    pub mean_psnr: Option<f64>,
    pub infinite_psnr: usize,
    pub mean_ssim: f64,
}

/// Formats a `PSNR/SSIM` table cell, e.g. `33.13/0.9005`.
pub fn table_cell(psnr: Option<f64>, ssim: f64) -> String {
    match psnr {
        Some(p) => format!("{p:.2}/{ssim:.4}"),
        None => format!("inf/{ssim:.4}"),
    }
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ImageMetrics>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        let finite: Vec<f64> = rows.iter().filter_map(|r| r.psnr.finite()).collect();
        let mean_psnr = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
        Ok(Self { infinite_psnr: rows.len() - finite.len(), rows, mean_psnr, mean_ssim })
    }

    /// `image,psnr_db,ssim` with one line per image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6}\n", r.image, r.psnr, r.ssim));
        }
        out
    }

    pub fn cell(&self) -> String {
        table_cell(self.mean_psnr, self.mean_ssim)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Image | PSNR/SSIM |\n|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!("| {} | {} |\n", r.image, table_cell(r.psnr.finite(), r.ssim)));
        }
        out.push_str(&format!("| **mean** | {} |\n", self.cell()));
        if self.infinite_psnr > 0 {
            out.push_str(&format!("\n{} image(s) with infinite PSNR excluded from the PSNR mean.\n", self.infinite_psnr));
        }
        out
    }
}

/// Scores `(name, reference, degraded)` triples.
pub fn evaluate_set(pairs: &[(String, ImageTensor, ImageTensor)], cfg: &MetricsConfig) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = pairs
        .iter()
        .map(|(name, clean, degraded)| {
            Ok(ImageMetrics {
                image: name.clone(),
                psnr: psnr(clean, degraded, cfg)?,
                ssim: ssim(clean, degraded, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(rows)
}
