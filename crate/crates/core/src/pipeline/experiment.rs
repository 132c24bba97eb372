use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::baseline::baseline_wavelet_threshold;
use super::dataset::{hash_images, ingest, split_indices, training_patches};
use super::synth::{generate, SyntheticKind};
use crate::error::{Error, Result};
use crate::imagecore::{add_noise, save_image, ImageTensor, NoiseKind, NoiseSpec};
use crate::metrics::{evaluate_set, MetricsConfig, MetricsReport};
use crate::model::{BasisPolicy, Model, ModelConfig};
use crate::training::{load_checkpoint, loss_csv, save_checkpoint, train, TrainConfig, CHECKPOINT_VERSION};
use crate::transforms::FusionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Image files in a directory; relative paths resolve against the spec file.
    Directory { path: PathBuf },
    Synthetic { kind: SyntheticKind, count: usize, size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub source: DatasetSource,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_val_fraction() -> f64 {
    0.25
}

fn default_presets() -> Vec<FusionConfig> {
    FusionConfig::PRESETS.to_vec()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub datasets: Vec<DatasetSpec>,
    /// Degradation used for training and evaluation.
    pub noise: NoiseSpec,
    #[serde(default = "default_presets")]
    pub presets: Vec<FusionConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Architecture; its `fusion` is replaced by each preset in turn.
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default = "yes")]
    pub triptychs: bool,
}

impl ExperimentSpec {
    /// Reads a JSON spec; relative dataset directories resolve against the
    /// spec file's own directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec =
            serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut spec.datasets {
            if let DatasetSource::Directory { path } = &mut d.source {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::ConfigInvalid("experiment lists no datasets".into()));
        }
        if self.presets.is_empty() {
            return Err(Error::ConfigInvalid("experiment needs at least one fusion preset".into()));
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ConfigInvalid("dataset names must be unique".into()));
        }
        for p in &self.presets {
            p.validate()?;
        }
        self.noise.validate()?;
        self.metrics.validate()?;
        self.training_config().validate()?;
        ModelConfig { fusion: self.presets[0], ..self.model.clone() }.validate()
    }

    /// `train` with its noise fields taken from `noise`.
    pub fn training_config(&self) -> TrainConfig {
        TrainConfig {
            sigma: self.noise.sigma,
            noise_kind: self.noise.kind,
            stamp_count: self.noise.stamp_count,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Noisy,
    Baseline,
    Model(FusionKey),
}

/// Bit pattern of a preset, so methods can be compared and hashed exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionKey(u32, u32);

impl From<FusionConfig> for FusionKey {
    fn from(f: FusionConfig) -> Self {
        FusionKey(f.alpha.to_bits(), f.beta.to_bits())
    }
}

impl FusionKey {
    pub fn fusion(self) -> FusionConfig {
        FusionConfig { alpha: f32::from_bits(self.0), beta: f32::from_bits(self.1) }
    }
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Method::Noisy => "noisy".into(),
            Method::Baseline => "wavelet-soft-threshold".into(),
            Method::Model(k) => {
                let f = k.fusion();
                format!("unet-a{}-b{}", f.alpha, f.beta)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: Method,
    pub metrics: MetricsReport,
}

impl ReportRow {
    pub fn fusion(&self) -> Option<FusionConfig> {
        match self.method {
            Method::Model(k) => Some(k.fusion()),
            _ => None,
        }
    }

    pub fn csv_line(&self) -> String {
        let (a, b) = match self.fusion() {
            Some(f) => (f.alpha.to_string(), f.beta.to_string()),
            None => (String::new(), String::new()),
        };
        let psnr = match self.metrics.mean_psnr {
            Some(p) => format!("{p:.4}"),
            None => "inf".into(),
        };
        format!("{},{a},{b},{},{psnr},{:.6}", self.dataset, self.method.name(), self.metrics.mean_ssim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub noise: NoiseSpec,
    pub val_counts: Vec<(String, usize)>,
}

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";

fn describe_noise(n: &NoiseSpec) -> String {
    let kind = match n.kind {
        NoiseKind::Gaussian => "gaussian",
        NoiseKind::StampOverlay => "stamp-overlay",
        NoiseKind::Composite => "composite",
    };
    let mut s = format!("{kind}, sigma = {:.4} ({:.1}/255)", n.sigma, n.sigma * 255.0);
    if n.kind != NoiseKind::Gaussian {
        let _ = write!(s, ", stamps = {}, stamp alpha = {}", n.stamp_count, n.stamp_alpha);
    }
    let _ = write!(s, ", seed = {}", n.seed);
    s
}

impl ExperimentReport {
    /// `dataset,alpha,beta,method,psnr_db,ssim`; alpha/beta blank for non-model rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,alpha,beta,method,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    /// One line per (dataset, preset) with a `PSNR/SSIM` cell per method.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Denoising report\n\n");
        let _ = writeln!(out, "Noise: {}.\n", describe_noise(&self.noise));
        out.push_str("Cells are mean PSNR (dB) / mean SSIM over each dataset's validation split. ");
        out.push_str("The noisy and wavelet columns do not depend on the preset and repeat on every line.\n\n");
        for (name, n) in &self.val_counts {
            let _ = writeln!(out, "- {name}: {n} validation image(s)");
        }
        out.push_str("\n| Dataset | α/β | Noisy (PSNR/SSIM) | Wavelet soft-threshold (PSNR/SSIM) | U-Net DWT+PCA (PSNR/SSIM) |\n");
        out.push_str("|---|---|---|---|---|\n");
        for (name, _) in &self.val_counts {
            let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| &r.dataset == name).collect();
            let cell = |m: Method| {
                rows.iter().find(|r| r.method == m).map(|r| r.metrics.cell()).unwrap_or_default()
            };
            let (noisy, base) = (cell(Method::Noisy), cell(Method::Baseline));
            for (i, r) in rows.iter().filter(|r| r.fusion().is_some()).enumerate() {
                let shown = if i == 0 { name.as_str() } else { "" };
                let label = r.fusion().map(|f| f.label()).unwrap_or_default();
                let _ = writeln!(out, "| {shown} | {label} | {noisy} | {base} | {} |", r.metrics.cell());
            }
        }
        out
    }
}

/// Train and validation images of one dataset, plus the hash that keys the cache.
struct LoadedDataset {
    train: Vec<ImageTensor>,
    val: Vec<(String, ImageTensor)>,
    key: String,
}

fn load_dataset(d: &DatasetSpec, channels: usize) -> Result<LoadedDataset> {
    let (images, content_hash) = match &d.source {
        DatasetSource::Directory { path } => {
            let m = ingest(path)?;
            let all: Vec<usize> = (0..m.files.len()).collect();
            (m.load(&all, channels)?, m.hash)
        }
        DatasetSource::Synthetic { kind, count, size, seed } => {
            let imgs: Vec<(String, ImageTensor)> = generate(*kind, *count, *size, *seed)
                .into_iter()
                .map(|(n, img)| Ok((n, img.to_channels(channels)?)))
                .collect::<Result<_>>()?;
            let h = hash_images(&imgs);
            (imgs, h)
        }
    };
    let (train_idx, val_idx) = split_indices(images.len(), d.val_fraction, d.split_seed)?;
    let key = format!("{content_hash}:{}:{}", d.val_fraction, d.split_seed);
    Ok(LoadedDataset {
        train: train_idx.iter().map(|&i| images[i].1.clone()).collect(),
        val: val_idx.iter().map(|&i| images[i].clone()).collect(),
        key,
    })
}

/// Cache key over everything that influences the trained parameters.
/// `checkpoint_every` only schedules writes, so it is left out.
pub fn cache_key(train: &TrainConfig, model: &ModelConfig, noise: &NoiseSpec, dataset_key: &str) -> String {
    let train = TrainConfig { checkpoint_every: 1, ..train.clone() };
    let payload = serde_json::json!({
        "format": CHECKPOINT_VERSION,
        "train": train,
        "model": model,
        "noise": noise,
        "dataset": dataset_key,
    });
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}

/// Trains `model_cfg` on patches of `train_images`, or reuses the cached
/// checkpoint for the same key under `cache_dir`.
fn trained_model(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_images: &[ImageTensor],
    key: &str,
    cache_dir: &Path,
) -> Result<Model> {
    let path = cache_dir.join(format!("{key}.wuc"));
    if path.is_file() {
        if let Ok(ckpt) = load_checkpoint(&path) {
            return ckpt.restore_model();
        }
    }
    let stride = cfg.patch_stride.unwrap_or(cfg.patch_size);
    let patches = training_patches(train_images, cfg.patch_size, stride, cfg.max_patches, cfg.seed)?;
    let mut model = Model::build(model_cfg.clone())?;
    if model_cfg.basis_policy == BasisPolicy::Global {
        model.fit_global_bases(&patches)?;
    }
    let outcome = train(model, &patches, cfg.clone(), None)?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    save_checkpoint(&outcome.checkpoint, &path)?;
    let curve = cache_dir.join(format!("{key}.loss.csv"));
    fs::write(&curve, loss_csv(&outcome.losses)).map_err(|e| Error::io(curve, e))?;
    outcome.checkpoint.restore_model()
}

fn write_triptychs(
    dir: &Path,
    method: Method,
    clean: &[(String, ImageTensor)],
    noisy: &[ImageTensor],
    out: &[ImageTensor],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (((name, x), y), d) in clean.iter().zip(noisy).zip(out) {
        let strip = ImageTensor::hstack(&[x, y, d])?;
        save_image(&strip, dir.join(format!("{name}_{}.png", method.name())))?;
    }
    Ok(())
}

/// Runs every dataset x preset, writing `report.csv`, `report.md`, trained
/// checkpoints under `cache/` and clean|noisy|denoised strips under
/// `triptychs/<dataset>/`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cache_dir = out_dir.join("cache");
    let train_cfg = spec.training_config();
    let channels = spec.model.in_channels;

    let mut rows = Vec::new();
    let mut val_counts = Vec::new();
    for d in &spec.datasets {
        let data = load_dataset(d, channels)?;
        let noisy: Vec<ImageTensor> = data
            .val
            .iter()
            .enumerate()
            .map(|(i, (_, x))| add_noise(x, &spec.noise.with_seed(spec.noise.seed.wrapping_add(i as u64))))
            .collect();
        let trip_dir = out_dir.join("triptychs").join(&d.name);

        let mut score = |method: Method, outputs: Vec<ImageTensor>| -> Result<()> {
            let triples: Vec<(String, ImageTensor, ImageTensor)> =
                data.val.iter().zip(&outputs).map(|((n, x), o)| (n.clone(), x.clone(), o.clone())).collect();
            let metrics = evaluate_set(&triples, &spec.metrics)?;
            if spec.triptychs {
                write_triptychs(&trip_dir, method, &data.val, &noisy, &outputs)?;
            }
            rows.push(ReportRow { dataset: d.name.clone(), method, metrics });
            Ok(())
        };

        score(Method::Noisy, noisy.clone())?;
        score(Method::Baseline, noisy.iter().map(|y| baseline_wavelet_threshold(y, spec.noise.sigma)).collect())?;
        for &fusion in &spec.presets {
            let model_cfg = ModelConfig { fusion, ..spec.model.clone() };
            let key = cache_key(&train_cfg, &model_cfg, &spec.noise, &data.key);
            let model = trained_model(&model_cfg, &train_cfg, &data.train, &key, &cache_dir)?;
            let outputs = noisy.iter().map(|y| model.denoise(y)).collect::<Result<Vec<_>>>()?;
            score(Method::Model(fusion.into()), outputs)?;
        }
        val_counts.push((d.name.clone(), data.val.len()));
    }

    let report = ExperimentReport { rows, noise: spec.noise.clone(), val_counts };
    let csv = out_dir.join(REPORT_CSV);
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(csv, e))?;
    let md = out_dir.join(REPORT_MD);
    fs::write(&md, report.to_markdown()).map_err(|e| Error::io(md, e))?;
    Ok(report)
}

pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_MD: &str = "eval.md";

/// Scores `model` on every image in `dir` degraded by `noise` (image `i`
/// uses seed `noise.seed + i`). Writes `eval.csv` (one row per image) and
/// `eval.md` to `report_dir`.
pub fn evaluate_directory(
    model: &Model,
    dir: impl AsRef<Path>,
    noise: &NoiseSpec,
    metrics: &MetricsConfig,
    report_dir: impl AsRef<Path>,
) -> Result<MetricsReport> {
    noise.validate()?;
    let manifest = ingest(dir)?;
    let all: Vec<usize> = (0..manifest.files.len()).collect();
    let images = manifest.load(&all, model.config().in_channels)?;
    let triples = images
        .into_iter()
        .enumerate()
        .map(|(i, (name, x))| {
            let y = add_noise(&x, &noise.with_seed(noise.seed.wrapping_add(i as u64)));
            Ok((name, x, model.denoise(&y)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_set(&triples, metrics)?;
    let report_dir = report_dir.as_ref();
    fs::create_dir_all(report_dir).map_err(|e| Error::io(report_dir, e))?;
    let csv = report_dir.join(EVAL_CSV);
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(csv, e))?;
    let md = report_dir.join(EVAL_MD);
    let body = format!("Noise: {}.\n\n{}", describe_noise(noise), report.to_markdown());
    fs::write(&md, body).map_err(|e| Error::io(md, e))?;
    Ok(report)
}
