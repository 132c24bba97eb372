//! `wavunet` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or corrupt inputs), 3 numeric fault during training or
//! inference, 4 selftest failure. Result lines go to stdout as
//! `key=value` pairs; diagnostics go to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{add_noise, load_image, save_image, ImageTensor, NoiseSpec};
use crate::metrics::{psnr, psnr_from_mse, ssim, MetricsConfig};
use crate::model::{BasisPolicy, Model, ModelConfig};
use crate::neuralnet::{check_gradients, init_parameters, op_gradient_suite, GradTensor};
use crate::pipeline::synth::{generate, SyntheticKind};
use crate::pipeline::{evaluate_directory, ingest, run_experiment, split, training_patches, ExperimentSpec, EVAL_CSV};
use crate::training::{
    checkpoint_path, load_checkpoint, model_gradient_check, resume, Checkpoint, TrainConfig, Trainer, LOSS_FILE,
};
use crate::transforms::{dwt2, fit_pca, idwt2, patch_vectors, pca_project, pca_reconstruct, HH};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

/// Environment variable naming a selftest check to sabotage (`dwt`, `pca`,
/// `gradcheck` or `metrics`). For testing the failure path only.
pub const INJECT_ENV: &str = "SELFTEST_INJECT";

#[derive(Debug, Parser)]
#[command(name = "wavunet", version, about = "U-Net denoiser with fused wavelet + PCA downsampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a directory of images; writes checkpoint.wuc and loss.csv.
    Train(TrainArgs),
    /// Denoise one image with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Score a checkpoint on every image of a directory.
    Eval(EvalArgs),
    /// Run a JSON experiment spec and write the comparison report.
    Report(ReportArgs),
    /// Run the fast invariant suite.
    Selftest,
    /// Write procedurally generated images to a directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    beta: Option<f32>,
    /// Training noise std on the [0,1] scale.
    #[arg(long)]
    sigma: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Seeds model init, batching, noise and the train/val split.
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `section.key = value` file (sections: train, model, data).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from `<out>/checkpoint.wuc` when it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Clean image to score the output against.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Gaussian noise std on the [0,1] scale. Required: there is no implied test level.
    #[arg(long)]
    sigma: f32,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKindArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SynthKindArg {
    Gradient,
    Scenes,
    SynthSignature,
}

impl From<SynthKindArg> for SyntheticKind {
    fn from(k: SynthKindArg) -> Self {
        match k {
            SynthKindArg::Gradient => SyntheticKind::Gradient,
            SynthKindArg::Scenes => SyntheticKind::Scenes,
            SynthKindArg::SynthSignature => SyntheticKind::SynthSignature,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid(_) => EXIT_USAGE,
        Error::NumericFault(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Denoise(a) => cmd_denoise(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Selftest => {
            let inject = std::env::var(INJECT_ENV).ok().filter(|s| !s.is_empty());
            return if selftest(inject.as_deref()) { 0 } else { EXIT_SELFTEST };
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Everything `train` needs besides paths.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { train: TrainConfig::default(), model: ModelConfig::default(), val_fraction: 0.25, split_seed: 0 }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {value:?}")))
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::ConfigInvalid(format!("{key}: unknown value {value:?}")))
}

impl TrainSettings {
    /// Applies one `section.key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, m) = (&mut self.train, &mut self.model);
        match key {
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.epochs" => t.epochs = parse_value(key, value)?,
            "train.lr_init" => t.lr_init = parse_value(key, value)?,
            "train.lr_min" => t.lr_min = parse_value(key, value)?,
            "train.warmup_fraction" => t.warmup_fraction = parse_value(key, value)?,
            "train.sigma" => t.sigma = parse_value(key, value)?,
            "train.noise_kind" => t.noise_kind = parse_enum(key, value)?,
            "train.stamp_count" => t.stamp_count = parse_value(key, value)?,
            "train.seed" => t.seed = parse_value(key, value)?,
            "train.patch_size" => t.patch_size = parse_value(key, value)?,
            "train.patch_stride" => t.patch_stride = Some(parse_value(key, value)?),
            "train.max_patches" => t.max_patches = Some(parse_value(key, value)?),
            "train.checkpoint_every" => t.checkpoint_every = parse_value(key, value)?,
            "model.in_channels" => m.in_channels = parse_value(key, value)?,
            "model.base_channels" => m.base_channels = parse_value(key, value)?,
            "model.depth" => m.depth = parse_value(key, value)?,
            "model.alpha" => m.fusion.alpha = parse_value(key, value)?,
            "model.beta" => m.fusion.beta = parse_value(key, value)?,
            "model.seed" => m.seed = parse_value(key, value)?,
            "model.basis_policy" => m.basis_policy = parse_enum::<BasisPolicy>(key, value)?,
            "data.val_fraction" => self.val_fraction = parse_value(key, value)?,
            "data.split_seed" => self.split_seed = parse_value(key, value)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Overlays a config file: one `section.key = value` per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::ConfigInvalid(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            seen.push(key);
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::ConfigInvalid(format!("data.val_fraction {} must lie in (0,1)", self.val_fraction)));
        }
        Ok(())
    }
}

fn train_settings(a: &TrainArgs) -> Result<TrainSettings> {
    let mut s = TrainSettings::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ConfigInvalid(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        s.apply_text(&text)?;
    }
    if let Some(v) = a.alpha {
        s.model.fusion.alpha = v;
    }
    if let Some(v) = a.beta {
        s.model.fusion.beta = v;
    }
    if let Some(v) = a.sigma {
        s.train.sigma = v;
    }
    if let Some(v) = a.epochs {
        s.train.epochs = v;
    }
    if let Some(v) = a.seed {
        s.train.seed = v;
        s.model.seed = v;
        s.split_seed = v;
    }
    s.validate()?;
    Ok(s)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let s = train_settings(a)?;
    let manifest = split(&ingest(&a.data)?, s.val_fraction, s.split_seed)?;
    eprintln!(
        "{} images: {} train / {} val (dataset {})",
        manifest.files.len(),
        manifest.train.len(),
        manifest.val.len(),
        &manifest.hash[..12]
    );
    let images: Vec<ImageTensor> =
        manifest.load(&manifest.train, s.model.in_channels)?.into_iter().map(|(_, img)| img).collect();
    let stride = s.train.patch_stride.unwrap_or(s.train.patch_size);
    let patches = training_patches(&images, s.train.patch_size, stride, s.train.max_patches, s.train.seed)?;
    eprintln!("{} training patches of {}x{}", patches.len(), s.train.patch_size, s.train.patch_size);

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let split_file = a.out.join("split.json");
    let split_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&split_file, split_json).map_err(|e| Error::io(&split_file, e))?;

    let ckpt_file = checkpoint_path(&a.out);
    let trainer = if a.resume && ckpt_file.is_file() {
        let ckpt = load_checkpoint(&ckpt_file)?;
        let same_run = ckpt.model == s.model && TrainConfig { epochs: s.train.epochs, ..ckpt.train.clone() } == s.train;
        if !same_run {
            return Err(Error::ConfigInvalid(format!(
                "{} was written with a different configuration; only the epoch count may change on resume",
                ckpt_file.display()
            )));
        }
        eprintln!("resuming from epoch {}", ckpt.epoch);
        let mut t = Trainer::from_checkpoint(ckpt)?;
        t.set_epochs(s.train.epochs)?;
        t
    } else {
        let mut model = Model::build(s.model.clone())?;
        if s.model.basis_policy == BasisPolicy::Global {
            model.fit_global_bases(&patches)?;
        }
        Trainer::new(model, s.train.clone())?
    };
    let outcome = resume(trainer, &patches, Some(&a.out))?;
    for l in &outcome.losses {
        println!("epoch={} step={} lr={:e} loss={:.8}", l.epoch, l.step, l.lr, l.loss);
    }
    println!("checkpoint={}", ckpt_file.display());
    println!("losses={}", a.out.join(LOSS_FILE).display());
    Ok(())
}

/// Canonical form of a possibly not-yet-existing path.
fn resolved(path: &Path) -> PathBuf {
    if let Ok(p) = path.canonicalize() {
        return p;
    }
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    match (parent.canonicalize(), path.file_name()) {
        (Ok(dir), Some(name)) => dir.join(name),
        _ => path.to_path_buf(),
    }
}

fn restore(path: &Path) -> Result<Model> {
    let ckpt: Checkpoint = load_checkpoint(path)?;
    ckpt.restore_model()
}

fn cmd_denoise(a: &DenoiseArgs) -> Result<()> {
    let out = resolved(&a.out);
    if out == resolved(&a.input) {
        return Err(Error::ConfigInvalid("--out must not overwrite --in".into()));
    }
    if a.reference.as_deref().is_some_and(|r| resolved(r) == out) {
        return Err(Error::ConfigInvalid("--out must not overwrite --reference".into()));
    }
    let model = restore(&a.model)?;
    let channels = model.config().in_channels;
    let noisy = load_image(&a.input)?;
    let y = noisy.to_channels(channels)?;
    let reference = a.reference.as_ref().map(|r| load_image(r)?.to_channels(channels)).transpose()?;
    let d = model.denoise(&y)?;
    // keep grayscale inputs grayscale even for an RGB model
    let written = if noisy.channels() == 1 && channels == 3 { d.to_channels(1)? } else { d.clone() };
    save_image(&written, &a.out)?;
    println!("output={}", a.out.display());
    if let Some(x) = reference {
        let cfg = MetricsConfig::default();
        println!("psnr_db={} ssim={:.6}", psnr(&x, &d, &cfg)?, ssim(&x, &d, &cfg)?);
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = restore(&a.model)?;
    let noise = NoiseSpec::gaussian(a.sigma, a.seed);
    let report = evaluate_directory(&model, &a.data, &noise, &MetricsConfig::default(), &a.report)?;
    let mean = report.mean_psnr.map_or("inf".to_string(), |p| format!("{p:.4}"));
    println!("images={} mean_psnr_db={mean} mean_ssim={:.6}", report.rows.len(), report.mean_ssim);
    println!("csv={}", a.report.join(EVAL_CSV).display());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let spec = ExperimentSpec::load(&a.spec).map_err(|e| match e {
        Error::MissingFile(p) => Error::ConfigInvalid(format!("spec file {} not found", p.display())),
        other => other,
    })?;
    let report = run_experiment(&spec, &a.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.count == 0 || a.size < 2 {
        return Err(Error::ConfigInvalid("--count must be >= 1 and --size >= 2".into()));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (name, img) in generate(a.kind.into(), a.count, a.size, a.seed) {
        let path = a.out.join(format!("{name}.png"));
        save_image(&img, &path)?;
        println!("wrote={}", path.display());
    }
    Ok(())
}

/// One selftest measurement: pass iff `value <= bound`.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }
}

fn random_image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0))
}

/// Runs every invariant check. `inject` names a check to perturb.
pub fn selftest_checks(inject: Option<&str>) -> Result<Vec<Check>> {
    let hit = |name: &str| inject == Some(name);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut checks = Vec::new();

    let (mut err, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = random_image(3, 64, 64, &mut rng);
        let mut s = dwt2(&x)?;
        if hit("dwt") {
            s.band_mut(0, HH)[0] += 1e-2;
        }
        let e_x: f64 = x.data().iter().map(|&v| f64::from(v).powi(2)).sum();
        let e_s: f64 = s.data().iter().map(|&v| f64::from(v).powi(2)).sum();
        energy = energy.max((e_s - e_x).abs() / e_x);
        let back = idwt2(&s);
        err = back.data().iter().zip(x.data()).fold(err, |m, (a, b)| m.max(f64::from((a - b).abs())));
    }
    checks.push(Check { name: "dwt_round_trip", value: err, bound: 1e-6 });
    checks.push(Check { name: "dwt_energy", value: energy, bound: 1e-5 });

    let x = random_image(3, 16, 16, &mut rng);
    let vectors = patch_vectors(&x)?;
    let mut basis = fit_pca(&vectors, 12, 12)?;
    if hit("pca") {
        basis.basis[0] += 1e-2;
    }
    checks.push(Check { name: "pca_orthonormality", value: basis.orthonormality_error(), bound: 1e-5 });
    let back = pca_reconstruct(&pca_project(&x, &basis)?, &basis)?;
    let rec = back.data().iter().zip(x.data()).fold(0.0f64, |m, (a, b)| m.max(f64::from((a - b).abs())));
    checks.push(Check { name: "pca_reconstruction", value: rec, bound: 1e-5 });
    let axis = fit_pca(&[1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0, 0.0], 2, 1)?;
    checks.push(Check { name: "pca_sqrt10", value: (axis.singular_values[0] - 10f64.sqrt()).abs(), bound: 1e-6 });

    let mut op_err = op_gradient_suite(0)?.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
    if hit("gradcheck") {
        // probes that straddle the ReLU kink disagree with the analytic slope
        let at_kink = GradTensor::from_vec(&[1, 2, 2], vec![1e-4, -1e-4, 2e-4, -2e-4], true)?;
        let rep = check_gradients(&[at_kink], 1e-3, 0, |t, v| t.relu(v[0]))?;
        op_err = op_err.max(rep.max_rel_err);
    }
    let mut model = Model::build(ModelConfig { base_channels: 2, depth: 1, seed: 5, ..Default::default() })?;
    init_parameters(model.params_mut(), 5);
    let x = random_image(3, 8, 8, &mut rng);
    let y = add_noise(&x, &NoiseSpec::gaussian(0.1, 7));
    let e2e = model_gradient_check(&model, &y, &x, 1e-3)?;
    checks.push(Check { name: "gradcheck_ops", value: op_err, bound: 1e-3 });
    checks.push(Check { name: "gradcheck_model", value: e2e.max_rel_err, bound: 5e-3 });

    let max_i = if hit("metrics") { 2.0 } else { 1.0 };
    let p = psnr_from_mse(0.01, max_i).finite().unwrap_or(f64::INFINITY);
    checks.push(Check { name: "psnr_20db", value: (p - 20.0).abs(), bound: 1e-12 });
    let img = random_image(3, 32, 32, &mut rng);
    checks.push(Check { name: "ssim_self", value: (ssim(&img, &img, &MetricsConfig::default())? - 1.0).abs(), bound: 1e-9 });
    let (zero, one) = (ImageTensor::filled(1, 16, 16, 0.0), ImageTensor::filled(1, 16, 16, 1.0));
    let s01 = ssim(&zero, &one, &MetricsConfig::global())?;
    checks.push(Check { name: "ssim_constants", value: (s01 - 1e-4 / 1.0001).abs(), bound: 1e-9 });
    Ok(checks)
}

/// Prints a PASS/FAIL table to stdout and returns whether all checks passed.
pub fn selftest(inject: Option<&str>) -> bool {
    if let Some(name) = inject {
        eprintln!("fault injected into: {name}");
    }
    let start = Instant::now();
    let checks = match selftest_checks(inject) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: selftest aborted: {e}");
            return false;
        }
    };
    println!("{:<20} {:<6} {:>12} {:>10}", "check", "status", "value", "bound");
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{:<20} {status:<6} {:>12.3e} {:>10.1e}", c.name, c.value, c.bound);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("summary passed={} failed={failed} seconds={:.2}", checks.len() - failed, start.elapsed().as_secs_f64());
    failed == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::NoiseKind;
    use crate::transforms::FusionConfig;

    #[test]
    fn config_overlay_and_unknown_keys() {
        let mut s = TrainSettings::default();
        s.apply_text("# comment\ntrain.epochs = 3\nmodel.alpha=0.7 # trailing\n\nmodel.basis_policy = global\n")
            .unwrap();
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.model.fusion.alpha, 0.7);
        assert_eq!(s.model.basis_policy, BasisPolicy::Global);
        assert!(matches!(s.apply_text("train.epoch = 3"), Err(Error::ConfigInvalid(_))));
        assert!(matches!(s.apply_text("train.epochs = many"), Err(Error::ConfigInvalid(_))));
        assert!(matches!(s.apply_text("train.epochs"), Err(Error::ConfigInvalid(_))));
        assert!(matches!(s.apply_text("data.split_seed=1\ndata.split_seed=2"), Err(Error::ConfigInvalid(_))));
        s.apply_text("train.noise_kind = stamp-overlay").unwrap();
        assert_eq!(s.train.noise_kind, NoiseKind::StampOverlay);
    }

    #[test]
    fn defaults_use_equal_weights() {
        assert_eq!(TrainSettings::default().model.fusion, FusionConfig::new(1.0, 1.0));
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::ConfigInvalid(String::new())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::NumericFault(String::new())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::ChecksumMismatch), EXIT_DATA);
        assert_eq!(exit_code(&Error::VersionMismatch { found: 2, expected: 1 }), EXIT_DATA);
    }

    #[test]
    fn selftest_passes_and_each_injection_fails() {
        assert!(selftest_checks(None).unwrap().iter().all(Check::passed));
        for (fault, check) in
            [("dwt", "dwt_round_trip"), ("pca", "pca_orthonormality"), ("gradcheck", "gradcheck_ops"), ("metrics", "psnr_20db")]
        {
            let checks = selftest_checks(Some(fault)).unwrap();
            let c = checks.iter().find(|c| c.name == check).unwrap();
            assert!(!c.passed(), "{fault}: {c:?}");
        }
    }
}
