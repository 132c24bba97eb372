//! Residual-MSE training with Adam and a warmup + cosine learning-rate schedule.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{add_noise, ImageTensor, NoiseKind, NoiseSpec};
use crate::model::{Model, StageBases};
use crate::neuralnet::{central_difference, GradCheckReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub warmup_fraction: f64,
    /// Gaussian noise std on the [0,1] scale used to synthesize inputs.
    pub sigma: f32,
    #[serde(default = "default_noise_kind")]
    pub noise_kind: NoiseKind,
    #[serde(default)]
    pub stamp_count: usize,
    pub seed: u64,
    pub patch_size: usize,
    /// Distance between patch corners; defaults to `patch_size`.
    #[serde(default)]
    pub patch_stride: Option<usize>,
    /// Optional cap on the number of training patches.
    #[serde(default)]
    pub max_patches: Option<usize>,
    /// Write a checkpoint every this many epochs (and always at the end).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_noise_kind() -> NoiseKind {
    NoiseKind::Gaussian
}

fn default_checkpoint_every() -> usize {
    5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 20,
            lr_init: 1e-4,
            lr_min: 1e-6,
            warmup_fraction: 0.05,
            sigma: 25.0 / 255.0,
            noise_kind: NoiseKind::Gaussian,
            stamp_count: 0,
            seed: 0,
            patch_size: 32,
            patch_stride: None,
            max_patches: None,
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!("need 0 < lr_min <= lr_init (got {} / {})", self.lr_min, self.lr_init));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction {} must lie in (0,1)", self.warmup_fraction));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be >= 0", self.sigma));
        }
        if self.patch_size == 0 || self.patch_stride == Some(0) || self.checkpoint_every == 0 {
            return bad("patch_size, patch_stride and checkpoint_every must be >= 1".into());
        }
        Ok(())
    }

    /// Noise model for one training sample.
    pub fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec { kind: self.noise_kind, sigma: self.sigma, stamp_count: self.stamp_count, ..NoiseSpec::gaussian(0.0, seed) }
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len / self.batch_size
    }
}

/// `mean((r - (y - x))^2)` over every element of every sample.
pub fn residual_loss(r: &[ImageTensor], y: &[ImageTensor], x: &[ImageTensor]) -> Result<f64> {
    if r.is_empty() || r.len() != y.len() || r.len() != x.len() {
        return Err(Error::ShapeMismatch(format!("batch sizes {}/{}/{}", r.len(), y.len(), x.len())));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((ri, yi), xi) in r.iter().zip(y).zip(x) {
        if ri.shape() != yi.shape() || yi.shape() != xi.shape() {
            return Err(Error::ShapeMismatch(format!("{:?}/{:?}/{:?}", ri.shape(), yi.shape(), xi.shape())));
        }
        sum += sample_loss_sum(ri.data(), yi.data(), xi.data());
        count += ri.data().len();
    }
    Ok(sum / count as f64)
}

fn sample_loss_sum(r: &[f32], y: &[f32], x: &[f32]) -> f64 {
    r.iter()
        .zip(y)
        .zip(x)
        .map(|((&r, &y), &x)| (f64::from(r) - (f64::from(y) - f64::from(x))).powi(2))
        .sum()
}

/// d loss / d r for one sample when the batch holds `total` elements.
fn sample_loss_grad(r: &[f32], y: &[f32], x: &[f32], total: usize) -> Vec<f32> {
    let scale = 2.0 / total as f64;
    r.iter()
        .zip(y)
        .zip(x)
        .map(|((&r, &y), &x)| (scale * (f64::from(r) - (f64::from(y) - f64::from(x)))) as f32)
        .collect()
}

/// Linear ramp `lr_min -> lr_init` over the first `ceil(warmup_fraction * total)`
/// steps, then cosine decay back to `lr_min` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let (lo, hi) = (cfg.lr_min, cfg.lr_init);
    let step = step.min(total_steps);
    let warmup = ((cfg.warmup_fraction * total_steps as f64).ceil() as usize).min(total_steps);
    if step < warmup {
        return lo + (hi - lo) * step as f64 / warmup as f64;
    }
    let decay = total_steps - warmup;
    if decay == 0 {
        return hi;
    }
    let progress = (step - warmup) as f64 / decay as f64;
    lo + 0.5 * (hi - lo) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub loss: f64,
}

pub fn loss_csv(losses: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,step,lr,loss\n");
    for l in losses {
        out.push_str(&format!("{},{},{:e},{:e}\n", l.epoch, l.step, l.lr, l.loss));
    }
    out
}

/// Owns the full training state: model, optimizer, RNG, counters.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    step: usize,
    losses: Vec<EpochLoss>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(model.params());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { model, cfg, adam, rng, epoch: 0, step: 0, losses: Vec::new() })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let model = ckpt.restore_model()?;
        let rng = ckpt.rng.restore()?;
        ckpt.train.validate()?;
        Ok(Self {
            model,
            cfg: ckpt.train,
            adam: ckpt.adam,
            rng,
            epoch: ckpt.epoch,
            step: ckpt.step,
            losses: ckpt.losses,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Raises the epoch budget, e.g. to continue a finished run.
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        if epochs == 0 {
            return Err(Error::ConfigInvalid("epochs must be >= 1".into()));
        }
        self.cfg.epochs = epochs;
        Ok(())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn losses(&self) -> &[EpochLoss] {
        &self.losses
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, &self.cfg, &self.adam, &self.rng, self.epoch, self.step, &self.losses)
    }

    fn check_dataset(&self, dataset: &[ImageTensor]) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.cfg.batch_size > dataset.len() {
            return Err(Error::BatchTooLarge { batch_size: self.cfg.batch_size, dataset_size: dataset.len() });
        }
        Ok(())
    }

    /// One pass over `dataset`: seeded shuffle, then `len / batch_size` full
    /// batches (the remainder is dropped), each with freshly drawn noise.
    pub fn run_epoch(&mut self, dataset: &[ImageTensor]) -> Result<EpochLoss> {
        self.check_dataset(dataset)?;
        let steps = self.cfg.steps_per_epoch(dataset.len());
        let total_steps = steps * self.cfg.epochs;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);

        let mut loss_sum = 0.0;
        let mut lr = self.cfg.lr_min;
        for batch in order.chunks_exact(self.cfg.batch_size) {
            let noise_seeds: Vec<u64> = batch.iter().map(|_| self.rng.next_u64()).collect();
            let total: usize = batch.iter().map(|&i| dataset[i].data().len()).sum();
            self.model.params_mut().zero_grad();
            let mut batch_loss = 0.0;
            for (&i, &seed) in batch.iter().zip(&noise_seeds) {
                let x = &dataset[i];
                let y = add_noise(x, &self.cfg.noise_spec(seed));
                let mut pass = self.model.forward_pass(&y, StageBases::Policy)?;
                let r = pass.tape.value(pass.output).to_vec();
                batch_loss += sample_loss_sum(&r, y.data(), x.data());
                let grad = sample_loss_grad(&r, y.data(), x.data(), total);
                pass.tape.backward(pass.output, &grad)?;
                pass.tape.accumulate_param_grads(self.model.params_mut());
            }
            let batch_loss = batch_loss / total as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NumericFault("training loss".into()));
            }
            lr = lr_at(self.step, total_steps, &self.cfg);
            adam_step(self.model.params_mut(), &mut self.adam, lr)?;
            self.step += 1;
            loss_sum += batch_loss;
        }
        self.model.params_mut().zero_grad();
        self.epoch += 1;
        let record = EpochLoss { epoch: self.epoch, step: self.step, lr, loss: loss_sum / steps as f64 };
        self.losses.push(record);
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<EpochLoss>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.wuc";
pub const LOSS_FILE: &str = "loss.csv";

fn write_artifacts(trainer: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&trainer.checkpoint(), dir.join(CHECKPOINT_FILE))?;
    let csv = dir.join(LOSS_FILE);
    fs::write(&csv, loss_csv(trainer.losses())).map_err(|e| Error::io(csv, e))
}

/// Trains until `cfg.epochs`, writing `checkpoint.wuc` and `loss.csv` to
/// `out_dir` every `checkpoint_every` epochs and at the end. On a numeric
/// fault the last written checkpoint is left in place.
pub fn train(model: Model, dataset: &[ImageTensor], cfg: TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    resume(Trainer::new(model, cfg)?, dataset, out_dir)
}

/// Continues a trainer (fresh or restored) to its epoch budget.
pub fn resume(mut trainer: Trainer, dataset: &[ImageTensor], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    trainer.check_dataset(dataset)?;
    while !trainer.is_finished() {
        trainer.run_epoch(dataset)?;
        let due = trainer.epoch.is_multiple_of(trainer.cfg.checkpoint_every) || trainer.is_finished();
        if let (Some(dir), true) = (out_dir, due) {
            write_artifacts(&trainer, dir)?;
        }
    }
    Ok(TrainOutcome { checkpoint: trainer.checkpoint(), losses: trainer.losses.clone() })
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}

/// Finite-difference check of d loss / d theta for the whole model.
///
/// PCA bases are recorded on an initial pass and then frozen, matching the
/// constant-basis treatment of the backward pass. Coordinates whose `+-eps`
/// probes change any ReLU activation are skipped: the loss is not
/// differentiable across that step and the difference quotient is meaningless.
pub fn model_gradient_check(model: &Model, y: &ImageTensor, x: &ImageTensor, eps: f32) -> Result<GradCheckReport> {
    let mut pass = model.forward_pass(y, StageBases::Policy)?;
    let bases = pass.bases.clone();
    let pattern = pass.tape.relu_pattern();
    let probe_loss = |m: &Model| -> Result<(f64, bool)> {
        let p = m.forward_pass(y, StageBases::Frozen(&bases))?;
        let r = p.tape.value(p.output);
        Ok((sample_loss_sum(r, y.data(), x.data()) / r.len() as f64, p.tape.relu_pattern() == pattern))
    };

    let mut analytic_model = model.clone();
    analytic_model.params_mut().zero_grad();
    let r = pass.tape.value(pass.output).to_vec();
    let grad = sample_loss_grad(&r, y.data(), x.data(), r.len());
    pass.tape.backward(pass.output, &grad)?;
    pass.tape.accumulate_param_grads(analytic_model.params_mut());

    let mut report = GradCheckReport::empty();
    let mut probe = model.clone();
    for (k, p) in analytic_model.params().iter().enumerate() {
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for i in 0..p.tensor.len() {
            let orig = p.tensor.value[i];
            let mut smooth = true;
            let d = central_difference(
                |v| {
                    probe.params_mut().iter_mut().nth(k).expect("same layout").tensor.value[i] = v;
                    let (loss, same) = probe_loss(&probe)?;
                    smooth &= same;
                    Ok(loss)
                },
                orig,
                eps,
            )?;
            if smooth {
                analytic.push(f64::from(p.tensor.grad[i]));
                numeric.push(d);
            } else {
                report.skipped += 1;
            }
        }
        report.record_tensor(&analytic, &numeric);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::transforms::FusionConfig;
    use rand::Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn loss_examples() {
        let x = random_image(1, 4, 4, 1);
        let y = random_image(1, 4, 4, 2);
        let r = ImageTensor::from_fn(1, 4, 4, |c, i, j| y.get(c, i, j) - x.get(c, i, j));
        assert!(residual_loss(&[r], std::slice::from_ref(&y), std::slice::from_ref(&x)).unwrap() < 1e-14);

        let zero = ImageTensor::zeros(1, 2, 2);
        let x0 = ImageTensor::filled(1, 2, 2, 0.3);
        let y0 = ImageTensor::filled(1, 2, 2, 0.5);
        assert!((residual_loss(std::slice::from_ref(&zero), &[y0], &[x0]).unwrap() - 0.04).abs() < 1e-7);
        assert!(matches!(residual_loss(std::slice::from_ref(&zero), std::slice::from_ref(&zero), &[x]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn loss_on_two_by_two_by_hand() {
        let r = ImageTensor::new(1, 2, 2, vec![0.1, -0.2, 0.0, 0.4]).unwrap();
        let y = ImageTensor::new(1, 2, 2, vec![0.5, 0.5, 0.2, 0.9]).unwrap();
        let x = ImageTensor::new(1, 2, 2, vec![0.4, 0.6, 0.3, 0.6]).unwrap();
        // residual targets y - x = [0.1, -0.1, -0.1, 0.3]; errors [0, -0.1, 0.1, 0.1]
        let expected = (0.0 + 0.01 + 0.01 + 0.01) / 4.0;
        assert!((residual_loss(&[r], &[y], &[x]).unwrap() - expected).abs() < 1e-8);
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        let total = 200;
        let warm = (0.05f64 * 200.0).ceil() as usize;
        assert_eq!(lr_at(0, total, &cfg), 1e-6);
        assert_eq!(lr_at(warm, total, &cfg), 1e-4);
        assert!((lr_at(total, total, &cfg) - 1e-6).abs() < 1e-18);
        for s in 0..=total {
            let lr = lr_at(s, total, &cfg);
            assert!((1e-6 - 1e-18..=1e-4 + 1e-18).contains(&lr));
        }
        // continuity at the junction
        let left = lr_at(warm - 1, total, &cfg);
        let right = lr_at(warm + 1, total, &cfg);
        assert!((left - 1e-4).abs() < 1e-5 && (right - 1e-4).abs() < 1e-6);
    }

    #[test]
    fn dataset_errors() {
        let model = Model::build(ModelConfig { base_channels: 2, depth: 1, ..Default::default() }).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..Default::default() };
        let data = vec![random_image(3, 8, 8, 0); 3];
        assert!(matches!(train(model.clone(), &[], cfg.clone(), None), Err(Error::EmptyDataset)));
        assert!(matches!(train(model, &data, cfg, None), Err(Error::BatchTooLarge { .. })));
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut model = Model::build(ModelConfig {
            in_channels: 3,
            base_channels: 2,
            depth: 1,
            fusion: FusionConfig::default(),
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        // live head, so every layer receives gradient
        crate::neuralnet::init_parameters(model.params_mut(), 5);
        let x = random_image(3, 8, 8, 6);
        let y = add_noise(&x, &NoiseSpec::gaussian(0.1, 7));
        let rep = model_gradient_check(&model, &y, &x, 1e-3).unwrap();
        assert!(rep.max_rel_err <= 5e-3, "{rep:?}");
        assert!(rep.skipped * 10 < rep.checked, "{rep:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { epochs: 2, batch_size: 2, lr_init: 1e-3, seed: 3, ..Default::default() };
        let mcfg = ModelConfig { base_channels: 2, depth: 1, ..Default::default() };
        let data: Vec<_> = (0..4).map(|s| random_image(3, 8, 8, s)).collect();
        let a = train(Model::build(mcfg.clone()).unwrap(), &data, cfg.clone(), None).unwrap();
        let b = train(Model::build(mcfg).unwrap(), &data, cfg, None).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.losses.len(), 2);
        assert_eq!(a.losses[1].step, 4);
    }
}
