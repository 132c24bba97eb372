//! The encoder/decoder denoiser.
//!
//! Encoder stage `i` runs two 3x3 conv + ReLU at width `c_i`, keeps the result
//! as a skip connection, downsamples with `alpha * DWT + beta * PCA`
//! (`c_i -> 4 c_i` channels, half resolution) and reduces to `c_{i+1} = 2 c_i`
//! with a 1x1 conv. The bottleneck is two 3x3 conv + ReLU. Decoder stage `i`
//! expands to `4 c_i` with a 1x1 conv, applies the inverse DWT (`4 c_i -> c_i`,
//! double resolution), concatenates the skip and runs two 3x3 conv + ReLU
//! back to `c_i`. A final linear 3x3 conv predicts the residual noise map.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{pad_reflect_edges, ImageTensor};
use crate::neuralnet::{init_parameters, ParamId, ParamKind, ParameterSet, Tape, Var};
use crate::transforms::{self, FusionConfig, PcaBasis};

/// How each encoder stage obtains the basis of its PCA branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BasisPolicy {
    /// Fit to the stage's own input feature map at every forward pass.
    #[default]
    PerInput,
    /// One basis per stage, fitted once over a sample set (see [`Model::fit_global_bases`]).
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub fusion: FusionConfig,
    pub seed: u64,
    #[serde(default)]
    pub basis_policy: BasisPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 16,
            depth: 2,
            fusion: FusionConfig::default(),
            seed: 0,
            basis_policy: BasisPolicy::PerInput,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(Error::ConfigInvalid(format!(
                "in_channels, base_channels and depth must be >= 1 (got {}, {}, {})",
                self.in_channels, self.base_channels, self.depth
            )));
        }
        if self.depth > 8 {
            return Err(Error::ConfigInvalid(format!("depth {} is unreasonably deep", self.depth)));
        }
        self.fusion.validate()
    }

    /// Spatial dims must be divisible by this.
    pub fn granularity(&self) -> usize {
        1 << self.depth
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_channels << stage
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    kernel: ParamId,
    bias: ParamId,
}

impl Conv {
    fn register(p: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(Self {
            kernel: p.register(&format!("{name}.kernel"), ParamKind::Kernel, &[cout, cin, k, k])?,
            bias: p.register(&format!("{name}.bias"), ParamKind::Bias, &[cout])?,
        })
    }

    fn apply(&self, tape: &mut Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let k = tape.param(params, self.kernel)?;
        let b = tape.param(params, self.bias)?;
        tape.conv2d(x, k, b)
    }

    fn apply_relu(&self, tape: &mut Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let y = self.apply(tape, params, x)?;
        tape.relu(y)
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    conv_a: Conv,
    conv_b: Conv,
    reduce: Conv,
}

#[derive(Debug, Clone)]
struct Decoder {
    expand: Conv,
    conv_a: Conv,
    conv_b: Conv,
}

/// Predicted noise map, same shape as the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap(pub ImageTensor);

/// Which PCA bases to use for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum StageBases<'a> {
    /// Follow the model's [`BasisPolicy`].
    Policy,
    /// Reuse bases recorded from an earlier pass (one per encoder stage).
    Frozen(&'a [Rc<PcaBasis>]),
    /// Drop the PCA branch entirely: pure wavelet downsampling.
    Disabled,
}

/// A recorded forward pass, ready for backward.
#[derive(Debug)]
pub struct ForwardPass {
    pub tape: Tape,
    pub input: Var,
    pub output: Var,
    /// Basis used at each encoder stage (empty when the PCA branch is off).
    pub bases: Vec<Rc<PcaBasis>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParameterSet,
    encoders: Vec<Encoder>,
    bottleneck: (Conv, Conv),
    decoders: Vec<Decoder>,
    head: Conv,
    global_bases: Option<Vec<PcaBasis>>,
}

impl Model {
    /// Registers all layers and He-initializes them from `cfg.seed`, except:
    /// the head kernel starts at zero (the untrained model is the identity
    /// denoiser), and the first conv's bias is set to `-0.5 * sum(kernel)` so
    /// its pre-activations are centered for mid-gray input.
    pub fn build(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut p = ParameterSet::new();
        let mut encoders = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let c = cfg.stage_width(i);
            let cin = if i == 0 { cfg.in_channels } else { c };
            encoders.push(Encoder {
                conv_a: Conv::register(&mut p, &format!("enc{i}.conv_a"), cin, c, 3)?,
                conv_b: Conv::register(&mut p, &format!("enc{i}.conv_b"), c, c, 3)?,
                reduce: Conv::register(&mut p, &format!("enc{i}.reduce"), 4 * c, 2 * c, 1)?,
            });
        }
        let cb = cfg.stage_width(cfg.depth);
        let bottleneck = (
            Conv::register(&mut p, "mid.conv_a", cb, cb, 3)?,
            Conv::register(&mut p, "mid.conv_b", cb, cb, 3)?,
        );
        let mut decoders = Vec::with_capacity(cfg.depth);
        for i in (0..cfg.depth).rev() {
            let c = cfg.stage_width(i);
            decoders.push(Decoder {
                expand: Conv::register(&mut p, &format!("dec{i}.expand"), 2 * c, 4 * c, 1)?,
                conv_a: Conv::register(&mut p, &format!("dec{i}.conv_a"), 2 * c, c, 3)?,
                conv_b: Conv::register(&mut p, &format!("dec{i}.conv_b"), c, c, 3)?,
            });
        }
        let head = Conv::register(&mut p, "head", cfg.base_channels, cfg.in_channels, 3)?;
        init_parameters(&mut p, cfg.seed);
        p.get_mut(head.kernel).tensor.value.fill(0.0);
        let first = &encoders[0].conv_a;
        let k = p.get(first.kernel).tensor.value.clone();
        let per_out = k.len() / cfg.stage_width(0);
        for (b, taps) in p.get_mut(first.bias).tensor.value.iter_mut().zip(k.chunks(per_out)) {
            *b = -0.5 * taps.iter().sum::<f32>();
        }
        Ok(Self { cfg, params: p, encoders, bottleneck, decoders, head, global_bases: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn fusion(&self) -> FusionConfig {
        self.cfg.fusion
    }

    /// Changes the branch weights without touching the learned parameters.
    pub fn set_fusion(&mut self, fusion: FusionConfig) -> Result<()> {
        fusion.validate()?;
        self.cfg.fusion = fusion;
        Ok(())
    }

    pub fn global_bases(&self) -> Option<&[PcaBasis]> {
        self.global_bases.as_deref()
    }

    pub fn set_global_bases(&mut self, bases: Option<Vec<PcaBasis>>) -> Result<()> {
        if let Some(b) = &bases {
            if b.len() != self.cfg.depth {
                return Err(Error::ConfigInvalid(format!("{} global bases for depth {}", b.len(), self.cfg.depth)));
            }
            for (i, basis) in b.iter().enumerate() {
                let d = 4 * self.cfg.stage_width(i);
                if basis.dim != d || basis.rank != d {
                    return Err(Error::DimMismatch(format!("stage {i} basis must be full rank {d}")));
                }
            }
        }
        self.global_bases = bases;
        Ok(())
    }

    /// Fits one basis per encoder stage over the pooled 2x2 blocks of every
    /// sample's stage input, for the [`BasisPolicy::Global`] policy.
    pub fn fit_global_bases(&mut self, samples: &[ImageTensor]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.global_bases = Some(Vec::with_capacity(self.cfg.depth));
        for stage in 0..self.cfg.depth {
            let mut pooled = Vec::new();
            for s in samples {
                let mut tape = Tape::new();
                let x = tape.leaf(&[s.channels(), s.height(), s.width()], s.data().to_vec(), false)?;
                let mut stage_inputs = Vec::new();
                self.encode(&mut tape, x, StageBases::Policy, &mut Vec::new(), Some((stage, &mut stage_inputs)))?;
                let v = stage_inputs[stage];
                let sh = tape.shape(v).to_vec();
                pooled.extend(transforms::patch_vectors_raw(tape.value(v), sh[0], sh[1], sh[2]));
            }
            let d = 4 * self.cfg.stage_width(stage);
            let basis = transforms::fit_pca(&pooled, d, d);
            match basis {
                Ok(b) => self.global_bases.as_mut().expect("set above").push(b),
                Err(e) => {
                    self.global_bases = None;
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, y: &ImageTensor) -> Result<()> {
        let (c, h, w) = y.shape();
        let g = self.cfg.granularity();
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!("model expects {} channels, got {c}", self.cfg.in_channels)));
        }
        if h == 0 || w == 0 || h % g != 0 || w % g != 0 {
            return Err(Error::ShapeMismatch(format!("input {h}x{w} not divisible by {g}")));
        }
        Ok(())
    }

    fn downsample(&self, tape: &mut Tape, stage: usize, x: Var, bases: StageBases<'_>, used: &mut Vec<Rc<PcaBasis>>) -> Result<Var> {
        let FusionConfig { alpha, beta } = self.cfg.fusion;
        let mut acc = None;
        if alpha != 0.0 {
            let d = tape.dwt(x)?;
            acc = Some(if alpha == 1.0 { d } else { tape.scale(d, alpha)? });
        }
        let pca_on = beta != 0.0 && !matches!(bases, StageBases::Disabled);
        if pca_on {
            let basis = match bases {
                StageBases::Frozen(b) => b
                    .get(stage)
                    .cloned()
                    .ok_or_else(|| Error::ConfigInvalid(format!("no frozen basis for stage {stage}")))?,
                _ => match (self.cfg.basis_policy, &self.global_bases) {
                    (BasisPolicy::Global, Some(g)) => Rc::new(g[stage].clone()),
                    (BasisPolicy::Global, None) => {
                        return Err(Error::ConfigInvalid("global basis policy but no bases fitted".into()))
                    }
                    (BasisPolicy::PerInput, _) => {
                        let sh = tape.shape(x).to_vec();
                        Rc::new(transforms::fit_patch_basis_raw(tape.value(x), sh[0], sh[1], sh[2]))
                    }
                },
            };
            used.push(basis.clone());
            let p = tape.pca(x, basis)?;
            let p = if beta == 1.0 { p } else { tape.scale(p, beta)? };
            acc = Some(match acc {
                Some(d) => tape.add(d, p)?,
                None => p,
            });
        }
        match acc {
            Some(v) => Ok(v),
            None => {
                let d = tape.dwt(x)?;
                tape.scale(d, 0.0)
            }
        }
    }

    /// Runs the encoder; returns the skips (stage order) and the bottleneck input.
    /// With `probe = Some((stop, inputs))` the inputs of the downsampling
    /// stages are collected and the run halts right after stage `stop`'s convs.
    fn encode(
        &self,
        tape: &mut Tape,
        mut x: Var,
        bases: StageBases<'_>,
        used: &mut Vec<Rc<PcaBasis>>,
        mut probe: Option<(usize, &mut Vec<Var>)>,
    ) -> Result<(Vec<Var>, Var)> {
        let mut skips = Vec::with_capacity(self.encoders.len());
        for (i, enc) in self.encoders.iter().enumerate() {
            x = enc.conv_a.apply_relu(tape, &self.params, x)?;
            x = enc.conv_b.apply_relu(tape, &self.params, x)?;
            skips.push(x);
            if let Some((stop, inputs)) = probe.as_mut() {
                inputs.push(x);
                if i == *stop {
                    break;
                }
            }
            let down = self.downsample(tape, i, x, bases, used)?;
            x = enc.reduce.apply(tape, &self.params, down)?;
        }
        Ok((skips, x))
    }

    /// Records a forward pass of `y` on a fresh tape.
    pub fn forward_pass(&self, y: &ImageTensor, bases: StageBases<'_>) -> Result<ForwardPass> {
        self.check_input(y)?;
        let mut tape = Tape::new();
        let input = tape.leaf(&[y.channels(), y.height(), y.width()], y.data().to_vec(), false)?;
        let mut used = Vec::new();
        let (skips, mut x) = self.encode(&mut tape, input, bases, &mut used, None)?;
        x = self.bottleneck.0.apply_relu(&mut tape, &self.params, x)?;
        x = self.bottleneck.1.apply_relu(&mut tape, &self.params, x)?;
        for (dec, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            let e = dec.expand.apply(&mut tape, &self.params, x)?;
            let up = tape.idwt(e)?;
            let cat = tape.concat_channels(up, *skip)?;
            x = dec.conv_a.apply_relu(&mut tape, &self.params, cat)?;
            x = dec.conv_b.apply_relu(&mut tape, &self.params, x)?;
        }
        let output = self.head.apply(&mut tape, &self.params, x)?;
        Ok(ForwardPass { tape, input, output, bases: used })
    }

    /// Predicted noise map for an input whose dims are multiples of `2^depth`.
    pub fn forward(&self, y: &ImageTensor) -> Result<ResidualMap> {
        let pass = self.forward_pass(y, StageBases::Policy)?;
        let out = pass.tape.value(pass.output).to_vec();
        Ok(ResidualMap(ImageTensor::new(y.channels(), y.height(), y.width(), out)?))
    }

    /// `clamp(y - forward(y), 0, 1)` for any input size: odd sizes are
    /// reflect-padded to a multiple of `2^depth` and cropped back. Grayscale
    /// inputs to an RGB model are replicated in and averaged back out.
    pub fn denoise(&self, y: &ImageTensor) -> Result<ImageTensor> {
        let (c, h, w) = y.shape();
        let g = self.cfg.granularity();
        if h < g || w < g {
            return Err(Error::ShapeMismatch(format!("input {h}x{w} smaller than {g}x{g}")));
        }
        let promoted = y.to_channels(self.cfg.in_channels)?;
        let (ph, pw) = (h.div_ceil(g) * g - h, w.div_ceil(g) * g - w);
        let (top, left) = (ph / 2, pw / 2);
        let padded = pad_reflect_edges(&promoted, top, ph - top, left, pw - left)?;
        let residual = self.forward(&padded)?.0;
        let mut clean = padded;
        for (v, r) in clean.data_mut().iter_mut().zip(residual.data()) {
            *v -= r;
        }
        clean.crop(top, left, h, w)?.clamped().to_channels(c)
    }
}
