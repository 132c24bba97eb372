use std::rc::Rc;

use super::{GradTensor, ParamId, ParameterSet};
use crate::error::{Error, Result};
use crate::transforms::{self, PcaBasis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, kernel: Var, bias: Var },
    Relu(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Scale(Var, f32),
    Dwt(Var),
    Idwt(Var),
    Pca(Var, Rc<PcaBasis>),
}

#[derive(Debug)]
struct Node {
    tensor: GradTensor,
    op: Op,
}

/// One recorded forward pass. Activations are `(C, H, W)`.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn chw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::ShapeMismatch(format!("{what}: expected (C,H,W), got {shape:?}"))),
    }
}

fn ensure_finite(values: &[f32], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFault(what.to_string()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, requires_grad: bool, op: Op, what: &str) -> Result<Var> {
        ensure_finite(&value, what)?;
        let n = value.len();
        self.nodes.push(Node {
            tensor: GradTensor { shape, value, grad: vec![0.0; n], requires_grad },
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Which ReLU inputs are active, across every ReLU node in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x.0].tensor.value),
                _ => None,
            })
            .flat_map(|v| v.iter().map(|&a| a > 0.0))
            .collect()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].tensor.value
    }

    pub fn grad(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].tensor.grad
    }

    pub fn tensor(&self, v: Var) -> &GradTensor {
        &self.nodes[v.0].tensor
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, shape: &[usize], value: Vec<f32>, requires_grad: bool) -> Result<Var> {
        let n: usize = shape.iter().product();
        if value.len() != n {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", value.len())));
        }
        self.push(shape.to_vec(), value, requires_grad, Op::Leaf, "leaf")
    }

    /// Copies a parameter's current value onto the tape.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Result<Var> {
        let p = params.get(id);
        let what = format!("parameter {}", p.name);
        self.push(p.tensor.shape.clone(), p.tensor.value.clone(), true, Op::Param(id), &what)
    }

    /// Same-padded, stride-1 cross-correlation with an odd square kernel
    /// of shape `(Cout, Cin, k, k)`, zero padding `k / 2`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (cin, h, w) = chw(self.shape(x), "conv2d input")?;
        let (cout, kcin, kh, kw) = match *self.shape(kernel) {
            [a, b, c, d] => (a, b, c, d),
            ref s => return Err(Error::ShapeMismatch(format!("conv2d kernel shape {s:?}"))),
        };
        if kcin != cin || kh != kw || kh % 2 == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d kernel {:?} incompatible with input {:?}",
                self.shape(kernel),
                self.shape(x)
            )));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::ShapeMismatch(format!("conv2d bias {:?}, expected [{cout}]", self.shape(bias))));
        }
        let mut out = vec![0.0f32; cout * h * w];
        conv_forward(self.value(x), self.value(kernel), self.value(bias), cin, cout, h, w, kh, &mut out);
        let rg = self.requires(x) || self.requires(kernel) || self.requires(bias);
        self.push(vec![cout, h, w], out, rg, Op::Conv2d { x, kernel, bias }, "conv2d")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push(shape, out, rg, Op::Relu(x), "relu")
    }

    /// `a`'s channels followed by `b`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = chw(self.shape(a), "concat lhs")?;
        let (cb, hb, wb) = chw(self.shape(b), "concat rhs")?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::ShapeMismatch(format!("concat spatial {ha}x{wa} vs {hb}x{wb}")));
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(self.value(a));
        out.extend_from_slice(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        self.push(vec![ca + cb, ha, wa], out, rg, Op::Concat(a, b), "concat")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!("add {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a) || self.requires(b);
        self.push(shape, out, rg, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push(shape, out, rg, Op::Scale(x, s), "scale")
    }

    /// Haar analysis: `(C,H,W)` -> `(4C,H/2,W/2)`.
    pub fn dwt(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "dwt input")?;
        transforms::check_even(h, w)?;
        let mut out = vec![0.0; c * h * w];
        transforms::haar_forward(self.value(x), c, h, w, &mut out);
        let rg = self.requires(x);
        self.push(vec![4 * c, h / 2, w / 2], out, rg, Op::Dwt(x), "dwt")
    }

    /// Haar synthesis: `(4C,h,w)` -> `(C,2h,2w)`.
    pub fn idwt(&mut self, s: Var) -> Result<Var> {
        let (c4, h, w) = chw(self.shape(s), "idwt input")?;
        if c4 % 4 != 0 {
            return Err(Error::DimMismatch(format!("idwt needs a multiple of 4 channels, got {c4}")));
        }
        let c = c4 / 4;
        let mut out = vec![0.0; c4 * h * w];
        transforms::haar_inverse(self.value(s), c, 2 * h, 2 * w, &mut out);
        let rg = self.requires(s);
        self.push(vec![c, 2 * h, 2 * w], out, rg, Op::Idwt(s), "idwt")
    }

    /// PCA projection of 2x2 blocks with a basis held constant for backward.
    pub fn pca(&mut self, x: Var, basis: Rc<PcaBasis>) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "pca input")?;
        transforms::check_even(h, w)?;
        if basis.dim != 4 * c {
            return Err(Error::DimMismatch(format!("basis dim {} for {c} channels", basis.dim)));
        }
        let mut out = vec![0.0; c * h * w];
        transforms::pca_project_raw(self.value(x), c, h, w, &basis, &mut out);
        let rg = self.requires(x);
        self.push(vec![4 * c, h / 2, w / 2], out, rg, Op::Pca(x, basis), "pca")
    }

    /// Seeds `output`'s gradient with `upstream` and propagates to every
    /// node that requires a gradient.
    pub fn backward(&mut self, output: Var, upstream: &[f32]) -> Result<()> {
        if upstream.len() != self.nodes[output.0].tensor.len() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient of length {} for output of length {}",
                upstream.len(),
                self.nodes[output.0].tensor.len()
            )));
        }
        for (g, u) in self.nodes[output.0].tensor.grad.iter_mut().zip(upstream) {
            *g += u;
        }
        for i in (0..=output.0).rev() {
            if !self.nodes[i].tensor.requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let gout = &node.tensor.grad;
            if gout.iter().all(|&g| g == 0.0) {
                continue;
            }
            match op {
                Op::Leaf | Op::Param(_) => {}
                Op::Relu(x) => {
                    let xn = &mut before[x.0].tensor;
                    for ((g, v), go) in xn.grad.iter_mut().zip(&xn.value).zip(gout) {
                        if *v > 0.0 {
                            *g += go;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let t = &mut before[v.0].tensor;
                        if t.requires_grad {
                            t.grad.iter_mut().zip(gout).for_each(|(g, go)| *g += go);
                        }
                    }
                }
                Op::Scale(x, s) => {
                    let t = &mut before[x.0].tensor;
                    t.grad.iter_mut().zip(gout).for_each(|(g, go)| *g += s * go);
                }
                Op::Concat(a, b) => {
                    let split = before[a.0].tensor.len();
                    let (ga, gb) = gout.split_at(split);
                    for (v, part) in [(a, ga), (b, gb)] {
                        let t = &mut before[v.0].tensor;
                        if t.requires_grad {
                            t.grad.iter_mut().zip(part).for_each(|(g, go)| *g += go);
                        }
                    }
                }
                Op::Dwt(x) => {
                    // orthonormal: adjoint of analysis is synthesis
                    let t = &mut before[x.0].tensor;
                    let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
                    let mut tmp = vec![0.0; t.len()];
                    transforms::haar_inverse(gout, c, h, w, &mut tmp);
                    t.grad.iter_mut().zip(tmp).for_each(|(g, d)| *g += d);
                }
                Op::Idwt(s) => {
                    let t = &mut before[s.0].tensor;
                    let (c, h, w) = (t.shape[0] / 4, 2 * t.shape[1], 2 * t.shape[2]);
                    let mut tmp = vec![0.0; t.len()];
                    transforms::haar_forward(gout, c, h, w, &mut tmp);
                    t.grad.iter_mut().zip(tmp).for_each(|(g, d)| *g += d);
                }
                Op::Pca(x, basis) => {
                    let t = &mut before[x.0].tensor;
                    let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
                    let mut tmp = vec![0.0; t.len()];
                    transforms::pca_adjoint_raw(gout, c, h, w, &basis, &mut tmp);
                    t.grad.iter_mut().zip(tmp).for_each(|(g, d)| *g += d);
                }
                Op::Conv2d { x, kernel, bias } => {
                    let (cin, h, w) = {
                        let s = &before[x.0].tensor.shape;
                        (s[0], s[1], s[2])
                    };
                    let (cout, k) = {
                        let s = &before[kernel.0].tensor.shape;
                        (s[0], s[2])
                    };
                    if before[bias.0].tensor.requires_grad {
                        let bg = &mut before[bias.0].tensor.grad;
                        for co in 0..cout {
                            bg[co] += gout[co * h * w..(co + 1) * h * w].iter().sum::<f32>();
                        }
                    }
                    if before[kernel.0].tensor.requires_grad {
                        let mut kg = std::mem::take(&mut before[kernel.0].tensor.grad);
                        conv_kernel_grad(&before[x.0].tensor.value, gout, cin, cout, h, w, k, &mut kg);
                        before[kernel.0].tensor.grad = kg;
                    }
                    if before[x.0].tensor.requires_grad {
                        let mut xg = std::mem::take(&mut before[x.0].tensor.grad);
                        conv_input_grad(&before[kernel.0].tensor.value, gout, cin, cout, h, w, k, &mut xg);
                        before[x.0].tensor.grad = xg;
                    }
                }
            }
        }
        for node in &self.nodes {
            if node.tensor.requires_grad {
                ensure_finite(&node.tensor.grad, "backward")?;
            }
        }
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into `params`.
    pub fn accumulate_param_grads(&self, params: &mut ParameterSet) {
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                let p = params.get_mut(id);
                p.tensor.grad.iter_mut().zip(&node.tensor.grad).for_each(|(g, d)| *g += d);
            }
        }
    }
}

/// Valid output range `[lo, hi)` along an axis of length `n` for tap offset `off`.
#[inline]
fn tap_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(x: &[f32], k: &[f32], b: &[f32], cin: usize, cout: usize, h: usize, w: usize, ks: usize, out: &mut [f32]) {
    let pad = (ks / 2) as isize;
    for co in 0..cout {
        let o = &mut out[co * h * w..(co + 1) * h * w];
        o.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..cin {
            let xi = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..ks {
                let dy = ky as isize - pad;
                let (ylo, yhi) = tap_range(h, dy);
                for kx in 0..ks {
                    let dx = kx as isize - pad;
                    let (xlo, xhi) = tap_range(w, dx);
                    let wt = k[((co * cin + ci) * ks + ky) * ks + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        let src = &xi[sy * w..(sy + 1) * w];
                        let dst = &mut o[y * w..(y + 1) * w];
                        let sx0 = (xlo as isize + dx) as usize;
                        for (d, s) in dst[xlo..xhi].iter_mut().zip(&src[sx0..sx0 + (xhi - xlo)]) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_kernel_grad(x: &[f32], gout: &[f32], cin: usize, cout: usize, h: usize, w: usize, ks: usize, kg: &mut [f32]) {
    let pad = (ks / 2) as isize;
    for co in 0..cout {
        let go = &gout[co * h * w..(co + 1) * h * w];
        for ci in 0..cin {
            let xi = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..ks {
                let dy = ky as isize - pad;
                let (ylo, yhi) = tap_range(h, dy);
                for kx in 0..ks {
                    let dx = kx as isize - pad;
                    let (xlo, xhi) = tap_range(w, dx);
                    let mut acc = 0.0f32;
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (xlo as isize + dx) as usize;
                        let src = &xi[sy * w + sx0..sy * w + sx0 + (xhi - xlo)];
                        let g = &go[y * w + xlo..y * w + xhi];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f32>();
                    }
                    kg[((co * cin + ci) * ks + ky) * ks + kx] += acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_input_grad(k: &[f32], gout: &[f32], cin: usize, cout: usize, h: usize, w: usize, ks: usize, xg: &mut [f32]) {
    let pad = (ks / 2) as isize;
    for co in 0..cout {
        let go = &gout[co * h * w..(co + 1) * h * w];
        for ci in 0..cin {
            let gi = &mut xg[ci * h * w..(ci + 1) * h * w];
            for ky in 0..ks {
                let dy = ky as isize - pad;
                let (ylo, yhi) = tap_range(h, dy);
                for kx in 0..ks {
                    let dx = kx as isize - pad;
                    let (xlo, xhi) = tap_range(w, dx);
                    let wt = k[((co * cin + ci) * ks + ky) * ks + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (xlo as isize + dx) as usize;
                        let dst = &mut gi[sy * w + sx0..sy * w + sx0 + (xhi - xlo)];
                        for (d, g) in dst.iter_mut().zip(&go[y * w + xlo..y * w + xhi]) {
                            *d += wt * g;
                        }
                    }
                }
            }
        }
    }
}
