//! Central finite-difference gradient checking.
//!
//! The scalar probed is `L = sum_i w_i * out_i` with fixed random weights
//! `w`, evaluated in `f64` from the `f32` forward values. The analytic side is
//! a single backward pass seeded with `w`.
//!
//! Relative error is measured per checked tensor as
//! `||a - n||_2 / max(||a||_2, ||n||_2)`. With `f32` forward values and
//! `eps = 1e-3` the difference quotient carries ~1e-4 absolute noise from
//! output rounding, which an elementwise ratio would blow up on entries whose
//! true gradient is near zero.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradTensor, Tape, Var};
use crate::error::Result;
use crate::transforms::fit_pca;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-tensor norm-wise relative error.
    pub max_rel_err: f64,
    /// Largest elementwise absolute error.
    pub max_abs_err: f64,
    pub checked: usize,
    /// Coordinates left out because the function is not smooth there.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn empty() -> Self {
        Self { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0, skipped: 0 }
    }

    /// Folds in the comparison of one tensor's analytic and numeric gradients.
    pub fn record_tensor(&mut self, analytic: &[f64], numeric: &[f64]) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
        let scale = norm(analytic).max(norm(numeric));
        let rel = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        self.max_rel_err = self.max_rel_err.max(rel);
        self.max_abs_err = diff.iter().fold(self.max_abs_err, |m, d| m.max(d.abs()));
        self.checked += analytic.len();
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Random probe weights for an output of `len` elements.
pub fn probe_weights(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn weighted_sum(values: &[f32], weights: &[f32]) -> f64 {
    values.iter().zip(weights).map(|(&v, &w)| f64::from(v) * f64::from(w)).sum()
}

/// `(f(v + eps) - f(v - eps)) / step`, where `step` is the f32 step actually
/// taken. `f` is left evaluated at `v` on return.
pub fn central_difference<F>(mut f: F, v: f32, eps: f32) -> Result<f64>
where
    F: FnMut(f32) -> Result<f64>,
{
    let (up, down) = (v + eps, v - eps);
    let plus = f(up)?;
    let minus = f(down)?;
    f(v)?;
    Ok((plus - minus) / (f64::from(up) - f64::from(down)))
}

/// Checks `build`'s gradient w.r.t. every element of every input with
/// `requires_grad` set.
pub fn check_gradients<F>(inputs: &[GradTensor], eps: f32, seed: u64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let run = |ins: &[GradTensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = ins
            .iter()
            .map(|t| tape.leaf(&t.shape, t.value.clone(), t.requires_grad))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = run(inputs)?;
    let weights = probe_weights(tape.value(out).len(), seed);
    tape.backward(out, &weights)?;

    let mut report = GradCheckReport::empty();
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        if !input.requires_grad {
            continue;
        }
        let analytic: Vec<f64> = tape.grad(vars[k]).iter().map(|&g| f64::from(g)).collect();
        let mut numeric = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let orig = probe[k].value[i];
            let (up, down) = (orig + eps, orig - eps);
            probe[k].value[i] = up;
            let (t_plus, _, o_plus) = run(&probe)?;
            probe[k].value[i] = down;
            let (t_minus, _, o_minus) = run(&probe)?;
            probe[k].value[i] = orig;
            // divide by the step actually taken in f32
            numeric.push(
                (weighted_sum(t_plus.value(o_plus), &weights) - weighted_sum(t_minus.value(o_minus), &weights))
                    / (f64::from(up) - f64::from(down)),
            );
        }
        report.record_tensor(&analytic, &numeric);
    }
    Ok(report)
}

fn uniform(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: &[usize], seed: u64) -> GradTensor {
    let n = shape.iter().product();
    GradTensor::from_vec(shape, uniform(n, seed), true).expect("shape matches length")
}

/// Gradient checks (`eps = 1e-3`) of every differentiable op on small random
/// instances. ReLU inputs are pushed at least 0.05 away from the kink.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let s = seed.wrapping_mul(100);
    let eps = 1e-3;
    let mut out = Vec::new();
    for (name, ks) in [("conv2d_3x3", 3usize), ("conv2d_1x1", 1)] {
        let inputs = [tensor(&[3, 6, 5], s + 10), tensor(&[4, 3, ks, ks], s + 11), tensor(&[4], s + 12)];
        out.push((name, check_gradients(&inputs, eps, s + 1, |t, v| t.conv2d(v[0], v[1], v[2]))?));
    }
    let xs: Vec<f32> = uniform(4 * 8 * 8, s + 13).into_iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { v }).collect();
    let relu_in = [GradTensor::from_vec(&[4, 8, 8], xs, true)?];
    out.push(("relu", check_gradients(&relu_in, eps, s + 2, |t, v| t.relu(v[0]))?));

    let pair = [tensor(&[2, 4, 4], s + 14), tensor(&[2, 4, 4], s + 15)];
    out.push(("concat", check_gradients(&pair, eps, s + 3, |t, v| t.concat_channels(v[0], v[1]))?));
    out.push(("add", check_gradients(&pair, eps, s + 4, |t, v| t.add(v[0], v[1]))?));
    out.push(("scale", check_gradients(&pair[..1], eps, s + 5, |t, v| t.scale(v[0], -0.7))?));

    let img = [tensor(&[4, 8, 8], s + 16)];
    out.push(("dwt", check_gradients(&img, eps, s + 6, |t, v| t.dwt(v[0]))?));
    out.push(("idwt", check_gradients(&img, eps, s + 7, |t, v| t.idwt(v[0]))?));
    let basis = Rc::new(fit_pca(&uniform(16 * 16, s + 17), 16, 16)?);
    out.push(("pca", check_gradients(&img, eps, s + 8, |t, v| t.pca(v[0], basis.clone()))?));
    Ok(out)
}
