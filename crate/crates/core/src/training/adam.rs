use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::ParameterSet;

/// Bias-corrected Adam moments for every parameter, in registration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    #[serde(skip)]
    pub m: Vec<Vec<f32>>,
    #[serde(skip)]
    pub v: Vec<Vec<f32>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    fn matches(&self, params: &ParameterSet) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params.iter().zip(&self.m).zip(&self.v).all(|((p, m), v)| m.len() == p.tensor.len() && v.len() == p.tensor.len())
    }
}

/// One Adam update from the gradients currently stored in `params`.
///
/// Gradients are left untouched. If any updated value would be non-finite,
/// nothing is modified and `NumericFault` is returned.
pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !state.matches(params) {
        return Err(Error::ShapeMismatch("optimizer state does not match parameter set".into()));
    }
    let t = state.t + 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bc1 = 1.0 - b1.powf(t as f64);
    let bc2 = 1.0 - b2.powf(t as f64);

    let mut new_m = Vec::with_capacity(params.len());
    let mut new_v = Vec::with_capacity(params.len());
    let mut new_theta = Vec::with_capacity(params.len());
    for ((p, m), v) in params.iter().zip(&state.m).zip(&state.v) {
        let n = p.tensor.len();
        let (mut mm, mut vv, mut th) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let g = f64::from(p.tensor.grad[i]);
            let mi = b1 * f64::from(m[i]) + (1.0 - b1) * g;
            let vi = b2 * f64::from(v[i]) + (1.0 - b2) * g * g;
            let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            let theta = (f64::from(p.tensor.value[i]) - step) as f32;
            if !theta.is_finite() || !mi.is_finite() || !vi.is_finite() {
                return Err(Error::NumericFault(format!("adam update of {}", p.name)));
            }
            mm.push(mi as f32);
            vv.push(vi as f32);
            th.push(theta);
        }
        new_m.push(mm);
        new_v.push(vv);
        new_theta.push(th);
    }
    for (p, th) in params.iter_mut().zip(new_theta) {
        p.tensor.value = th;
    }
    state.m = new_m;
    state.v = new_v;
    state.t = t;
    Ok(())
}
