//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! A [`Tape`] records one forward pass. Parameters live in a [`ParameterSet`]
//! and are copied onto the tape as leaves; after [`Tape::backward`] their
//! gradients are added back with [`Tape::accumulate_param_grads`]. Callers
//! zero parameter gradients explicitly between optimizer steps.

mod gradcheck;
mod tape;

pub use gradcheck::{central_difference, check_gradients, op_gradient_suite, GradCheckReport};
pub use tape::{Tape, Var};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Value buffer plus gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTensor {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub requires_grad: bool,
}

impl GradTensor {
    pub fn zeros(shape: &[usize], requires_grad: bool) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), value: vec![0.0; n], grad: vec![0.0; n], requires_grad }
    }

    pub fn from_vec(shape: &[usize], value: Vec<f32>, requires_grad: bool) -> Result<Self> {
        let n: usize = shape.iter().product();
        if value.len() != n {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", value.len())));
        }
        Ok(Self { shape: shape.to_vec(), grad: vec![0.0; n], value, requires_grad })
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// What a registered parameter is, which decides its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// `(Cout, Cin, k, k)` convolution weights, He-initialized.
    Kernel,
    /// Per-output-channel bias, zero-initialized.
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: GradTensor,
}

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, kind: ParamKind, shape: &[usize]) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::ConfigInvalid(format!("duplicate parameter name {name:?}")));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            kind,
            tensor: GradTensor::zeros(shape, true),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Sets every value to `v` (used to build degenerate test models).
    pub fn fill(&mut self, v: f32) {
        for p in &mut self.params {
            p.tensor.value.iter_mut().for_each(|x| *x = v);
        }
    }
}

/// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases. Deterministic per seed.
pub fn init_parameters(pset: &mut ParameterSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in pset.iter_mut() {
        match p.kind {
            ParamKind::Bias => p.tensor.value.iter_mut().for_each(|v| *v = 0.0),
            ParamKind::Kernel => {
                let fan_in: usize = p.tensor.shape[1..].iter().product();
                let std = (2.0 / fan_in as f32).sqrt();
                let normal = Normal::new(0.0f32, std).expect("positive std");
                p.tensor.value.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
        p.tensor.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.register("a.kernel", ParamKind::Kernel, &[32, 64, 3, 3]).unwrap();
        p.register("a.bias", ParamKind::Bias, &[32]).unwrap();
        p
    }

    #[test]
    fn names_are_unique() {
        let mut p = sample_set();
        assert!(matches!(p.register("a.bias", ParamKind::Bias, &[1]), Err(Error::ConfigInvalid(_))));
        let names: Vec<_> = p.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["a.kernel", "a.bias"]);
    }

    #[test]
    fn init_is_seeded() {
        let mut a = sample_set();
        let mut b = sample_set();
        init_parameters(&mut a, 7);
        init_parameters(&mut b, 7);
        assert_eq!(a, b);
        let mut c = sample_set();
        init_parameters(&mut c, 8);
        assert_ne!(a, c);
        assert!(a.by_name("a.bias").unwrap().tensor.value.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn he_std_matches_fan_in() {
        // 32 * 64 * 9 = 18432 samples, fan_in = 576
        let mut p = sample_set();
        init_parameters(&mut p, 3);
        let k = &p.by_name("a.kernel").unwrap().tensor.value;
        let n = k.len() as f64;
        let mean = k.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = k.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = (2.0f64 / 576.0).sqrt();
        assert!((var.sqrt() - target).abs() <= 0.1 * target, "{} vs {target}", var.sqrt());
    }
}
