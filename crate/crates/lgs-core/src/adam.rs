//! Adam optimizer over a flat list of named parameter tensors.
//!
//! Parameters are owned by a [`ParamSet`]; values sit behind `Rc` so a
//! training step can register them on a fresh tape without copying. The
//! optimizer mutates them in place, which requires the tape (and any other
//! outstanding handle) to have been dropped first — a violated ownership
//! expectation panics rather than silently cloning.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use crate::matrix::Matrix;

/// One trainable tensor.
pub struct Param {
    pub name: String,
    pub value: Rc<Matrix>,
    /// Whether weight decay applies to this tensor (network weights yes,
    /// structure parameters no).
    pub decay: bool,
}

/// Ordered collection of parameters; indices are stable handles.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Matrix, decay: bool) -> usize {
        self.params.push(Param { name: String::from(name), value: Rc::new(value), decay });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    /// Shared handle to the parameter's value (for tape registration).
    pub fn value(&self, idx: usize) -> Rc<Matrix> {
        Rc::clone(&self.params[idx].value)
    }

    /// Replace a parameter's value wholesale (used when the transition
    /// matrix is re-initialized after the warm-up phase).
    pub fn set_value(&mut self, idx: usize, value: Matrix) {
        self.params[idx].value = Rc::new(value);
    }

    fn value_mut(&mut self, idx: usize) -> &mut Matrix {
        let p = &mut self.params[idx];
        Rc::get_mut(&mut p.value).unwrap_or_else(|| {
            panic!("parameter '{}' still borrowed during optimizer update", p.name)
        })
    }
}

/// Adam state for one [`ParamSet`]; moment buffers are allocated lazily the
/// first time a parameter receives a gradient.
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64, n_params: usize) -> Self {
        let mut m = Vec::with_capacity(n_params);
        let mut v = Vec::with_capacity(n_params);
        m.resize_with(n_params, || None);
        v.resize_with(n_params, || None);
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `(param index, gradient)` pairs. Weight decay is
    /// folded into the gradient (`grad + wd·θ`) for decay-flagged parameters
    /// only. Gradients are consumed; parameters missing from `grads` keep
    /// their value and moments untouched.
    pub fn apply(&mut self, params: &mut ParamSet, grads: Vec<(usize, Matrix)>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (idx, mut grad) in grads {
            assert!(idx < params.len(), "gradient for unknown parameter index {idx}");
            if idx >= self.m.len() {
                self.m.resize_with(idx + 1, || None);
                self.v.resize_with(idx + 1, || None);
            }
            {
                let p = params.get(idx);
                assert_eq!(
                    grad.shape(),
                    p.value.shape(),
                    "gradient shape {:?} does not match parameter '{}' {:?}",
                    grad.shape(),
                    p.name,
                    p.value.shape()
                );
                if p.decay && self.weight_decay != 0.0 {
                    grad.add_scaled(&p.value, self.weight_decay);
                }
            }
            let (rows, cols) = grad.shape();
            let m = self.m[idx].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.v[idx].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let value = params.value_mut(idx);
            for k in 0..rows * cols {
                let g = grad.data()[k];
                let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * g;
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let mhat = mk / bc1;
                let vhat = vk / bc2;
                value.data_mut()[k] -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
    }
}
