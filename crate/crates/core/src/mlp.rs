//! Small dense tanh network with a linear head, parameterized by a flat
//! vector. A network with no hidden layers is an affine map `w·x + b`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths including input and the scalar output.
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Mlp { sizes }
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// (weight offset, bias offset) of each layer; weights are row-major
    /// `out x in`.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let wo = off;
                let bo = wo + w[0] * w[1];
                off = bo + w[1];
                (wo, bo)
            })
            .collect()
    }

    fn layer(&self, params: &[f64], l: usize, off: (usize, usize)) -> (DMatrix<f64>, DVector<f64>) {
        let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
        let w = DMatrix::from_row_slice(out, inp, &params[off.0..off.0 + inp * out]);
        let b = DVector::from_column_slice(&params[off.1..off.1 + out]);
        (w, b)
    }

    /// Initial parameters: weights ~ N(0, sd²), zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R, weight_sd: f64) -> Vec<f64> {
        let normal = Normal::new(0.0, weight_sd).expect("finite sd");
        let mut p = vec![0.0; self.n_params()];
        for (l, (wo, _)) in self.offsets().into_iter().enumerate() {
            for v in &mut p[wo..wo + self.sizes[l] * self.sizes[l + 1]] {
                *v = normal.sample(rng);
            }
        }
        p
    }

    /// Glorot-scaled initialization for hidden layers.
    pub fn init_glorot<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        for (l, (wo, _)) in self.offsets().into_iter().enumerate() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let sd = (2.0 / (inp + out) as f64).sqrt();
            let normal = Normal::new(0.0, sd).expect("finite sd");
            for v in &mut p[wo..wo + inp * out] {
                *v = normal.sample(rng);
            }
        }
        p
    }

    /// Forward pass over the rows of `x` (N x inputs).
    pub fn forward(&self, params: &[f64], x: &DMatrix<f64>) -> DVector<f64> {
        self.forward_cached(params, x).0
    }

    fn forward_cached(&self, params: &[f64], x: &DMatrix<f64>) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        assert_eq!(params.len(), self.n_params(), "parameter count");
        assert_eq!(x.ncols(), self.inputs(), "input width");
        let offsets = self.offsets();
        let n_layers = offsets.len();
        let mut acts = vec![x.clone()];
        for (l, &off) in offsets.iter().enumerate() {
            let (w, b) = self.layer(params, l, off);
            let mut z = acts[l].clone() * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            if l + 1 < n_layers {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().column(0).into_owned();
        (out, acts)
    }

    /// Gradient of `Σ_i dout_i * f(x_i)` with respect to the parameters.
    pub fn backward(&self, params: &[f64], x: &DMatrix<f64>, dout: &DVector<f64>) -> Vec<f64> {
        let (_, acts) = self.forward_cached(params, x);
        let offsets = self.offsets();
        let mut grad = vec![0.0; self.n_params()];
        let mut delta = DMatrix::from_column_slice(dout.len(), 1, dout.as_slice());
        for l in (0..offsets.len()).rev() {
            let (wo, bo) = offsets[l];
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            // dW = delta^T A_l  (out x inp)
            let dw = delta.transpose() * &acts[l];
            for r in 0..out {
                for c in 0..inp {
                    grad[wo + r * inp + c] = dw[(r, c)];
                }
                grad[bo + r] = delta.column(r).sum();
            }
            if l > 0 {
                let (w, _) = self.layer(params, l, offsets[l]);
                let mut prev = delta * w;
                // tanh'(z) = 1 - a²
                prev.zip_apply(&acts[l], |d, a| *d *= 1.0 - a * a);
                delta = prev;
            }
        }
        grad
    }
}
