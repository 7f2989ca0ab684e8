use serde::{Deserialize, Serialize};

/// Adam first-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One step uphill along `grad`. Entries with `mask[i] == false` are
    /// left untouched.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64, mask: Option<&[bool]>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] += lr * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn descend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.ascend(params, &neg, lr, None);
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant,
    /// Cosine decay from the base rate to 1% of it over the run.
    Cosine,
}

impl Schedule {
    pub fn rate(&self, base: f64, iter: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = iter as f64 / total.max(1) as f64;
                let floor = 0.01;
                base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
            }
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for y > 0.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv of non-positive {y}");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
