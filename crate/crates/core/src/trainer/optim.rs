use serde::{Deserialize, Serialize};

/// SGD with Nesterov momentum and L2 weight decay:
///
/// ```text
/// g' = g + wd·w;  b = μ·b + g';  w ← w − lr·(g' + μ·b)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NesterovSgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffer: Vec<f64>,
}

impl NesterovSgd {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffer: vec![0.0; len],
        }
    }

    pub fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(w.len(), grad.len());
        assert_eq!(w.len(), self.buffer.len());
        for ((wi, gi), bi) in w.iter_mut().zip(grad).zip(&mut self.buffer) {
            let g = gi + self.weight_decay * *wi;
            *bi = self.momentum * *bi + g;
            *wi -= lr * (g + self.momentum * *bi);
        }
    }
}

/// Adam with L2 weight decay folded into the gradient and standard bias
/// correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            weight_decay,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, w: &mut [f64], grad: &[f64]) {
        assert_eq!(w.len(), grad.len());
        assert_eq!(w.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((wi, gi), mi), vi) in w.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            let g = gi + self.weight_decay * *wi;
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *wi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Optimizer buffers for both parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub omega: NesterovSgd,
    pub alpha: Adam,
}
