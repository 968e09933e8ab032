//! Adam with per-row moment storage so rows can be dropped or appended when
//! the cloud changes size.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments for one parameter group, `stride` values per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub stride: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn new(stride: usize, rows: usize) -> Self {
        Self {
            stride,
            m: vec![0.0; stride * rows],
            v: vec![0.0; stride * rows],
        }
    }

    pub fn rows(&self) -> usize {
        if self.stride == 0 {
            0
        } else {
            self.m.len() / self.stride
        }
    }

    /// Keep rows where `keep[i]` is true, preserving order.
    pub fn retain_rows(&mut self, keep: &[bool]) {
        let s = self.stride;
        let mut m = Vec::with_capacity(self.m.len());
        let mut v = Vec::with_capacity(self.v.len());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                m.extend_from_slice(&self.m[i * s..(i + 1) * s]);
                v.extend_from_slice(&self.v[i * s..(i + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }

    pub fn push_zero_rows(&mut self, n: usize) {
        self.m.resize(self.m.len() + n * self.stride, 0.0);
        self.v.resize(self.v.len() + n * self.stride, 0.0);
    }

    /// One Adam update of `params` (the rows' values, flattened) in place.
    /// `step` is the 1-based step used for bias correction.
    pub fn update(&mut self, row: usize, params: &mut [f64], grads: &[f64], lr: f64, step: u64, cfg: &AdamConfig) {
        let s = self.stride;
        debug_assert_eq!(params.len(), s);
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for k in 0..s {
            let i = row * s + k;
            let g = grads[k];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = Moments::new(2, 1);
        let mut p = [1.0, -1.0];
        m.update(0, &mut p, &[3.0, -0.5], 0.1, 1, &AdamConfig::default());
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut m = Moments::new(1, 1);
        let mut x = [5.0];
        for t in 1..=2000 {
            let g = [2.0 * (x[0] - 2.0)];
            m.update(0, &mut x, &g, 0.05, t, &AdamConfig::default());
        }
        assert!((x[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn rows_track_retain_and_push() {
        let mut m = Moments::new(3, 4);
        m.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        m.retain_rows(&[true, false, true, false]);
        assert_eq!(m.m, vec![0.0, 1.0, 2.0, 6.0, 7.0, 8.0]);
        m.push_zero_rows(2);
        assert_eq!(m.rows(), 4);
        assert_eq!(m.v.len(), 12);
    }
}
