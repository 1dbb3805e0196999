use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update; `t` counts from 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, lr: f64, t: u64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.m.len());
    assert!(t >= 1, "Adam step counter starts at 1");
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPS);
    }
}

/// Adam optimizer state bundled with its step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    moments: Moments,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            moments: Moments::zeros(n_params),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        adam_step(params, grads, &mut self.moments, self.lr, self.t);
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}
