//! Adam optimizer over a [`ParamStore`].

use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// GAN-style moments (0.5, 0.999).
    pub fn gan(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update. `t` is the 1-based step count used for bias correction.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(ParamId, Tensor)],
    t: u64,
    cfg: AdamConfig,
) {
    assert!(t >= 1, "adam step count is 1-based");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (id, g) in grads {
        let entry = store.entry_mut(*id);
        debug_assert_eq!(entry.value.shape(), g.shape());
        let gd = g.data();
        let m = entry.m.data_mut();
        for (mi, &gi) in m.iter_mut().zip(gd.iter()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = entry.v.data_mut();
        for (vi, &gi) in v.iter_mut().zip(gd.iter()) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        // borrow again to step the value
        let (m, v) = (entry.m.data().to_vec(), entry.v.data().to_vec());
        let val = entry.value.data_mut();
        for i in 0..val.len() {
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            val[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    #[test]
    fn adam_descends_quadratic() {
        // minimize (x - 3)^2 elementwise
        let mut store = ParamStore::new();
        let id = store.add("x", ParamKind::Trainable, Tensor::from_vec(&[2], vec![0.0, 10.0]));
        let cfg = AdamConfig::with_lr(0.1);
        for t in 1..=500 {
            let x = store.value(id).clone();
            let g = x.map(|xi| 2.0 * (xi - 3.0));
            adam_step(&mut store, &[(id, g)], t, cfg);
        }
        let x = store.value(id);
        assert!((x.data()[0] - 3.0).abs() < 1e-2);
        assert!((x.data()[1] - 3.0).abs() < 1e-2);
    }
}
