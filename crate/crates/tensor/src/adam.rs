use crate::params::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq)]
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
        Self { lr, ..Self::default() }
    }
}

/// One bias-corrected Adam update over every parameter holding a gradient.
///
/// Parameters without a gradient are left untouched (their moments and step
/// counters included). Gradients are zeroed afterwards. Returns the names of
/// skipped parameters.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) -> Vec<String> {
    let mut skipped = Vec::new();
    for (name, e) in store.iter_mut() {
        if !e.has_grad {
            log::debug!("adam: no gradient for `{name}`, skipped");
            skipped.push(name.to_string());
            continue;
        }
        e.step += 1;
        let t = e.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let g = e.grad.data();
        let m = e.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = e.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (e.m.data(), e.v.data());
        let p = e.value.data_mut();
        for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    store.zero_grad();
    skipped
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::full(&[2, 2], 0.7)).unwrap();
        store.get_mut("w").unwrap().has_grad = true;
        adam_step(&mut store, &AdamConfig::default());
        assert_eq!(store.value("w").unwrap(), &Tensor::full(&[2, 2], 0.7));
        assert_eq!(store.get("w").unwrap().step, 1);
    }

    #[test]
    fn missing_gradient_is_skipped() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::scalar(1.0)).unwrap();
        let skipped = adam_step(&mut store, &AdamConfig::default());
        assert_eq!(skipped, vec!["a".to_string()]);
        assert_eq!(store.get("a").unwrap().step, 0);
    }

    #[test]
    fn constant_gradient_update_approaches_lr() {
        // Reference recurrence, written out independently of `adam_step`.
        let (lr, b1, b2, eps, g) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64, 0.37f64);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut last = 0.0;
        for t in 1..=1000 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            last = lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert!((last - lr).abs() < 1e-9);

        let mut store = ParameterStore::new();
        store.insert("x", Tensor::scalar(0.0)).unwrap();
        let cfg = AdamConfig::default();
        let mut prev = 0.0;
        let mut delta = 0.0;
        for _ in 0..1000 {
            let e = store.get_mut("x").unwrap();
            e.grad = Tensor::scalar(g);
            e.has_grad = true;
            adam_step(&mut store, &cfg);
            let now = store.value("x").unwrap().item();
            delta = now - prev;
            prev = now;
        }
        assert!((delta + last).abs() < 1e-15, "step {delta} vs reference {last}");
        assert!(delta < 0.0);
    }
}
