use std::collections::HashMap;

use ndarray::Array2;

use super::{ParamId, ParamStore, Real};

/// Adam with decoupled weight decay. Moments are kept in the model precision;
/// the update math runs in `f64` for stable bias correction.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Optional global gradient-norm clip applied before the update.
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new<F: Real>(store: &ParamStore<F>, lr: f64, weight_decay: f64, clip_norm: Option<f64>) -> Self {
        let m = store
            .ids()
            .map(|id| Array2::zeros(store.value(id).dim()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>, grads: &HashMap<ParamId, Array2<F>>) {
        self.step += 1;
        let mut grads_f64: HashMap<ParamId, Array2<f64>> = grads
            .iter()
            .map(|(&id, g)| (id, g.mapv(Real::to_f64)))
            .collect();

        if let Some(max_norm) = self.clip_norm {
            let total: f64 = grads_f64
                .values()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum();
            let norm = total.sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for g in grads_f64.values_mut() {
                    g.mapv_inplace(|x| x * scale);
                }
            }
        }

        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(g) = grads_f64.get(&id) else { continue };
            let lr = self.lr * store.lr_mult(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let value = store.value_mut(id);
            for ((pv, &mi), &vi) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let p = pv.to_f64();
                let updated = p - lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p);
                *pv = F::from_f64(updated);
            }
        }
    }

    /// Raw optimizer state for checkpointing: `(step, moments m, moments v)`.
    pub fn state(&self) -> (u64, &[Array2<f64>], &[Array2<f64>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Array2<f64>>, v: Vec<Array2<f64>>) {
        assert_eq!(m.len(), self.m.len(), "optimizer state length mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state length mismatch");
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adamw_descends_quadratic() {
        // minimize (p - 3)^2 elementwise
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", array![[0.0, 10.0]], 1.0);
        let mut opt = AdamW::new(&store, 0.1, 0.0, None);
        for _ in 0..500 {
            let g = store.value(id).mapv(|p| 2.0 * (p - 3.0));
            let mut grads = HashMap::new();
            grads.insert(id, g);
            opt.step(&mut store, &grads);
        }
        for &p in store.value(id).iter() {
            assert!((p - 3.0).abs() < 0.05, "p = {p}");
        }
    }

    #[test]
    fn weight_decay_shrinks_params_without_gradient_signal() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", array![[4.0]], 1.0);
        let mut opt = AdamW::new(&store, 0.01, 0.1, None);
        for _ in 0..100 {
            let mut grads = HashMap::new();
            grads.insert(id, array![[0.0]]);
            opt.step(&mut store, &grads);
        }
        assert!(store.value(id)[[0, 0]] < 4.0);
    }
}
