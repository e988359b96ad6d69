use super::{ParamId, ParamStore, Scalar, Tensor};

/// Adam with bias correction over a fixed group of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    ids: Vec<ParamId>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, ids: &[ParamId], learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let zeros = |id: &ParamId| {
            let (r, c) = store.value(*id).shape();
            Tensor::zeros(r, c)
        };
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            ids: ids.to_vec(),
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the accumulated grads, which are zeroed afterwards.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.t += 1;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let step = T::from_f64_lossy(self.learning_rate / c1);
        let c2 = T::from_f64_lossy(c2);
        let eps = T::from_f64_lossy(self.epsilon);
        let one = T::one();
        for (k, id) in self.ids.iter().enumerate() {
            let g = store.grad(*id).data().to_vec();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let w = store.value_mut(*id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                w[i] = w[i] - step * m[i] / ((v[i] / c2).sqrt() + eps);
            }
        }
        store.zero_grad(&self.ids);
    }
}

/// Global L2 norm of the grads of `ids`.
pub fn grad_norm<T: Scalar>(store: &ParamStore<T>, ids: &[ParamId]) -> f64 {
    ids.iter()
        .flat_map(|id| store.grad(*id).data().iter())
        .map(|g| {
            let g = g.as_f64();
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales grads so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, ids: &[ParamId], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grad_norm(store, ids);
    if norm > max_norm {
        let k = T::from_f64_lossy(max_norm / norm);
        for id in ids {
            store.grad_mut(*id).data_mut().iter_mut().for_each(|g| *g = *g * k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn zero_grads_leave_params() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", Tensor::row(vec![0.3, -1.0]));
        let mut opt = Adam::new(&s, &[id], 0.1);
        for _ in 0..10 {
            opt.step(&mut s);
        }
        assert_eq!(s.value(id).data(), &[0.3, -1.0]);
    }

    #[test]
    fn constant_grad_moves_against_sign() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", Tensor::row(vec![0.0, 0.0]));
        let mut opt = Adam::new(&s, &[id], 0.01);
        for _ in 0..50 {
            s.grad_mut(id).data_mut().copy_from_slice(&[2.0, -0.5]);
            opt.step(&mut s);
            assert_eq!(s.grad(id).data(), &[0.0, 0.0]);
        }
        let w = s.value(id).data();
        assert!(w[0] < 0.0 && w[1] > 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::scalar(1.0));
        let mut opt = Adam::new(&s, &[id], 0.01);
        for _ in 0..2000 {
            let grads = {
                let mut g = Graph::new(&s);
                let w = g.param(id);
                let l = g.square(w);
                g.backward(l).unwrap()
            };
            s.accumulate(&grads);
            opt.step(&mut s);
        }
        assert!(s.value(id).item().abs() < 1e-3, "{}", s.value(id).item());
    }

    #[test]
    fn clip_three_four_five() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::row(vec![0.0, 0.0]));
        s.grad_mut(id).data_mut().copy_from_slice(&[3.0, 4.0]);
        let n = clip_grad_norm(&mut s, &[id], 0.5);
        assert_eq!(n, 5.0);
        let g = s.grad(id).data();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        assert!((grad_norm(&s, &[id]) - 0.5).abs() < 1e-15);
        let n2 = clip_grad_norm(&mut s, &[id], 1.0);
        assert!((n2 - 0.5).abs() < 1e-15);
        assert!((s.grad(id).data()[0] - 0.3).abs() < 1e-15);
    }
}
