use crate::params::ParamStore;

use super::TrainError;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Gradients are checked first, so a non-finite
    /// entry leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<(), TrainError> {
        check_finite(store, grads)?;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            let w = store.get_mut(id).data_mut();
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                w[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn check_finite(store: &ParamStore, grads: &[Vec<f64>]) -> Result<(), TrainError> {
    for (id, name, _) in store.iter() {
        if let Some(j) = grads[id.index()].iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                tensor: name.to_string(),
                index: j,
            });
        }
    }
    Ok(())
}

/// Rescales all gradients together so that their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("w", Tensor::vector(vec![v]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(1.5);
        let mut adam = Adam::new(0.001, &s);
        adam.step(&mut s, &[vec![0.0]]).unwrap();
        assert_eq!(s.get(s.id("w").unwrap()).data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut s = store(0.0);
            let mut adam = Adam::new(0.001, &s);
            adam.step(&mut s, &[vec![g]]).unwrap();
            // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε)
            let expected = -0.001 * g / (g.abs() + 1e-8);
            assert!((s.get(s.id("w").unwrap()).item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_names_tensor() {
        let mut s = store(0.0);
        let mut adam = Adam::new(0.001, &s);
        let err = adam.step(&mut s, &[vec![f64::NAN]]).unwrap_err();
        assert_eq!(
            err,
            TrainError::NonFiniteGradient {
                tensor: "w".into(),
                index: 0
            }
        );
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
        let mut small = vec![vec![0.1]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0][0], 0.1);
    }
}
