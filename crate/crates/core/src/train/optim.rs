use sonotrans_tensor::{ParamSet, Real, Tensor};

use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<R: Real> {
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(params: &ParamSet<R>, learning_rate: f64, clip_norm: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate} must be > 0")));
        }
        if !(clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm {clip_norm} must be > 0")));
        }
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        Ok(Adam {
            learning_rate,
            clip_norm,
            t: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// Clips `grads` to the global norm, then applies one update. Returns the
    /// norm before clipping.
    pub fn step(&mut self, params: &mut ParamSet<R>, grads: &[Vec<R>]) -> Result<f64> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} gradients and {} moment tensors for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        let mut sq = 0.0f64;
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.tensor(i).len() {
                return Err(Error::Dimension(format!(
                    "gradient for {} has {} values, expected {}",
                    params.name(i),
                    g.len(),
                    params.tensor(i).len()
                )));
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in {}",
                    params.name(i)
                )));
            }
            sq += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
        let norm = sq.sqrt();
        let scale = if norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (b1, b2) = (R::of(BETA1), R::of(BETA2));
        let (ob1, ob2) = (R::of(1.0 - BETA1), R::of(1.0 - BETA2));
        let (lr, eps, s) = (R::of(self.learning_rate), R::of(ADAM_EPS), R::of(scale));
        let (rc1, rc2) = (R::of(1.0 / c1), R::of(1.0 / c2));
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for j in 0..g.len() {
                let gj = g[j] * s;
                m[j] = b1 * m[j] + ob1 * gj;
                v[j] = b2 * v[j] + ob2 * gj * gj;
                let m_hat = m[j] * rc1;
                let v_hat = v[j] * rc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::from_vec(&[1], vec![v]).unwrap());
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = scalar(2.0);
        let mut opt = Adam::new(&ps, 0.1, 5.0).unwrap();
        opt.step(&mut ps, &[vec![1.0]]).unwrap();
        let expected = 2.0 - 0.1 / (1.0 + ADAM_EPS);
        assert!((ps.tensor(0).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = scalar(2.0);
        let mut opt = Adam::new(&ps, 0.1, 5.0).unwrap();
        opt.step(&mut ps, &[vec![0.0]]).unwrap();
        assert_eq!(ps.tensor(0).data()[0], 2.0);
    }

    #[test]
    fn clipping_halves_large_gradients() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("x", Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        let mut opt = Adam::new(&ps, 0.1, 5.0).unwrap();
        let norm = opt.step(&mut ps, &[vec![6.0, 8.0]]).unwrap();
        assert_eq!(norm, 10.0);
        let m = opt.m[0].data();
        assert!((m[0] - 0.1 * 3.0).abs() < 1e-12 && (m[1] - 0.1 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut ps = scalar(1.0);
        let mut opt = Adam::new(&ps, 0.1, 5.0).unwrap();
        let err = opt.step(&mut ps, &[vec![f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains('x')));
    }
}
