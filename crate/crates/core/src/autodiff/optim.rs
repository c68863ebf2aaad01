use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::autodiff::AutodiffError;
use crate::scalar::Real;

/// `params ← params − lr·grads` over matching arrays.
pub fn sgd_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    lr: T,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "sgd_step",
            expected: vec![params.len()],
            found: vec![grads.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "sgd_step",
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

/// Stochastic gradient descent with optional heavy-ball momentum and
/// global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub clip_norm: Option<T>,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T, clip_norm: Option<T>) -> Self {
        Self {
            lr,
            momentum,
            clip_norm,
            velocity: Vec::new(),
        }
    }

    /// Returns the pre-clipping global gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<T, AutodiffError> {
        let norm = grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt();
        let factor = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => T::one(),
        };
        if self.velocity.is_empty() {
            self.velocity = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        }
        let mut steps = Vec::with_capacity(grads.len());
        for (v, g) in self.velocity.iter_mut().zip(grads) {
            if v.shape() != g.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "sgd_momentum",
                    expected: v.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.momentum * *vv + gv * factor;
            }
            steps.push(v.clone());
        }
        sgd_step(store.tensors_mut(), &steps, self.lr)?;
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(&[1.0, 2.0])];
        sgd_step(&mut p, &[Tensor::vector(&[0.0, 0.0])], 0.5).unwrap();
        assert_eq!(p[0].data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_rate_leaves_params() {
        let mut p = vec![Tensor::vector(&[1.0])];
        sgd_step(&mut p, &[Tensor::vector(&[3.0])], 0.0).unwrap();
        assert_eq!(p[0].data(), &[1.0]);
    }

    #[test]
    fn quadratic_single_step() {
        // f(x) = x², f'(1) = 2, x ← 1 − 0.1·2
        let mut p = vec![Tensor::scalar(1.0)];
        sgd_step(&mut p, &[Tensor::scalar(2.0)], 0.1).unwrap();
        assert!((p[0].item() - 0.8f64).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::vector(&[1.0, 2.0])];
        assert!(sgd_step(&mut p, &[Tensor::vector(&[1.0])], 0.1).is_err());
    }

    #[test]
    fn momentum_accumulates() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(0.0f64));
        let mut opt = Sgd::new(1.0, 0.5, None);
        opt.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
        opt.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(store.tensors()[0].item(), -2.5);
    }
}
