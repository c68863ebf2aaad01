//! Reverse-mode differentiation over dense arrays.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! walks the record in reverse once and accumulates gradients into leaves and
//! bound parameters. Learnable arrays live in a [`ParamStore`] across steps
//! and are rebound into a fresh graph each step.

mod gradcheck;
mod graph;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{Gradients, Graph, Var, MIN_OPTICAL_THICKNESS};
pub(crate) use graph::BilinearCell;
pub use mlp::Mlp;
pub use optim::{sgd_step, Sgd};
pub use params::{ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor;

use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite input {index}")]
    NonFiniteInput { index: usize },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds a graph over `inputs` (bound as differentiable leaves) and checks
/// that every recorded value is finite.
pub fn forward<T, F>(inputs: &[Tensor<T>], build: F) -> Result<(Graph<T>, Var), AutodiffError>
where
    T: Real,
    F: FnOnce(&mut Graph<T>, &[Var]) -> Var,
{
    if let Some(index) = inputs.iter().position(|t| !t.is_finite()) {
        return Err(AutodiffError::NonFiniteInput { index });
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.check_finite()?;
    Ok((g, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_rejects_nan_input() {
        let r = forward(&[Tensor::scalar(f64::NAN)], |g, v| g.square(v[0]));
        assert!(matches!(r, Err(AutodiffError::NonFiniteInput { index: 0 })));
    }

    #[test]
    fn forward_reports_overflow() {
        let r = forward(&[Tensor::scalar(1000.0f64)], |g, v| g.exp(v[0]));
        assert!(matches!(r, Err(AutodiffError::NonFinite { op: "exp", .. })));
    }

    #[test]
    fn backward_is_linear_over_sums() {
        let x = Tensor::vector(&[0.4, -1.1, 2.0]);
        let grad_of = |which: u8| {
            let (g, out) = forward(std::slice::from_ref(&x), |g, v| {
                let a = g.square(v[0]);
                let a = g.sum(a);
                let b = g.sigmoid(v[0]);
                let b = g.sum(b);
                match which {
                    0 => a,
                    1 => b,
                    _ => g.add(a, b),
                }
            })
            .unwrap();
            let grads = g.backward(out).unwrap();
            grads.get(Var::from_index(0)).unwrap().clone()
        };
        let (ga, gb, gab) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..3 {
            let d: f64 = ga.data()[i] + gb.data()[i] - gab.data()[i];
            assert!(d.abs() < 1e-14);
        }
    }
}
