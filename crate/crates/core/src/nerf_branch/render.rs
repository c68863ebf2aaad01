use std::io::Write;

use crate::autodiff::{Graph, Tensor, Var};
use crate::geometry::Ray;
use crate::nerf_branch::sampling::deltas;
use crate::scalar::Real;

/// Weights `w_i = T_i·(1 − exp(−σ_i δ_i))` and transmittances
/// `T_i = exp(−Σ_{j<i} σ_j δ_j)` along one ray.
pub fn render_weights<T: Real>(sigma: &[T], delta: &[T]) -> (Vec<T>, Vec<T>) {
    assert_eq!(sigma.len(), delta.len(), "one spacing per sample");
    let mut acc = T::zero();
    let mut w = Vec::with_capacity(sigma.len());
    let mut tr = Vec::with_capacity(sigma.len());
    for (&s, &d) in sigma.iter().zip(delta) {
        let tau = s * d;
        let t = (-acc).exp();
        tr.push(t);
        w.push(t * -(-tau).exp_m1());
        acc += tau;
    }
    (w, tr)
}

/// `D = Σ w_i d_i`.
pub fn render_depth_values<T: Real>(sigma: &[T], depth: &[T], delta: &[T]) -> T {
    let (w, _) = render_weights(sigma, delta);
    w.iter().zip(depth).map(|(&a, &b)| a * b).sum()
}

/// Rendered rays as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct RenderOutput {
    /// `[R]` rendered depth.
    pub depth: Var,
    /// `[R]` accumulated opacity `Σ_i w_i`.
    pub opacity: Var,
    /// `[R, N]` weights.
    pub weights: Var,
    /// `[R, N]` transmittance before each sample.
    pub transmittance: Var,
}

/// Differentiable depth rendering of `R` rays with `N` samples each:
/// `sigma` and `depth` are `[R, N]` nodes, `delta` the `[R, N]` spacings.
pub fn render_depth<T: Real>(g: &mut Graph<T>, sigma: Var, depth: Var, delta: &Tensor<T>) -> RenderOutput {
    let dl = g.constant(delta.clone());
    let tau = g.mul(sigma, dl);
    let acc = g.exclusive_cumsum_rows(tau);
    let neg = g.neg(acc);
    let transmittance = g.exp(neg);
    let neg_tau = g.neg(tau);
    let keep = g.exp(neg_tau);
    let neg_keep = g.neg(keep);
    let alpha = g.add_scalar(neg_keep, T::one());
    let weights = g.mul(transmittance, alpha);
    let wd = g.mul(weights, depth);
    RenderOutput {
        depth: g.row_sum(wd),
        opacity: g.row_sum(weights),
        weights,
        transmittance,
    }
}

/// Samples along one ray with field outputs and rendering weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleSet<T> {
    pub ray: Ray<T>,
    pub t: Vec<T>,
    pub delta: Vec<T>,
    pub sigma: Vec<T>,
    pub depth: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> RaySampleSet<T> {
    /// Weights are computed from `sigma` over spacings derived from `t`.
    pub fn new(ray: Ray<T>, t: Vec<T>, sigma: Vec<T>, depth: Vec<T>) -> Self {
        assert!(t.len() == sigma.len() && t.len() == depth.len(), "one value per sample");
        let delta = deltas(&t, ray.near);
        let (weights, _) = render_weights(&sigma, &delta);
        Self {
            ray,
            t,
            delta,
            sigma,
            depth,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.t.iter().map(|&t| self.ray.at(t))
    }

    pub fn rendered_depth(&self) -> T {
        self.weights.iter().zip(&self.depth).map(|(&a, &b)| a * b).sum()
    }

    /// Appends `ray,t,sigma,d,w` rows.
    pub fn write_csv<W: Write>(&self, ray_id: usize, out: &mut W) -> std::io::Result<()> {
        for i in 0..self.len() {
            writeln!(
                out,
                "{ray_id},{:.6},{:.6},{:.6},{:.6}",
                self.t[i].to_f64_lossy(),
                self.sigma[i].to_f64_lossy(),
                self.depth[i].to_f64_lossy(),
                self.weights[i].to_f64_lossy()
            )?;
        }
        Ok(())
    }
}

pub const SAMPLE_CSV_HEADER: &str = "ray,t,sigma,d,w";
