use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tensor::Tensor;
use crate::autodiff::AutodiffError;
use crate::scalar::Real;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub max_relative_error: T,
    /// (array, flat index, analytic, numeric) for the worst coordinate.
    pub worst: Option<(usize, usize, T, T)>,
    pub coordinates_checked: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences at up to `max_coords` coordinates sampled per array (all of
/// them when the array is smaller).
///
/// Relative error per coordinate is `|a − d| / (|a| + |d| + 1e-12)`.
pub fn grad_check<T, F>(
    f: F,
    params: &[Tensor<T>],
    eps: T,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport<T>, AutodiffError>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor<T>]| -> Result<T, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.input(p.clone())).collect();
        let out = f(&mut g, &vars);
        g.check_finite()?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let two = T::lit(2.0);
    let floor = T::lit(1e-12);
    let mut report = GradCheckReport {
        max_relative_error: T::zero(),
        worst: None,
        coordinates_checked: 0,
    };
    for (pi, (p, v)) in params.iter().zip(&vars).enumerate() {
        let mut coords: Vec<usize> = (0..p.len()).collect();
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
        for &ci in &coords {
            let analytic = grads.get(*v).map(|t| t.data()[ci]).unwrap_or(T::zero());
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (two * eps);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + floor);
            report.coordinates_checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((pi, ci, analytic, numeric));
            }
        }
    }
    Ok(report)
}

/// [`grad_check`] over the arrays of a parameter store: `f` builds the
/// scalar from parameters bound with [`Graph::param`]. Only arrays listed in
/// `ids` are perturbed, `max_coords` coordinates each.
pub fn grad_check_params<T, F>(
    f: F,
    store: &ParamStore<T>,
    ids: &[ParamId],
    eps: T,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport<T>, AutodiffError>
where
    T: Real,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Var,
{
    let mut g = Graph::new();
    let out = f(&mut g, store);
    let grads = g.backward(out)?;
    let mut work = store.clone();
    let eval = |work: &ParamStore<T>| -> Result<T, AutodiffError> {
        let mut g = Graph::new();
        let out = f(&mut g, work);
        g.check_finite()?;
        Ok(g.value(out).item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two = T::lit(2.0);
    let floor = T::lit(1e-12);
    let mut report = GradCheckReport {
        max_relative_error: T::zero(),
        worst: None,
        coordinates_checked: 0,
    };
    for (pi, &id) in ids.iter().enumerate() {
        let mut coords: Vec<usize> = (0..store.get(id).len()).collect();
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
        for &ci in &coords {
            let analytic = grads.param(id).map(|t| t.data()[ci]).unwrap_or(T::zero());
            let orig = store.get(id).data()[ci];
            work.get_mut(id).data_mut()[ci] = orig + eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[ci] = orig - eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[ci] = orig;
            let numeric = (fp - fm) / (two * eps);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + floor);
            report.coordinates_checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((pi, ci, analytic, numeric));
            }
        }
    }
    Ok(report)
}
