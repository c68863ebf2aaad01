use rand::seq::index;
use rand::Rng;

use crate::geometry::Ray;
use crate::scalar::Real;
use crate::voxels::Grid;

/// Stratified samples: one jittered `t` per equal stratum of `[near, far]`.
pub fn sample_uniform<T: Real, R: Rng>(ray: &Ray<T>, m: usize, rng: &mut R) -> Vec<T> {
    assert!(m >= 1, "at least one sample");
    let span = ray.far - ray.near;
    let mf = T::from_usize_lossy(m);
    (0..m)
        .map(|k| {
            let u = T::lit(rng.gen::<f64>());
            ray.near + span * (T::from_usize_lossy(k) + u) / mf
        })
        .collect()
}

/// `δ_i = t_i − t_{i−1}` with `t_0 = near`.
pub fn deltas<T: Real>(t: &[T], near: T) -> Vec<T> {
    let mut prev = near;
    t.iter()
        .map(|&x| {
            let d = x - prev;
            prev = x;
            d
        })
        .collect()
}

/// Inverse-CDF draw of `n` points from the piecewise-constant density whose
/// mass on bin `(t_{i−1}, t_i]` (with `t_0 = near`) is `pdf[i]`. Returns
/// `None` when the total mass is zero.
fn inverse_cdf<T: Real, R: Rng>(near: T, t: &[T], pdf: &[T], n: usize, rng: &mut R) -> Option<Vec<T>> {
    let total: T = pdf.iter().copied().sum();
    if !(total > T::zero()) || !total.is_finite() {
        return None;
    }
    let mut cdf = Vec::with_capacity(pdf.len() + 1);
    cdf.push(T::zero());
    let mut acc = T::zero();
    for &p in pdf {
        acc += p.max(T::zero()) / total;
        cdf.push(acc);
    }
    let nf = T::from_usize_lossy(n);
    let mut out = Vec::with_capacity(n);
    let mut bin = 0;
    for k in 0..n {
        let u = ((T::from_usize_lossy(k) + T::lit(rng.gen::<f64>())) / nf).min(T::one() - T::epsilon());
        while bin + 1 < pdf.len() && cdf[bin + 1] <= u {
            bin += 1;
        }
        let lo = if bin == 0 { near } else { t[bin - 1] };
        let hi = t[bin];
        let mass = cdf[bin + 1] - cdf[bin];
        let f = if mass > T::zero() {
            ((u - cdf[bin]) / mass).max(T::zero()).min(T::one())
        } else {
            T::lit(0.5)
        };
        out.push(lo + (hi - lo) * f);
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    Some(out)
}

/// Resamples `n` points in proportion to the coarse rendering weights; with
/// every weight zero it falls back to [`sample_uniform`].
pub fn sample_hierarchical<T: Real, R: Rng>(
    ray: &Ray<T>,
    coarse_t: &[T],
    coarse_w: &[T],
    n: usize,
    rng: &mut R,
) -> Vec<T> {
    assert_eq!(coarse_t.len(), coarse_w.len());
    match inverse_cdf(ray.near, coarse_t, coarse_w, n, rng) {
        Some(t) => t,
        None => sample_uniform(ray, n, rng),
    }
}

/// As [`sample_hierarchical`], but the coarse weights are first smoothed
/// with a Gaussian of one-bin bandwidth.
pub fn sample_probabilistic<T: Real, R: Rng>(
    ray: &Ray<T>,
    coarse_t: &[T],
    coarse_w: &[T],
    n: usize,
    rng: &mut R,
) -> Vec<T> {
    assert_eq!(coarse_t.len(), coarse_w.len());
    let m = coarse_w.len();
    let reach = 3usize;
    let smoothed: Vec<T> = (0..m)
        .map(|i| {
            let lo = i.saturating_sub(reach);
            let hi = (i + reach + 1).min(m);
            (lo..hi)
                .map(|j| {
                    let d = T::from_usize_lossy(i.abs_diff(j));
                    coarse_w[j] * (-(d * d) * T::lit(0.5)).exp()
                })
                .sum()
        })
        .collect();
    match inverse_cdf(ray.near, coarse_t, &smoothed, n, rng) {
        Some(t) => t,
        None => sample_uniform(ray, n, rng),
    }
}

/// Keeps `n` of `candidates`: a random `n` of the occupied ones when more
/// than `n` are occupied, otherwise all occupied ones plus a random fill from
/// the unoccupied. Output is sorted by `t` with its occupancy flags.
pub fn select_occupancy_aware<T: Real, R: Rng>(
    candidates: &[T],
    occupied: &[bool],
    n: usize,
    rng: &mut R,
) -> (Vec<T>, Vec<bool>) {
    assert!(candidates.len() >= n, "need at least n candidates");
    let occ: Vec<usize> = (0..candidates.len()).filter(|&i| occupied[i]).collect();
    let free: Vec<usize> = (0..candidates.len()).filter(|&i| !occupied[i]).collect();
    let mut chosen: Vec<usize> = if occ.len() > n {
        index::sample(rng, occ.len(), n).into_iter().map(|k| occ[k]).collect()
    } else {
        let mut c = occ.clone();
        c.extend(index::sample(rng, free.len(), n - occ.len()).into_iter().map(|k| free[k]));
        c
    };
    chosen.sort_unstable();
    (
        chosen.iter().map(|&i| candidates[i]).collect(),
        chosen.iter().map(|&i| occupied[i]).collect(),
    )
}

/// Result of [`sample_occupancy_aware`].
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancySamples<T> {
    pub t: Vec<T>,
    /// Whether each returned sample lies in an occupied guide voxel.
    pub occupied: Vec<bool>,
    /// How many of the `m` candidates were occupied.
    pub candidate_hits: usize,
}

/// Draws `m` stratified candidates, looks each up in the binary guide volume
/// (`mask` over `grid`) and keeps `n` by [`select_occupancy_aware`]. When no
/// candidate is occupied, including rays that miss the volume, the result is
/// a fresh stratified draw of `n`.
pub fn sample_occupancy_aware<T: Real, R: Rng>(
    ray: &Ray<T>,
    grid: &Grid<T>,
    mask: &[bool],
    m: usize,
    n: usize,
    rng: &mut R,
) -> OccupancySamples<T> {
    assert!(m >= n && n >= 1, "require m ≥ n ≥ 1");
    assert_eq!(mask.len(), grid.len());
    let candidates = sample_uniform(ray, m, rng);
    let occupied: Vec<bool> = candidates
        .iter()
        .map(|&t| grid.locate(ray.at(t)).is_some_and(|i| mask[i]))
        .collect();
    let hits = occupied.iter().filter(|&&o| o).count();
    if hits == 0 {
        return OccupancySamples {
            t: sample_uniform(ray, n, rng),
            occupied: vec![false; n],
            candidate_hits: 0,
        };
    }
    let (t, occupied) = select_occupancy_aware(&candidates, &occupied, n, rng);
    OccupancySamples {
        t,
        occupied,
        candidate_hits: hits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ray() -> Ray<f64> {
        Ray::new([0.0; 3], [1.0, 0.0, 0.0], 1.0, 9.0)
    }

    #[test]
    fn single_uniform_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_uniform(&ray(), 1, &mut rng);
        assert!(t.len() == 1 && t[0] >= 1.0 && t[0] <= 9.0);
    }

    #[test]
    fn strata_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = ray();
        let t = sample_uniform(&r, 128, &mut rng);
        let w = (r.far - r.near) / 128.0;
        for (k, &x) in t.iter().enumerate() {
            assert!(x >= r.near + k as f64 * w && x <= r.near + (k + 1) as f64 * w);
        }
    }

    #[test]
    fn uniform_is_seeded() {
        let a = sample_uniform(&ray(), 16, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_uniform(&ray(), 16, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn deltas_from_near() {
        assert_eq!(deltas(&[1.5, 2.0, 4.0], 1.0), vec![0.5, 0.5, 2.0]);
    }

    #[test]
    fn concentrated_weights_stay_in_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = ray();
        let t: Vec<f64> = (1..=8).map(|i| 1.0 + i as f64).collect();
        let mut w = vec![0.0; 8];
        w[4] = 0.7;
        let s = sample_hierarchical(&r, &t, &w, 64, &mut rng);
        assert_eq!(s.len(), 64);
        assert!(s.iter().all(|&x| (5.0..=6.0).contains(&x)));
        assert!(s.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let r = ray();
        let t: Vec<f64> = (1..=8).map(|i| 1.0 + i as f64).collect();
        let s = sample_hierarchical(&r, &t, &[0.0; 8], 4, &mut ChaCha8Rng::seed_from_u64(3));
        let u = sample_uniform(&r, 4, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s, u);
    }

    #[test]
    fn uniform_weights_pass_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = ray();
        let t: Vec<f64> = (1..=64).map(|i| 1.0 + 8.0 * i as f64 / 64.0).collect();
        let s = sample_hierarchical(&r, &t, &[1.0 / 64.0; 64], 10_000, &mut rng);
        let n = s.len() as f64;
        let d = s
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = (x - 1.0) / 8.0;
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample Kolmogorov–Smirnov statistic.
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn probabilistic_spreads_around_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = ray();
        let t: Vec<f64> = (1..=16).map(|i| 1.0 + 0.5 * i as f64).collect();
        let mut w = vec![0.0; 16];
        w[8] = 1.0;
        let s = sample_probabilistic(&r, &t, &w, 200, &mut rng);
        let inside = s.iter().filter(|&&x| (5.0..=5.5).contains(&x)).count();
        assert!(inside > 40 && inside < 200);
        assert!(s.iter().all(|&x| (2.5..=8.0).contains(&x)));
    }

    #[test]
    fn selection_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cand: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let (t, o) = select_occupancy_aware(&cand, &[true; 128], 32, &mut rng);
        assert_eq!(t.len(), 32);
        assert!(o.iter().all(|&x| x));
        let mut occ = vec![false; 128];
        for i in (5..128).step_by(12).take(10) {
            occ[i] = true;
        }
        let (t, o) = select_occupancy_aware(&cand, &occ, 32, &mut rng);
        assert_eq!(o.iter().filter(|&&x| x).count(), 10);
        for i in (0..128).filter(|&i| occ[i]) {
            assert!(t.contains(&(i as f64)));
        }
        assert!(t.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn miss_is_stratified_uniform() {
        let grid = Grid::new([4, 4, 4], 0.5, [100.0, 100.0, 100.0]);
        let mask = vec![true; grid.len()];
        let r = ray();
        let s = sample_occupancy_aware(&r, &grid, &mask, 128, 32, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(s.candidate_hits, 0);
        let w = (r.far - r.near) / 32.0;
        for (k, &x) in s.t.iter().enumerate() {
            assert!(x >= r.near + k as f64 * w && x <= r.near + (k + 1) as f64 * w);
        }
    }
}
