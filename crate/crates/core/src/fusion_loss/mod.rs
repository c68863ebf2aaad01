//! Hybrid query construction from the two occupancy branches and the
//! training objective.
//!
//! The explicit term supervises the semantic heads per level with
//! cross-entropy (plus a binary term on the occupancy logit). The implicit
//! term supervises the field with scale-invariant log depth error on
//! rendered rays and opacity cross-entropy at voxel centres. Coarser levels
//! carry geometrically smaller weights `α_l = 0.5^(L−l)`.

use crate::autodiff::{Graph, Tensor, Var};
use crate::scalar::Real;
use crate::voxels::{
    align_rows, indices_to_mask, mask_to_indices, union_indices, HeadOutput, LevelTruth, QueryProposalSet, VoxelError,
};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("mask of {found} voxels does not match a grid of {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("parent at level {parent} cannot seed level {level}")]
    LevelMismatch { parent: usize, level: usize },
    #[error("nonpositive depth {value} on supervised ray {index}")]
    NonPositiveDepth { index: usize, value: f64 },
    #[error("truth for level {expected} expected, found level {found}")]
    TruthLevel { expected: usize, found: usize },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Weight of the implicit term.
    pub beta: f64,
    /// Occupancy threshold.
    pub theta: f64,
    pub levels: usize,
    /// `α_l = decay^(L−l)`.
    pub alpha_decay: f64,
    pub silog_lambda: f64,
    /// Weight of the occupancy-logit term inside each explicit level.
    pub occupancy_weight: f64,
    /// Logit margin of the confidently-free prediction charged for ground
    /// truth voxels outside the active set.
    pub miss_margin: f64,
    pub class_weights: Option<Vec<f64>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            theta: 0.5,
            levels: 4,
            alpha_decay: 0.5,
            silog_lambda: 0.85,
            occupancy_weight: 1.0,
            miss_margin: 10.0,
            class_weights: None,
        }
    }
}

impl LossConfig {
    pub fn alpha(&self, level: usize) -> f64 {
        self.alpha_decay.powi((self.levels - level) as i32)
    }
}

/// `Q[O_imp] ∪ Q[O_exp]`. Voxels whose parent is active in `parent` start
/// from the parent's feature row; all others from `embedding` (`[1, C]`).
pub fn hybrid_queries<T: Real>(
    g: &mut Graph<T>,
    level: usize,
    dims: [usize; 3],
    o_imp: &[bool],
    o_exp: &[bool],
    parent: Option<&QueryProposalSet>,
    embedding: Var,
) -> Result<QueryProposalSet, FusionError> {
    let n: usize = dims.iter().product();
    for m in [o_imp, o_exp] {
        if m.len() != n {
            return Err(FusionError::DimMismatch {
                expected: n,
                found: m.len(),
            });
        }
    }
    let indices = union_indices(&mask_to_indices(o_imp), &mask_to_indices(o_exp));
    let inherited: Vec<Option<usize>> = match parent {
        Some(p) => {
            if p.level + 1 != level || p.dims.map(|d| 2 * d) != dims {
                return Err(FusionError::LevelMismatch { parent: p.level, level });
            }
            indices
                .iter()
                .map(|&i| p.row_of(crate::voxels::parent(dims, i)))
                .collect()
        }
        None => vec![None; indices.len()],
    };
    let fresh: Vec<Option<usize>> = inherited.iter().map(|r| if r.is_some() { None } else { Some(0) }).collect();
    let features = match parent {
        Some(p) if inherited.iter().all(Option::is_some) => g.gather_rows(p.features, inherited),
        Some(p) => {
            let a = g.gather_rows(p.features, inherited);
            let b = g.gather_rows(embedding, fresh);
            g.add(a, b)
        }
        None => g.gather_rows(embedding, fresh),
    };
    Ok(QueryProposalSet::new(g, level, dims, indices, features)?)
}

/// Per-level explicit terms and their weighted sum.
#[derive(Clone, Debug)]
pub struct ExplicitLoss {
    pub total: Var,
    /// Mean cross-entropy per level.
    pub semantic: Vec<Var>,
    /// Mean occupancy-logit cross-entropy per level.
    pub occupancy: Vec<Var>,
}

/// `Σ_l α_l (CE_l + w·BCE_l)`, each averaged over the union of the head's
/// support and the ground-truth occupied voxels.
pub fn loss_explicit<T: Real>(
    g: &mut Graph<T>,
    heads: &[HeadOutput],
    truths: &[LevelTruth],
    cfg: &LossConfig,
) -> Result<ExplicitLoss, FusionError> {
    let mut total: Option<Var> = None;
    let mut semantic = Vec::new();
    let mut occupancy = Vec::new();
    for h in heads {
        let t = truths
            .iter()
            .find(|t| t.level == h.level)
            .ok_or(FusionError::TruthLevel {
                expected: h.level,
                found: 0,
            })?;
        if t.dims != h.dims {
            return Err(FusionError::DimMismatch {
                expected: h.dims.iter().product(),
                found: t.occupied.len(),
            });
        }
        let (ce, bce) = level_explicit(g, h, t, cfg);
        let occ = g.scale(bce, T::lit(cfg.occupancy_weight));
        let l = g.add(ce, occ);
        let l = g.scale(l, T::lit(cfg.alpha(h.level)));
        total = Some(match total {
            Some(a) => g.add(a, l),
            None => l,
        });
        semantic.push(ce);
        occupancy.push(bce);
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(T::zero())),
    };
    Ok(ExplicitLoss {
        total,
        semantic,
        occupancy,
    })
}

fn level_explicit<T: Real>(g: &mut Graph<T>, h: &HeadOutput, t: &LevelTruth, cfg: &LossConfig) -> (Var, Var) {
    let gt = mask_to_indices(&t.occupied);
    let active = indices_to_mask(&h.indices, t.occupied.len());
    let missed = gt.iter().filter(|&&i| !active[i]).count();
    let support = h.indices.len() + missed;
    if support == 0 {
        let z = g.constant(Tensor::scalar(T::zero()));
        return (z, z);
    }
    let k = g.shape(h.logits)[1];
    let m = cfg.miss_margin;
    let miss_ce = (m.exp() + (k - 1) as f64).ln();
    let miss_bce = m.max(0.0) + (-m.abs()).exp().ln_1p();
    let weight = |c: usize| cfg.class_weights.as_ref().map_or(1.0, |w| w[c]);
    let missed_ce: f64 = gt.iter().filter(|&&i| !active[i]).map(|&i| weight(t.classes[i] as usize) * miss_ce).sum();
    let inv = T::one() / T::from_usize_lossy(support);

    let targets: Vec<usize> = h.indices.iter().map(|&i| t.classes[i] as usize).collect();
    let ce = if h.indices.is_empty() {
        g.constant(Tensor::scalar(T::zero()))
    } else {
        let rows = g.cross_entropy(h.logits, targets.clone());
        let rows = match &cfg.class_weights {
            Some(_) => {
                let w: Vec<T> = targets.iter().map(|&c| T::lit(weight(c))).collect();
                let w = g.constant(Tensor::vector(&w));
                g.mul(rows, w)
            }
            None => rows,
        };
        g.sum(rows)
    };
    let ce = g.add_scalar(ce, T::lit(missed_ce));
    let ce = g.scale(ce, inv);

    let occ_t: Vec<T> = h.indices.iter().map(|&i| if t.occupied[i] { T::one() } else { T::zero() }).collect();
    let bce = if h.indices.is_empty() {
        g.constant(Tensor::scalar(T::zero()))
    } else {
        let logit = g.reshape(h.occupancy_logit, &[h.indices.len()]);
        let rows = g.bce_with_logits(logit, occ_t);
        g.sum(rows)
    };
    let bce = g.add_scalar(bce, T::lit(miss_bce * missed as f64));
    let bce = g.scale(bce, inv);
    (ce, bce)
}

/// Scale-invariant log error `mean(g²) − λ·mean(g)²` with
/// `g_i = ln pred_i − ln gt_i` over `[R]` predictions.
pub fn loss_silog<T: Real>(g: &mut Graph<T>, pred: Var, gt: &[T], lambda: T) -> Result<Var, FusionError> {
    let pv = g.value(pred);
    assert_eq!(pv.len(), gt.len(), "one ground truth depth per ray");
    for (i, (&p, &d)) in pv.data().iter().zip(gt).enumerate() {
        if !(p > T::zero()) {
            return Err(FusionError::NonPositiveDepth {
                index: i,
                value: p.to_f64_lossy(),
            });
        }
        if !(d > T::zero()) {
            return Err(FusionError::NonPositiveDepth {
                index: i,
                value: d.to_f64_lossy(),
            });
        }
    }
    if gt.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let lg = g.ln(pred);
    let lt = g.constant(Tensor::vector(&gt.iter().map(|d| d.ln()).collect::<Vec<_>>()));
    let d = g.sub(lg, lt);
    let sq = g.square(d);
    let a = g.mean(sq);
    let m = g.mean(d);
    let m2 = g.square(m);
    let b = g.scale(m2, lambda);
    Ok(g.sub(a, b))
}

/// Field supervision at one level.
#[derive(Clone, Copy, Debug)]
pub struct ImplicitTerms {
    pub level: usize,
    pub depth: Option<Var>,
    pub occupancy: Option<Var>,
}

/// `Σ_{l≥2} α_l (L_depth,l + L_occ,l)`; level-1 terms are ignored.
pub fn loss_implicit<T: Real>(g: &mut Graph<T>, terms: &[ImplicitTerms], cfg: &LossConfig) -> Var {
    let mut total: Option<Var> = None;
    for t in terms.iter().filter(|t| t.level >= 2) {
        for v in [t.depth, t.occupancy].into_iter().flatten() {
            let l = g.scale(v, T::lit(cfg.alpha(t.level)));
            total = Some(match total {
                Some(a) => g.add(a, l),
                None => l,
            });
        }
    }
    total.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero())))
}

/// Mean opacity cross-entropy of densities `sigma` (`[n, 1]` or `[n]`) over
/// voxels of edge `voxel_size` against binary `targets`.
pub fn occupancy_bce<T: Real>(g: &mut Graph<T>, sigma: Var, voxel_size: T, targets: Vec<T>) -> Var {
    let n = targets.len();
    let s = g.reshape(sigma, &[n]);
    let thick = g.scale(s, voxel_size);
    let rows = g.opacity_bce(thick, targets);
    g.mean(rows)
}

/// `L_exp + β·L_imp`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, explicit: Var, implicit: Var, cfg: &LossConfig) -> Var {
    let b = g.scale(implicit, T::lit(cfg.beta));
    g.add(explicit, b)
}

/// Rows of `q` realigned to `indices` (zero where inactive).
pub fn features_on<T: Real>(g: &mut Graph<T>, q: &QueryProposalSet, indices: &[usize]) -> Var {
    align_rows(g, q, indices)
}
