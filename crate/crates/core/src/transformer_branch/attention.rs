use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Real;
use crate::transformer_branch::encoder::FeatureLevel;

/// Deformable attention sizes. `layers[l − 1]` and `points[l − 1]` apply at
/// volume level `l`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeformAttnConfig {
    pub heads: usize,
    pub layers: Vec<usize>,
    pub points: Vec<usize>,
}

impl Default for DeformAttnConfig {
    fn default() -> Self {
        Self {
            heads: 2,
            layers: vec![6, 3, 1, 3],
            points: vec![8, 4, 4, 4],
        }
    }
}

impl DeformAttnConfig {
    pub fn layers_at(&self, level: usize) -> usize {
        self.layers[level - 1]
    }

    pub fn points_at(&self, level: usize) -> usize {
        self.points[level - 1]
    }
}

/// One deformable cross-attention layer with `M` heads of `K` points:
/// `Σ_m W_m Σ_k A_mk · W′_m X(p + Δp_mk)`, where offsets `Δp` (in feature
/// cells) and weights `A` (softmax over `k` per head) are linear in the query.
#[derive(Clone, Debug)]
pub struct DeformAttnLayer {
    pub heads: usize,
    pub points: usize,
    pub channels: usize,
    /// `[C, M·K·2]`, `[M·K·2]`.
    pub offset: (ParamId, ParamId),
    /// `[C, M·K]`, `[M·K]`.
    pub attention: (ParamId, ParamId),
    /// `W′` for all heads side by side, `[C, C]`.
    pub value: ParamId,
    /// `W` for all heads stacked, `[C, C]`.
    pub output: ParamId,
}

impl DeformAttnLayer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        heads: usize,
        points: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && channels.is_multiple_of(heads), "channels split evenly over heads");
        let mk = heads * points;
        let ow = store.add_uniform(format!("{prefix}.offset.w"), &[channels, 2 * mk], channels, rng);
        store.get_mut(ow).data_mut().iter_mut().for_each(|v| *v *= T::lit(0.1));
        let mut bias = Vec::with_capacity(2 * mk);
        for m in 0..heads {
            let angle = std::f64::consts::TAU * m as f64 / heads as f64;
            for k in 0..points {
                let r = 0.5 * (k / 2 + 1) as f64;
                let a = angle + if k % 2 == 1 { std::f64::consts::PI } else { 0.0 };
                bias.push(T::lit(r * a.cos()));
                bias.push(T::lit(r * a.sin()));
            }
        }
        let ob = store.add(format!("{prefix}.offset.b"), Tensor::vector(&bias));
        let aw = store.add_uniform(format!("{prefix}.attn.w"), &[channels, mk], channels, rng);
        let ab = store.add_zeros(format!("{prefix}.attn.b"), &[mk]);
        let value = store.add_uniform(format!("{prefix}.value.w"), &[channels, channels], channels, rng);
        let output = store.add_uniform(format!("{prefix}.out.w"), &[channels, channels], channels, rng);
        Self {
            heads,
            points,
            channels,
            offset: (ow, ob),
            attention: (aw, ab),
            value,
            output,
        }
    }

    fn head_width(&self) -> usize {
        self.channels / self.heads
    }
}

/// Query-dependent parts of a layer, shared by every camera.
#[derive(Clone, Copy, Debug)]
pub struct AttentionPlan {
    /// `[n·M·K, 2]` offsets in (query, head, point) order.
    pub offsets: Var,
    /// `[n·M·K, 1]` weights in the same order.
    pub weights: Var,
}

pub fn attention_plan<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, layer: &DeformAttnLayer, q: Var) -> AttentionPlan {
    let n = g.shape(q)[0];
    let mk = layer.heads * layer.points;
    let ow = g.param(store, layer.offset.0);
    let ob = g.param(store, layer.offset.1);
    let off = g.linear(q, ow, ob);
    let offsets = g.reshape(off, &[n * mk, 2]);
    let aw = g.param(store, layer.attention.0);
    let ab = g.param(store, layer.attention.1);
    let logits = g.linear(q, aw, ab);
    let a = g.softmax_groups(logits, layer.points);
    let weights = g.reshape(a, &[n * mk, 1]);
    AttentionPlan { offsets, weights }
}

/// Head outputs `Σ_k A_mk · W′_m X(p + Δp_mk)` concatenated over heads, for
/// the queries in `rows` with reference points `reference` (`[|rows|, 2]`
/// feature cells). `values` is the level map already multiplied by `W′`.
pub fn sample_heads<T: Real>(
    g: &mut Graph<T>,
    layer: &DeformAttnLayer,
    plan: &AttentionPlan,
    rows: &[usize],
    reference: &Tensor<T>,
    values: Var,
    level: &FeatureLevel,
) -> Var {
    let (m_count, k) = (layer.heads, layer.points);
    let cm = layer.head_width();
    let mut heads = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let idx: Vec<Option<usize>> = rows
            .iter()
            .flat_map(|&i| (0..k).map(move |p| Some((i * m_count + m) * k + p)))
            .collect();
        let mut refs = Vec::with_capacity(rows.len() * k * 2);
        for r in 0..rows.len() {
            for _ in 0..k {
                refs.extend_from_slice(reference.row(r));
            }
        }
        let off = g.gather_rows(plan.offsets, idx.clone());
        let refs = g.constant(Tensor::matrix(rows.len() * k, 2, refs));
        let coords = g.add(off, refs);
        let v = g.slice_cols(values, m * cm, cm);
        let s = g.bilinear(v, level.height, level.width, coords);
        let a = g.gather_rows(plan.weights, idx);
        let a = g.reshape(a, &[rows.len() * k]);
        let s = g.mul_rows(s, a);
        heads.push(g.group_sum_rows(s, k));
    }
    if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)
    }
}

/// Single-camera deformable attention for queries `q: [n, C]` at reference
/// feature cells `reference: [n, 2]`.
pub fn deform_attn<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &DeformAttnLayer,
    q: Var,
    reference: &Tensor<T>,
    level: &FeatureLevel,
) -> Var {
    let n = g.shape(q)[0];
    let plan = attention_plan(g, store, layer, q);
    let wv = g.param(store, layer.value);
    let values = g.matmul(level.map, wv);
    let rows: Vec<usize> = (0..n).collect();
    let h = sample_heads(g, layer, &plan, &rows, reference, values, level);
    let wo = g.param(store, layer.output);
    g.matmul(h, wo)
}

/// Attention weights of the layer as values, `[n, M·K]`.
pub fn attention_weights<T: Real>(store: &ParamStore<T>, layer: &DeformAttnLayer, q: &Tensor<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let plan = attention_plan(&mut g, store, layer, qv);
    g.value(plan.weights).clone().reshaped(&[q.rows(), layer.heads * layer.points])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::geometry::{bilinear_sample, FeatureMap};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn level_map(g: &mut Graph<f64>, fm: &FeatureMap<f64>) -> FeatureLevel {
        FeatureLevel {
            map: g.constant(fm.to_tensor()),
            height: fm.height,
            width: fm.width,
        }
    }

    #[test]
    fn weights_are_simplex_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let layer = DeformAttnLayer::new(&mut store, "a", 8, 2, 4, &mut rng);
        let q = Tensor::matrix(1000, 8, (0..8000).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let a = attention_weights(&store, &layer, &q);
        for r in 0..1000 {
            for m in 0..2 {
                let head = &a.row(r)[m * 4..(m + 1) * 4];
                assert!(head.iter().all(|&x| (0.0..=1.0).contains(&x)));
                assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_offsets_single_point_reads_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let c = 4;
        let layer = DeformAttnLayer::new(&mut store, "a", c, 2, 1, &mut rng);
        for id in [layer.offset.0, layer.offset.1] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let eye: Vec<f64> = (0..c * c).map(|i| if i % (c + 1) == 0 { 1.0 } else { 0.0 }).collect();
        *store.get_mut(layer.value) = Tensor::matrix(c, c, eye.clone());
        *store.get_mut(layer.output) = Tensor::matrix(c, c, eye);
        let fm = FeatureMap::from_fn(6, 5, c, |x, y, k| (x * 11 + y * 7 + k) as f64 * 0.1);
        let mut g = Graph::new();
        let level = level_map(&mut g, &fm);
        let refs = Tensor::matrix(3, 2, vec![1.25, 2.5, 0.0, 0.0, 3.7, 4.1]);
        let q = g.constant(Tensor::matrix(3, c, (0..3 * c).map(|i| i as f64).collect()));
        let out = deform_attn(&mut g, &store, &layer, q, &refs, &level);
        for r in 0..3 {
            let expect = bilinear_sample(&fm, [refs.row(r)[0], refs.row(r)[1]]);
            for (a, e) in g.value(out).row(r).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let layer = DeformAttnLayer::new(&mut store, "a", 4, 2, 3, &mut rng);
        let fm = FeatureMap::from_fn(5, 6, 4, |x, y, k| ((x * 5 + y * 3 + k * 2) as f64 * 0.3).sin());
        let refs = Tensor::matrix(3, 2, vec![1.3, 2.2, 3.6, 0.7, 2.1, 3.4]);
        let q = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let rep = grad_check(
            |g, v| {
                let level = FeatureLevel {
                    map: v[1],
                    height: 5,
                    width: 6,
                };
                let out = deform_attn(g, &store, &layer, v[0], &refs, &level);
                let sq = g.square(out);
                g.sum(sq)
            },
            &[q.clone(), fm.to_tensor()],
            1e-6,
            40,
            0,
        )
        .unwrap();
        assert!(rep.max_relative_error < 1e-5, "{rep:?}");
        let ids: Vec<_> = store.ids().collect();
        let rep = crate::autodiff::grad_check_params(
            |g, s| {
                let map = g.constant(fm.to_tensor());
                let level = FeatureLevel {
                    map,
                    height: 5,
                    width: 6,
                };
                let qv = g.constant(q.clone());
                let out = deform_attn(g, s, &layer, qv, &refs, &level);
                let sq = g.square(out);
                g.sum(sq)
            },
            &store,
            &ids,
            1e-6,
            20,
            1,
        )
        .unwrap();
        assert!(rep.max_relative_error < 1e-5, "{rep:?}");
    }
}
