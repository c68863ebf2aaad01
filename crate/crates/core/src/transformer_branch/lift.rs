use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::geometry::CameraRig;
use crate::scalar::Real;
use crate::transformer_branch::attention::{attention_plan, sample_heads, DeformAttnConfig, DeformAttnLayer};
use crate::transformer_branch::encoder::FeaturePyramid;
use crate::voxels::{sparse_conv3d, Grid, QueryProposalSet, VoxelError, TAPS};

/// Lifting stack of one volume level: deformable attention layers, then an
/// optional residual sparse convolution `q + relu(conv(q))`.
#[derive(Clone, Debug)]
pub struct LevelLifter {
    pub level: usize,
    pub layers: Vec<DeformAttnLayer>,
    pub conv: Option<ParamId>,
}

impl LevelLifter {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        level: usize,
        channels: usize,
        config: &DeformAttnConfig,
        sparse_conv: bool,
        rng: &mut R,
    ) -> Self {
        let layers = (0..config.layers_at(level))
            .map(|i| {
                DeformAttnLayer::new(
                    store,
                    &format!("{prefix}.{i}"),
                    channels,
                    config.heads,
                    config.points_at(level),
                    rng,
                )
            })
            .collect();
        let conv = sparse_conv.then(|| {
            let id = store.add_uniform(format!("{prefix}.conv"), &[TAPS * channels, channels], TAPS * channels, rng);
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= T::lit(0.5));
            id
        });
        Self { level, layers, conv }
    }
}

/// Per-camera reference points of a query set: the active rows whose voxel
/// centre projects validly, and their feature-cell coordinates.
#[derive(Clone, Debug)]
pub struct References<T> {
    pub rows: Vec<usize>,
    pub cells: Tensor<T>,
}

pub fn reference_points<T: Real>(
    grid: &Grid<T>,
    indices: &[usize],
    rig: &CameraRig<T>,
    pyramid: &FeaturePyramid,
    level: usize,
    levels: usize,
) -> Vec<References<T>> {
    rig.cameras()
        .iter()
        .enumerate()
        .map(|(c, cam)| {
            let fl = pyramid.for_volume_level(c, level, levels);
            let mut rows = Vec::new();
            let mut cells = Vec::new();
            for (r, &i) in indices.iter().enumerate() {
                let p = cam.project_point(grid.center(i));
                if p.valid {
                    rows.push(r);
                    cells.extend_from_slice(&cam.image_to_feature(p.pixel, fl.width, fl.height));
                }
            }
            let n = rows.len();
            References {
                rows,
                cells: Tensor::matrix(n, 2, cells),
            }
        })
        .collect()
}

/// One attention layer over every camera: per-camera outputs are averaged
/// over the cameras that see each query and added to the query; queries
/// seen by no camera pass through unchanged.
pub fn attend_cameras<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &DeformAttnLayer,
    q: Var,
    refs: &[References<T>],
    pyramid: &FeaturePyramid,
    level: usize,
    levels: usize,
) -> Var {
    let n = g.shape(q)[0];
    let mut hits = vec![0usize; n];
    for r in refs {
        for &i in &r.rows {
            hits[i] += 1;
        }
    }
    if hits.iter().all(|&h| h == 0) {
        return q;
    }
    let plan = attention_plan(g, store, layer, q);
    let wv = g.param(store, layer.value);
    let mut total: Option<Var> = None;
    for (c, r) in refs.iter().enumerate() {
        if r.rows.is_empty() {
            continue;
        }
        let fl = pyramid.for_volume_level(c, level, levels);
        let values = g.matmul(fl.map, wv);
        let h = sample_heads(g, layer, &plan, &r.rows, &r.cells, values, &fl);
        let mut back = vec![None; n];
        for (k, &i) in r.rows.iter().enumerate() {
            back[i] = Some(k);
        }
        let h = if r.rows.len() == n { h } else { g.gather_rows(h, back) };
        total = Some(match total {
            Some(t) => g.add(t, h),
            None => h,
        });
    }
    let total = total.expect("some camera sees a query");
    let inv: Vec<T> = hits
        .iter()
        .map(|&h| if h == 0 { T::zero() } else { T::one() / T::from_usize_lossy(h) })
        .collect();
    let inv = g.constant(Tensor::vector(&inv));
    let mean = g.mul_rows(total, inv);
    let wo = g.param(store, layer.output);
    let out = g.matmul(mean, wo);
    g.add(q, out)
}

/// Attention stack over `rig`'s cameras at `q`'s level followed by the
/// optional residual sparse convolution. The active set is unchanged.
pub fn lift_level<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    lifter: &LevelLifter,
    q: &QueryProposalSet,
    grid: &Grid<T>,
    rig: &CameraRig<T>,
    pyramid: &FeaturePyramid,
    levels: usize,
) -> Result<QueryProposalSet, VoxelError> {
    if q.level != lifter.level {
        return Err(VoxelError::LevelMismatch {
            left: q.level,
            right: lifter.level,
        });
    }
    if q.is_empty() {
        return Ok(q.clone());
    }
    let refs = reference_points(grid, &q.indices, rig, pyramid, q.level, levels);
    let mut x = q.features;
    for layer in &lifter.layers {
        x = attend_cameras(g, store, layer, x, &refs, pyramid, q.level, levels);
    }
    let mut out = QueryProposalSet::new(g, q.level, q.dims, q.indices.clone(), x)?;
    if let Some(k) = lifter.conv {
        let kv = g.param(store, k);
        let conv = sparse_conv3d(g, &out, kv);
        let act = g.relu(conv.features);
        out.features = g.add(out.features, act);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Camera, FeatureMap, Intrinsics};
    use crate::transformer_branch::attention::deform_attn;
    use crate::transformer_branch::encoder::FeatureLevel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const C: usize = 4;

    fn camera(eye: [f64; 3]) -> Camera<f64> {
        Camera::look_at(
            eye,
            [0.0, 0.0, 0.25],
            [0.0, 0.0, 1.0],
            Intrinsics {
                fx: 8.0,
                fy: 8.0,
                cx: 7.5,
                cy: 7.5,
            },
            16,
            16,
            0.5,
            20.0,
        )
        .unwrap()
    }

    fn grid() -> Grid<f64> {
        Grid::new([4, 4, 2], 0.5, [-1.0, -1.0, 0.0])
    }

    fn map(seed: usize) -> FeatureMap<f64> {
        FeatureMap::from_fn(4, 4, C, move |x, y, k| ((x * 3 + y * 7 + k + seed) as f64 * 0.7).sin())
    }

    fn pyramid(g: &mut Graph<f64>, maps: &[FeatureMap<f64>]) -> FeaturePyramid {
        FeaturePyramid {
            cameras: maps
                .iter()
                .map(|m| {
                    vec![FeatureLevel {
                        map: g.constant(m.to_tensor()),
                        height: 4,
                        width: 4,
                    }]
                })
                .collect(),
        }
    }

    fn config() -> DeformAttnConfig {
        DeformAttnConfig {
            heads: 2,
            layers: vec![2],
            points: vec![3],
        }
    }

    fn queries(g: &mut Graph<f64>, indices: Vec<usize>) -> QueryProposalSet {
        let n = indices.len();
        let f = g.constant(Tensor::matrix(n, C, (0..n * C).map(|i| (i as f64 * 0.13).cos()).collect()));
        QueryProposalSet::new(g, 1, [4, 4, 2], indices, f).unwrap()
    }

    #[test]
    fn empty_set_stays_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lifter = LevelLifter::new(&mut store, "l", 1, C, &config(), true, &mut rng);
        let mut g = Graph::new();
        let p = pyramid(&mut g, &[map(0)]);
        let q = queries(&mut g, vec![]);
        let rig = CameraRig::new(vec![camera([4.0, 0.5, 2.0])]);
        let out = lift_level(&mut g, &store, &lifter, &q, &grid(), &rig, &p, 1).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn one_camera_one_query_is_attention_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let lifter = LevelLifter::new(&mut store, "l", 1, C, &config(), false, &mut rng);
        let mut g = Graph::new();
        let p = pyramid(&mut g, &[map(0)]);
        let q = queries(&mut g, vec![5]);
        let cam = camera([4.0, 0.5, 2.0]);
        let rig = CameraRig::new(vec![cam.clone()]);
        let out = lift_level(&mut g, &store, &lifter, &q, &grid(), &rig, &p, 1).unwrap();
        let proj = cam.project_point(grid().center(5));
        assert!(proj.valid);
        let cell = cam.image_to_feature(proj.pixel, 4, 4);
        let refs = Tensor::matrix(1, 2, cell.to_vec());
        let level = p.for_volume_level(0, 1, 1);
        let mut x = q.features;
        for layer in &lifter.layers {
            let d = deform_attn(&mut g, &store, layer, x, &refs, &level);
            x = g.add(x, d);
        }
        for (a, b) in g.value(out.features).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.indices, q.indices);
    }

    #[test]
    fn duplicated_rig_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let lifter = LevelLifter::new(&mut store, "l", 1, C, &config(), true, &mut rng);
        let a = camera([4.0, 0.5, 2.0]);
        let b = camera([-3.0, 3.0, 2.5]);
        let idx = vec![0, 3, 5, 6, 9, 17, 30];
        let mut g = Graph::new();
        let p2 = pyramid(&mut g, &[map(0), map(5)]);
        let p3 = pyramid(&mut g, &[map(0), map(5), map(0), map(5)]);
        let q = queries(&mut g, idx.clone());
        let r2 = CameraRig::new(vec![a.clone(), b.clone()]);
        let r3 = CameraRig::new(vec![a.clone(), b.clone(), a, b]);
        let o2 = lift_level(&mut g, &store, &lifter, &q, &grid(), &r2, &p2, 1).unwrap();
        let o3 = lift_level(&mut g, &store, &lifter, &q, &grid(), &r3, &p3, 1).unwrap();
        assert_eq!(o2.indices, idx);
        assert_eq!(o3.indices, idx);
        let (v2, v3) = (g.value(o2.features), g.value(o3.features));
        let scale = v2.max_abs().max(1.0);
        for (x, y) in v2.data().iter().zip(v3.data()) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn unseen_queries_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let lifter = LevelLifter::new(&mut store, "l", 1, C, &config(), false, &mut rng);
        let mut g = Graph::new();
        let p = pyramid(&mut g, &[map(0)]);
        // Looking away from the grid.
        let cam = Camera::look_at(
            [4.0, 0.0, 1.0],
            [9.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
            Intrinsics {
                fx: 8.0,
                fy: 8.0,
                cx: 7.5,
                cy: 7.5,
            },
            16,
            16,
            0.5,
            20.0,
        )
        .unwrap();
        let q = queries(&mut g, vec![1, 2, 12]);
        let out = lift_level(&mut g, &store, &lifter, &q, &grid(), &CameraRig::new(vec![cam]), &p, 1).unwrap();
        assert_eq!(g.value(out.features), g.value(q.features));
    }

    #[test]
    fn deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut store = ParamStore::new();
            let lifter = LevelLifter::new(&mut store, "l", 1, C, &config(), true, &mut rng);
            let mut g = Graph::new();
            let p = pyramid(&mut g, &[map(1), map(2)]);
            let q = queries(&mut g, (0..32).collect());
            let rig = CameraRig::new(vec![camera([4.0, 0.5, 2.0]), camera([0.5, -4.0, 2.0])]);
            let out = lift_level(&mut g, &store, &lifter, &q, &grid(), &rig, &p, 1).unwrap();
            g.value(out.features).clone()
        };
        assert_eq!(build(), build());
    }
}
