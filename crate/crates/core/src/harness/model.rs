use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, Mlp, ParamId, ParamStore, Tensor, Var};
use crate::fusion_loss::{
    hybrid_queries, loss_explicit, loss_implicit, loss_silog, occupancy_bce, total_loss, ExplicitLoss, FusionError,
    ImplicitTerms,
};
use crate::geometry::{bilinear_sample, Camera, FeatureMap, PositionalEncodingConfig, Ray, Vec3};
use crate::nerf_branch::{
    deltas, eval_field, feature_coords, fuse_multicam_occupancy, render_depth, render_weights, sample_hierarchical,
    sample_occupancy_aware, sample_probabilistic, sample_uniform, ImplicitField, RaySampleSet,
};
use crate::scalar::Real;
use crate::scenegen::DepthMap;
use crate::transformer_branch::{
    lift_level, reference_points, DeformAttnConfig, FeaturePyramid, ImageEncoder, LevelLifter, References,
};
use crate::voxels::{
    align_rows, indices_to_mask, mask_to_indices, semantic_head, sparse_conv3d, upsample2x, upsample_indices,
    upsample_mask, Grid, HeadOutput, QueryProposalSet, VoxelError, VoxelVolume,
};

use super::config::{ExperimentConfig, SamplingStrategy};
use super::data::SceneData;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Architecture switches and sizes read from an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub levels: usize,
    pub channels: usize,
    pub classes: usize,
    pub attention: DeformAttnConfig,
    pub field_hidden: usize,
    pub lift: bool,
    pub sparse_conv: bool,
    pub nerf: bool,
    pub explicit: bool,
    pub sampling: SamplingStrategy,
    pub samples: usize,
    pub candidates: usize,
    pub rays_per_camera: usize,
    pub occupancy_samples: usize,
    pub theta: f64,
}

impl ModelConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        Self {
            levels: cfg.levels,
            channels: cfg.channels,
            classes: cfg.scene.class_count,
            attention: cfg.attention.clone(),
            field_hidden: cfg.field_hidden,
            lift: cfg.lift,
            sparse_conv: cfg.sparse_conv,
            nerf: cfg.nerf,
            explicit: cfg.explicit,
            sampling: cfg.sampling,
            samples: cfg.samples,
            candidates: cfg.candidates,
            rays_per_camera: cfg.rays_per_camera,
            occupancy_samples: cfg.occupancy_samples,
            theta: cfg.loss.theta,
        }
    }
}

/// Every learnable component. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: ImageEncoder,
    /// `[1, C]` feature of voxels with no active parent.
    pub embedding: ParamId,
    /// Per level, `PE(voxel centre) → C`.
    pub position: Vec<(ParamId, ParamId)>,
    pub lifters: Vec<LevelLifter>,
    /// Residual convolutions used when attention lifting is off.
    pub plain_convs: Vec<Option<ParamId>>,
    pub heads: Vec<Mlp>,
    pub field: ImplicitField,
    pub voxel_encoding: PositionalEncodingConfig,
}

/// Losses of one forward pass.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub explicit: ExplicitLoss,
    pub implicit: Var,
    pub implicit_terms: Vec<ImplicitTerms>,
    pub total: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub pyramid: FeaturePyramid,
    pub queries: Vec<QueryProposalSet>,
    pub heads: Vec<HeadOutput>,
    /// Field proposals per level (level 1 has none).
    pub o_imp: Vec<Vec<bool>>,
    pub loss: Option<LossBreakdown>,
}

fn centre_encoding<T: Real>(grid: &Grid<T>, indices: &[usize], pe: &PositionalEncodingConfig) -> Tensor<T> {
    let p = pe.output_dim();
    let half = grid.extent().map(|e| e * T::lit(0.5));
    let mid: Vec3<T> = [0, 1, 2].map(|a| grid.origin[a] + half[a]);
    let mut data = vec![T::zero(); indices.len() * p];
    for (&i, row) in indices.iter().zip(data.chunks_mut(p.max(1))) {
        let c = grid.center(i);
        let x = [0, 1, 2].map(|a| (c[a] - mid[a]) / half[a]);
        pe.encode_into(x, row);
    }
    Tensor::matrix(indices.len(), p, data)
}

/// Camera-averaged bilinear features at each query's projection, zero for
/// queries no camera sees.
fn projected_features<T: Real>(
    g: &mut Graph<T>,
    refs: &[References<T>],
    pyramid: &FeaturePyramid,
    n: usize,
    level: usize,
    levels: usize,
) -> Option<Var> {
    let mut hits = vec![0usize; n];
    let mut total: Option<Var> = None;
    for (c, r) in refs.iter().enumerate() {
        if r.rows.is_empty() {
            continue;
        }
        let fl = pyramid.for_volume_level(c, level, levels);
        let coords = g.constant(r.cells.clone());
        let s = g.bilinear(fl.map, fl.height, fl.width, coords);
        let mut back = vec![None; n];
        for (k, &i) in r.rows.iter().enumerate() {
            back[i] = Some(k);
            hits[i] += 1;
        }
        let s = g.gather_rows(s, back);
        total = Some(match total {
            Some(t) => g.add(t, s),
            None => s,
        });
    }
    let total = total?;
    let inv: Vec<T> = hits
        .iter()
        .map(|&h| if h == 0 { T::zero() } else { T::one() / T::from_usize_lossy(h) })
        .collect();
    let inv = g.constant(Tensor::vector(&inv));
    Some(g.mul_rows(total, inv))
}

/// Stacks `[n_i]` or `[n_i, 1]` nodes into one `[Σ n_i]` vector.
fn stack<T: Real>(g: &mut Graph<T>, parts: &[Var]) -> Var {
    let rows: Vec<Var> = parts
        .iter()
        .map(|&p| {
            let n = g.value(p).len();
            g.reshape(p, &[1, n])
        })
        .collect();
    let joined = if rows.len() == 1 { rows[0] } else { g.concat_cols(&rows) };
    let n = g.value(joined).len();
    g.reshape(joined, &[n])
}

impl Model {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: ModelConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let encoder = ImageEncoder::new(store, "encoder", 3, c, cfg.levels, rng);
        let embedding = store.add_uniform("query.embedding", &[1, c], 1, rng);
        let voxel_encoding = PositionalEncodingConfig::default();
        let p = voxel_encoding.output_dim();
        let position = (1..=cfg.levels)
            .map(|l| {
                let w = store.add_uniform(format!("query.position.{l}.w"), &[p, c], p, rng);
                let b = store.add_zeros(format!("query.position.{l}.b"), &[c]);
                (w, b)
            })
            .collect();
        let lifters = (1..=cfg.levels)
            .map(|l| {
                let mut a = cfg.attention.clone();
                if !cfg.lift {
                    a.layers = vec![0; cfg.levels];
                }
                LevelLifter::new(store, &format!("lift.{l}"), l, c, &a, cfg.sparse_conv && cfg.lift, rng)
            })
            .collect();
        let plain_convs = (1..=cfg.levels)
            .map(|l| {
                (!cfg.lift && cfg.sparse_conv).then(|| {
                    let k = crate::voxels::TAPS * c;
                    store.add_uniform(format!("plain.{l}.conv"), &[k, c], k, rng)
                })
            })
            .collect();
        let heads = (1..=cfg.levels)
            .map(|l| Mlp::new(store, &format!("head.{l}"), &[c, c, cfg.classes + 1], rng))
            .collect();
        let field = ImplicitField::new(
            store,
            "field",
            c,
            &[cfg.field_hidden],
            PositionalEncodingConfig::default(),
            rng,
        );
        Self {
            cfg,
            encoder,
            embedding,
            position,
            lifters,
            plain_convs,
            heads,
            field,
            voxel_encoding,
        }
    }

    fn add_position<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        q: &mut QueryProposalSet,
        grid: &Grid<T>,
    ) {
        if q.is_empty() {
            return;
        }
        let (w, b) = self.position[q.level - 1];
        let pe = g.constant(centre_encoding(grid, &q.indices, &self.voxel_encoding));
        let wv = g.param(store, w);
        let bv = g.param(store, b);
        let pos = g.linear(pe, wv, bv);
        q.features = g.add(q.features, pos);
    }

    fn dense_level_one<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, grid: &Grid<T>) -> Result<QueryProposalSet, ModelError> {
        let indices: Vec<usize> = (0..grid.len()).collect();
        let e = g.param(store, self.embedding);
        let f = g.gather_rows(e, vec![Some(0); indices.len()]);
        let mut q = QueryProposalSet::new(g, 1, grid.dims, indices, f)?;
        self.add_position(g, store, &mut q, grid);
        Ok(q)
    }

    fn refine<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        q: &QueryProposalSet,
        grid: &Grid<T>,
        data: &SceneData<T>,
        pyramid: &FeaturePyramid,
    ) -> Result<QueryProposalSet, ModelError> {
        let levels = self.cfg.levels;
        if self.cfg.lift {
            return Ok(lift_level(
                g,
                store,
                &self.lifters[q.level - 1],
                q,
                grid,
                data.scene.rig(),
                pyramid,
                levels,
            )?);
        }
        let mut out = q.clone();
        if q.is_empty() {
            return Ok(out);
        }
        let refs = reference_points(grid, &q.indices, data.scene.rig(), pyramid, q.level, levels);
        if let Some(p) = projected_features(g, &refs, pyramid, q.len(), q.level, levels) {
            out.features = g.add(out.features, p);
        }
        if let Some(k) = self.plain_convs[q.level - 1] {
            let kv = g.param(store, k);
            let conv = sparse_conv3d(g, &out, kv);
            let act = g.relu(conv.features);
            out.features = g.add(out.features, act);
        }
        Ok(out)
    }

    /// First-layer feature projections of each camera's level-`level` map.
    fn projected_maps<T: Real>(&self, g: &Graph<T>, store: &ParamStore<T>, pyramid: &FeaturePyramid, level: usize) -> Vec<FeatureMap<T>> {
        (0..pyramid.camera_count())
            .map(|c| {
                let fl = pyramid.for_volume_level(c, level, self.cfg.levels);
                let fm = FeatureMap::from_tensor(fl.height, fl.width, g.value(fl.map));
                self.field.project_feature_map(store, &fm)
            })
            .collect()
    }

    /// Field densities at world points seen from `cam`, without a graph.
    fn sigma_values<T: Real>(&self, store: &ParamStore<T>, cam: &Camera<T>, projected: &FeatureMap<T>, points: &[Vec3<T>]) -> Vec<T> {
        if points.is_empty() {
            return Vec::new();
        }
        let coords = feature_coords(cam, points, projected.height, projected.width);
        let h = projected.channels;
        let mut rows = Vec::with_capacity(points.len() * h);
        for i in 0..points.len() {
            rows.extend(bilinear_sample(projected, [coords.row(i)[0], coords.row(i)[1]]));
        }
        let enc = self.field.encode_points(cam, points);
        self.field
            .sigma_from_projected(store, &enc, &Tensor::matrix(points.len(), h, rows))
    }

    /// Field proposals at `level` among `candidates`: max-over-cameras
    /// opacity at voxel centres thresholded at θ.
    fn implicit_proposals<T: Real>(
        &self,
        store: &ParamStore<T>,
        data: &SceneData<T>,
        projected: &[FeatureMap<T>],
        level: usize,
        candidates: &[usize],
    ) -> Vec<bool> {
        let grid = data.grid(level);
        let per_camera: Vec<Vec<Option<T>>> = data
            .scene
            .rig()
            .cameras()
            .iter()
            .zip(projected)
            .map(|(cam, pm)| {
                let mut seen = Vec::new();
                let mut points = Vec::new();
                for (k, &v) in candidates.iter().enumerate() {
                    let c = grid.center(v);
                    if cam.project_point(c).valid {
                        seen.push(k);
                        points.push(c);
                    }
                }
                let s = self.sigma_values(store, cam, pm, &points);
                let mut out = vec![None; candidates.len()];
                for (k, sigma) in seen.into_iter().zip(s) {
                    out[k] = Some(sigma);
                }
                out
            })
            .collect();
        let mut mask = vec![false; grid.len()];
        if candidates.is_empty() {
            return mask;
        }
        let fused = fuse_multicam_occupancy(&per_camera, grid.voxel_size, T::lit(self.cfg.theta));
        for (k, &v) in candidates.iter().enumerate() {
            mask[v] = fused.mask[k];
        }
        mask
    }

    /// Ray sample distances under the configured strategy.
    #[allow(clippy::too_many_arguments)]
    fn ray_samples<T: Real, R: Rng>(
        &self,
        store: &ParamStore<T>,
        ray: &Ray<T>,
        cam: &Camera<T>,
        projected: &FeatureMap<T>,
        guide: (&Grid<T>, &[bool]),
        rng: &mut R,
    ) -> Vec<T> {
        let n = self.cfg.samples;
        match self.cfg.sampling {
            SamplingStrategy::Uniform => sample_uniform(ray, n, rng),
            SamplingStrategy::OccupancyAware => {
                sample_occupancy_aware(ray, guide.0, guide.1, self.cfg.candidates, n, rng).t
            }
            SamplingStrategy::Hierarchical | SamplingStrategy::Probabilistic => {
                let coarse = sample_uniform(ray, n, rng);
                let pts: Vec<Vec3<T>> = coarse.iter().map(|&t| ray.at(t)).collect();
                let sigma = self.sigma_values(store, cam, projected, &pts);
                let (w, _) = render_weights(&sigma, &deltas(&coarse, ray.near));
                if self.cfg.sampling == SamplingStrategy::Hierarchical {
                    sample_hierarchical(ray, &coarse, &w, n, rng)
                } else {
                    sample_probabilistic(ray, &coarse, &w, n, rng)
                }
            }
        }
    }

    /// Depth and opacity supervision of the field at `level`.
    #[allow(clippy::too_many_arguments)]
    fn implicit_terms<T: Real, R: Rng>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        data: &SceneData<T>,
        pyramid: &FeaturePyramid,
        projected: &[FeatureMap<T>],
        level: usize,
        guide: (&Grid<T>, &[bool]),
        candidates: &[usize],
        lambda: T,
        rng: &mut R,
    ) -> Result<ImplicitTerms, ModelError> {
        let levels = self.cfg.levels;
        let cams = data.scene.rig().cameras();
        let n = self.cfg.samples;
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for (c, cam) in cams.iter().enumerate() {
            let dm = &data.depths[c];
            let valid: Vec<usize> = (0..dm.valid.len()).filter(|&i| dm.valid[i]).collect();
            if valid.is_empty() {
                continue;
            }
            let take = self.cfg.rays_per_camera.min(valid.len());
            let picks: Vec<usize> = sample(rng, valid.len(), take).into_iter().map(|k| valid[k]).collect();
            let mut points = Vec::with_capacity(take * n);
            let mut dl = Vec::with_capacity(take * n);
            let mut far = Vec::with_capacity(take);
            for &p in &picks {
                let (u, v) = (p % dm.width, p / dm.width);
                let ray = cam
                    .generate_ray([T::from_usize_lossy(u), T::from_usize_lossy(v)])
                    .expect("pixel centre inside image");
                let t = self.ray_samples(store, &ray, cam, &projected[c], guide, rng);
                dl.extend(deltas(&t, ray.near));
                points.extend(t.iter().map(|&x| ray.at(x)));
                far.push(ray.far);
                gts.push(dm.depth[p]);
            }
            let fl = pyramid.for_volume_level(c, level, levels);
            let out = eval_field(g, store, &self.field, &points, cam, fl.map, fl.height, fl.width);
            let sigma = g.reshape(out.sigma, &[take, n]);
            let depth = g.reshape(out.depth, &[take, n]);
            let r = render_depth(g, sigma, depth, &Tensor::matrix(take, n, dl));
            let neg = g.neg(r.opacity);
            let rest = g.add_scalar(neg, T::one());
            let farv = g.constant(Tensor::vector(&far));
            let bg = g.mul(rest, farv);
            preds.push(g.add(r.depth, bg));
        }
        let depth = if preds.is_empty() {
            None
        } else {
            let p = stack(g, &preds);
            Some(loss_silog(g, p, &gts, lambda)?)
        };

        let truth = data.truth(level);
        let grid = data.grid(level);
        let in_cand = indices_to_mask(candidates, grid.len());
        let occupied = mask_to_indices(&truth.occupied);
        let mut free: Vec<usize> = candidates.iter().copied().filter(|&v| !truth.occupied[v]).collect();
        if free.is_empty() {
            free = (0..grid.len()).filter(|&v| !truth.occupied[v] && !in_cand[v]).collect();
        }
        let half = self.cfg.occupancy_samples / 2;
        let mut chosen: Vec<(usize, bool)> = Vec::new();
        for (pool, target) in [(&occupied, true), (&free, false)] {
            let k = half.min(pool.len());
            chosen.extend(sample(rng, pool.len(), k).into_iter().map(|j| (pool[j], target)));
        }
        let mut per_cam: Vec<Vec<(Vec3<T>, bool)>> = vec![Vec::new(); cams.len()];
        for (v, target) in chosen {
            let c = grid.center(v);
            let seeing: Vec<usize> = (0..cams.len()).filter(|&k| cams[k].project_point(c).valid).collect();
            if seeing.is_empty() {
                continue;
            }
            per_cam[seeing[rng.gen_range(0..seeing.len())]].push((c, target));
        }
        let mut sigmas = Vec::new();
        let mut targets = Vec::new();
        for (c, items) in per_cam.iter().enumerate() {
            if items.is_empty() {
                continue;
            }
            let pts: Vec<Vec3<T>> = items.iter().map(|x| x.0).collect();
            let fl = pyramid.for_volume_level(c, level, levels);
            let out = eval_field(g, store, &self.field, &pts, &cams[c], fl.map, fl.height, fl.width);
            sigmas.push(out.sigma);
            targets.extend(items.iter().map(|x| if x.1 { T::one() } else { T::zero() }));
        }
        let occupancy = if sigmas.is_empty() {
            None
        } else {
            let s = stack(g, &sigmas);
            Some(occupancy_bce(g, s, grid.voxel_size, targets))
        };
        Ok(ImplicitTerms {
            level,
            depth,
            occupancy,
        })
    }

    /// Coarse-to-fine pass over one scene. With `loss` set, also samples
    /// rays and voxel centres and builds the training objective.
    pub fn forward<T: Real, R: Rng>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        data: &SceneData<T>,
        loss: Option<&crate::fusion_loss::LossConfig>,
        rng: &mut R,
    ) -> Result<ForwardOutput, ModelError> {
        let levels = self.cfg.levels;
        let theta = T::lit(self.cfg.theta);
        let pyramid = self.encoder.encode_all(g, store, &data.images);
        let mut queries: Vec<QueryProposalSet> = Vec::with_capacity(levels);
        let mut heads: Vec<HeadOutput> = Vec::with_capacity(levels);
        let mut o_imp_all = vec![Vec::new()];
        let mut terms = Vec::new();
        for level in 1..=levels {
            let grid = data.grid(level);
            let q = if level == 1 {
                self.dense_level_one(g, store, grid)?
            } else {
                let prev = &queries[level - 2];
                let prev_head = &heads[level - 2];
                let (candidates, _) = upsample_indices(prev.dims, &prev.indices);
                let o_exp = if self.cfg.explicit {
                    let occ = g.value(prev_head.occupancy);
                    let on: Vec<usize> = prev_head
                        .indices
                        .iter()
                        .enumerate()
                        .filter(|&(r, _)| occ.data()[r] >= theta)
                        .map(|(_, &i)| i)
                        .collect();
                    upsample_mask(&indices_to_mask(&on, prev.dims.iter().product()), prev.dims)
                } else {
                    vec![false; grid.len()]
                };
                let o_imp = if self.cfg.nerf {
                    let projected = self.projected_maps(g, store, &pyramid, level);
                    if let Some(cfg) = loss {
                        let guide = prev.mask();
                        let t = self.implicit_terms(
                            g,
                            store,
                            data,
                            &pyramid,
                            &projected,
                            level,
                            (data.grid(level - 1), &guide),
                            &candidates,
                            T::lit(cfg.silog_lambda),
                            rng,
                        )?;
                        terms.push(t);
                    }
                    self.implicit_proposals(store, data, &projected, level, &candidates)
                } else {
                    vec![false; grid.len()]
                };
                let e = g.param(store, self.embedding);
                let mut q = hybrid_queries(g, level, grid.dims, &o_imp, &o_exp, Some(prev), e)?;
                o_imp_all.push(o_imp);
                self.add_position(g, store, &mut q, grid);
                q
            };
            let q = self.refine(g, store, &q, grid, data, &pyramid)?;
            let up = if level == 1 {
                let z = g.constant(Tensor::zeros(&[0, self.cfg.channels]));
                QueryProposalSet::new(g, 1, q.dims, Vec::new(), z)?
            } else {
                let u = upsample2x(g, &queries[level - 2], levels)?;
                let f = align_rows(g, &u, &q.indices);
                QueryProposalSet::new(g, level, q.dims, q.indices.clone(), f)?
            };
            let head = semantic_head(g, store, &q, &up, &self.heads[level - 1])?;
            queries.push(q);
            heads.push(head);
        }
        let loss = match loss {
            Some(cfg) => {
                let explicit = loss_explicit(g, &heads, &data.truths, cfg)?;
                let implicit = loss_implicit(g, &terms, cfg);
                let total = total_loss(g, explicit.total, implicit, cfg);
                Some(LossBreakdown {
                    explicit,
                    implicit,
                    implicit_terms: terms,
                    total,
                })
            }
            None => None,
        };
        Ok(ForwardOutput {
            pyramid,
            queries,
            heads,
            o_imp: o_imp_all,
            loss,
        })
    }

    /// Field-rendered depth of every pixel of camera `cam` at the finest
    /// level, after a forward pass in the same graph. Returns the map
    /// (`valid` where opacity reaches θ) and the per-ray samples.
    pub fn render_camera<T: Real, R: Rng>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        data: &SceneData<T>,
        out: &ForwardOutput,
        cam: usize,
        rng: &mut R,
    ) -> (DepthMap<T>, Vec<RaySampleSet<T>>) {
        let levels = self.cfg.levels;
        let camera = &data.scene.rig().cameras()[cam];
        let projected = &self.projected_maps(g, store, &out.pyramid, levels)[cam];
        let guide_grid = data.grid(levels.max(2) - 1);
        let guide = out.queries[levels.max(2) - 2].mask();
        let (w, h) = (camera.width(), camera.height());
        let n = self.cfg.samples;
        let mut rays = Vec::with_capacity(w * h);
        let mut ts = Vec::with_capacity(w * h);
        let mut points = Vec::with_capacity(w * h * n);
        let mut dl = Vec::with_capacity(w * h * n);
        for v in 0..h {
            for u in 0..w {
                let ray = camera
                    .generate_ray([T::from_usize_lossy(u), T::from_usize_lossy(v)])
                    .expect("pixel centre inside image");
                let t = self.ray_samples(store, &ray, camera, projected, (guide_grid, &guide), rng);
                dl.extend(deltas(&t, ray.near));
                points.extend(t.iter().map(|&x| ray.at(x)));
                rays.push(ray);
                ts.push(t);
            }
        }
        let fl = out.pyramid.for_volume_level(cam, levels, levels);
        let field = eval_field(g, store, &self.field, &points, camera, fl.map, fl.height, fl.width);
        let sigma = g.reshape(field.sigma, &[w * h, n]);
        let depth = g.reshape(field.depth, &[w * h, n]);
        let r = render_depth(g, sigma, depth, &Tensor::matrix(w * h, n, dl));
        let theta = T::lit(self.cfg.theta);
        let (d, o) = (g.value(r.depth).data(), g.value(r.opacity).data());
        let map = DepthMap {
            width: w,
            height: h,
            depth: (0..w * h).map(|i| d[i] + (T::one() - o[i]) * rays[i].far).collect(),
            valid: o.iter().map(|&x| x >= theta).collect(),
        };
        let (sv, dv) = (g.value(sigma).data(), g.value(depth).data());
        let samples = rays
            .into_iter()
            .zip(ts)
            .enumerate()
            .map(|(i, (ray, t))| RaySampleSet::new(ray, t, sv[i * n..(i + 1) * n].to_vec(), dv[i * n..(i + 1) * n].to_vec()))
            .collect();
        (map, samples)
    }

    /// Dense finest-level prediction: occupancy scores of the active set
    /// (zero elsewhere) and the best non-free class per voxel.
    pub fn predict_volume<T: Real>(&self, g: &Graph<T>, out: &ForwardOutput, grid: &Grid<T>) -> VoxelVolume<T> {
        let head = out.heads.last().expect("at least one level");
        let mut vol = VoxelVolume::empty(head.level, *grid);
        let logits = g.value(head.logits);
        let occ = g.value(head.occupancy);
        for (r, &i) in head.indices.iter().enumerate() {
            vol.occupancy[i] = occ.data()[r];
            let row = logits.row(r);
            let mut best = 1;
            for c in 2..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            vol.classes[i] = best as u8;
        }
        vol
    }
}
