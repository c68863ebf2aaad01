use rand::Rng;

use crate::autodiff::{Graph, Mlp, ParamStore, Tensor, Var};
use crate::geometry::{Camera, FeatureMap, PositionalEncodingConfig, Vec3};
use crate::scalar::Real;

/// Implicit occupancy field `f(γ(x), X′(x)) → (d, σ)`: an MLP over the
/// positional encoding of a point and the image feature at its projection.
/// Points are encoded in the observing camera's frame scaled by `1/far`.
/// Outputs are `σ = softplus(·) ≥ 0` and `d = lo + (hi − lo)·sigmoid(·)`
/// for the depth range `[lo, hi]` of the ray through the point.
#[derive(Clone, Debug)]
pub struct ImplicitField {
    mlp: Mlp,
    encoding: PositionalEncodingConfig,
    feature_channels: usize,
}

/// `[n, 1]` depth and density nodes.
#[derive(Clone, Copy, Debug)]
pub struct FieldOutput {
    pub depth: Var,
    pub sigma: Var,
}

impl ImplicitField {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        feature_channels: usize,
        hidden: &[usize],
        encoding: PositionalEncodingConfig,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![encoding.output_dim() + feature_channels];
        widths.extend_from_slice(hidden);
        widths.push(2);
        Self {
            mlp: Mlp::new(store, prefix, &widths, rng),
            encoding,
            feature_channels,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn encoding(&self) -> &PositionalEncodingConfig {
        &self.encoding
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    /// `[n, P]` encodings of world points in `camera`'s frame.
    pub fn encode_points<T: Real>(&self, camera: &Camera<T>, points: &[Vec3<T>]) -> Tensor<T> {
        let p = self.encoding.output_dim();
        let s = T::one() / camera.far();
        let mut data = vec![T::zero(); points.len() * p];
        for (x, row) in points.iter().zip(data.chunks_mut(p.max(1))) {
            let c = camera.world_to_camera(*x);
            self.encoding.encode_into([c[0] * s, c[1] * s, c[2] * s], row);
        }
        Tensor::matrix(points.len(), p, data)
    }

    /// Depth range `[near/cos, far/cos]` of the pixel ray through each point.
    pub fn depth_ranges<T: Real>(camera: &Camera<T>, points: &[Vec3<T>]) -> Vec<(T, T)> {
        points
            .iter()
            .map(|x| {
                let c = camera.world_to_camera(*x);
                let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                let cos = if c[2] > T::zero() && r > T::zero() { c[2] / r } else { T::one() };
                (camera.near() / cos, camera.far() / cos)
            })
            .collect()
    }

    /// Field on already-encoded inputs `[n, P]` and features `[n, C]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        encoded: Var,
        features: Var,
        ranges: &[(T, T)],
    ) -> FieldOutput {
        let x = g.concat_cols(&[encoded, features]);
        let out = self.mlp.forward(g, store, x);
        let raw_d = g.slice_cols(out, 0, 1);
        let raw_s = g.slice_cols(out, 1, 1);
        let n = ranges.len();
        let lo = g.constant(Tensor::matrix(n, 1, ranges.iter().map(|r| r.0).collect()));
        let span = g.constant(Tensor::matrix(n, 1, ranges.iter().map(|r| r.1 - r.0).collect()));
        let s = g.sigmoid(raw_d);
        let s = g.mul(s, span);
        let depth = g.add(s, lo);
        let sigma = g.softplus(raw_s);
        FieldOutput { depth, sigma }
    }

    /// First-layer feature weights applied to a whole feature map, so that a
    /// bilinear lookup in the result equals the feature part of layer one.
    pub fn project_feature_map<T: Real>(&self, store: &ParamStore<T>, map: &FeatureMap<T>) -> FeatureMap<T> {
        let (w, _) = self.mlp.layers()[0];
        let w = store.get(w);
        let p = self.encoding.output_dim();
        let h = w.cols();
        let wf = Tensor::matrix(self.feature_channels, h, w.data()[p * h..].to_vec());
        FeatureMap::from_tensor(map.height, map.width, &map.to_tensor().matmul(&wf))
    }

    /// Densities from encodings `[n, P]` and rows of a projected feature map
    /// (see [`Self::project_feature_map`]), without building a graph.
    pub fn sigma_from_projected<T: Real>(&self, store: &ParamStore<T>, encoded: &Tensor<T>, projected: &Tensor<T>) -> Vec<T> {
        let layers = self.mlp.layers();
        let (w0, b0) = layers[0];
        let w = store.get(w0);
        let p = self.encoding.output_dim();
        let h = w.cols();
        let wpe = Tensor::matrix(p, h, w.data()[..p * h].to_vec());
        let mut x = encoded.matmul(&wpe);
        x.add_assign(projected);
        let mut x = x.add_row(store.get(b0));
        let last = layers.len() - 1;
        for (i, &(wi, bi)) in layers.iter().enumerate() {
            if i > 0 {
                x = x.matmul(store.get(wi)).add_row(store.get(bi));
            }
            if i < last {
                x = x.map(|v| v.max(T::zero()));
            }
        }
        (0..x.rows()).map(|r| softplus(x.row(r)[1])).collect()
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Feature-grid coordinates of each point's projection into `camera`.
pub fn feature_coords<T: Real>(camera: &Camera<T>, points: &[Vec3<T>], map_h: usize, map_w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(points.len() * 2);
    for x in points {
        let p = camera.project_point(*x);
        let f = camera.image_to_feature(p.pixel, map_w, map_h);
        data.extend_from_slice(&f);
    }
    Tensor::matrix(points.len(), 2, data)
}

/// Evaluates the field at world `points` seen from `camera`: projects each
/// point, samples `feature_map` (`[map_h·map_w, C]`) bilinearly at the
/// projection, encodes the point, and runs the MLP.
#[allow(clippy::too_many_arguments)]
pub fn eval_field<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    field: &ImplicitField,
    points: &[Vec3<T>],
    camera: &Camera<T>,
    feature_map: Var,
    map_h: usize,
    map_w: usize,
) -> FieldOutput {
    let coords = g.constant(feature_coords(camera, points, map_h, map_w));
    let feats = g.bilinear(feature_map, map_h, map_w, coords);
    let enc = g.constant(field.encode_points(camera, points));
    let ranges = ImplicitField::depth_ranges(camera, points);
    field.forward(g, store, enc, feats, &ranges)
}
