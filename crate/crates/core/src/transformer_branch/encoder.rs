use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::geometry::FeatureMap;
use crate::scalar::Real;

/// Feature grid of one camera at one stage, `[height·width, C]` row-major.
#[derive(Clone, Copy, Debug)]
pub struct FeatureLevel {
    pub map: Var,
    pub height: usize,
    pub width: usize,
}

/// Encoder outputs per camera. Stage 1 is the finest grid; each stage
/// halves both extents of the one before it.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub cameras: Vec<Vec<FeatureLevel>>,
}

impl FeaturePyramid {
    pub fn camera_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn stage_count(&self) -> usize {
        self.cameras.first().map_or(0, Vec::len)
    }

    /// Features read by volume level `level` of `levels`: the coarsest
    /// volume reads the coarsest stage.
    pub fn for_volume_level(&self, camera: usize, level: usize, levels: usize) -> FeatureLevel {
        self.cameras[camera][levels - level]
    }
}

/// Stack of 3×3 stride-2 convolutions with zero padding and rectifiers.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    layers: Vec<(ParamId, ParamId)>,
    in_channels: usize,
    channels: usize,
}

const KERNEL: usize = 9;

impl ImageEncoder {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        channels: usize,
        stages: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..stages)
            .map(|s| {
                let cin = if s == 0 { in_channels } else { channels };
                let w = store.add_uniform(format!("{prefix}.{s}.w"), &[KERNEL * cin, channels], KERNEL * cin, rng);
                let b = store.add_zeros(format!("{prefix}.{s}.b"), &[channels]);
                (w, b)
            })
            .collect();
        Self {
            layers,
            in_channels,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// All stage outputs for one image.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: &FeatureMap<T>) -> Vec<FeatureLevel> {
        assert_eq!(image.channels, self.in_channels, "image channels");
        let mut x = g.constant(image.to_tensor());
        let (mut h, mut w) = (image.height, image.width);
        let mut out = Vec::with_capacity(self.layers.len());
        for &(wi, bi) in &self.layers {
            let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
            let cin = g.shape(x)[1];
            let cols = g.gather_rows(x, im2col(h, w, ho, wo));
            let cols = g.reshape(cols, &[ho * wo, KERNEL * cin]);
            let wv = g.param(store, wi);
            let bv = g.param(store, bi);
            let y = g.linear(cols, wv, bv);
            x = g.relu(y);
            h = ho;
            w = wo;
            out.push(FeatureLevel { map: x, height: h, width: w });
        }
        out
    }

    pub fn encode_all<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, images: &[FeatureMap<T>]) -> FeaturePyramid {
        FeaturePyramid {
            cameras: images.iter().map(|im| self.encode(g, store, im)).collect(),
        }
    }

    pub fn zero_weights<T: Real>(&self, store: &mut ParamStore<T>) {
        for &(w, b) in &self.layers {
            store.get_mut(w).data_mut().iter_mut().for_each(|v| *v = T::zero());
            store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Source row of each (output pixel, tap) pair; `None` is padding.
fn im2col(h: usize, w: usize, ho: usize, wo: usize) -> Vec<Option<usize>> {
    let mut rows = Vec::with_capacity(ho * wo * KERNEL);
    for oy in 0..ho {
        for ox in 0..wo {
            for ky in 0..3 {
                for kx in 0..3 {
                    let y = (2 * oy + ky) as isize - 1;
                    let x = (2 * ox + kx) as isize - 1;
                    let inside = (0..h as isize).contains(&y) && (0..w as isize).contains(&x);
                    rows.push(inside.then(|| y as usize * w + x as usize));
                }
            }
        }
    }
    rows
}

/// Reference 3×3 stride-2 convolution on a value map, for tests.
#[cfg(test)]
pub(crate) fn conv_reference<T: Real>(map: &FeatureMap<T>, w: &crate::autodiff::Tensor<T>, b: &crate::autodiff::Tensor<T>) -> FeatureMap<T> {
    let (ho, wo) = (map.height.div_ceil(2), map.width.div_ceil(2));
    let cout = w.cols();
    let cin = map.channels;
    FeatureMap::from_fn(ho, wo, cout, |ox, oy, co| {
        let mut acc = b.data()[co];
        for ky in 0..3 {
            for kx in 0..3 {
                let y = (2 * oy + ky) as isize - 1;
                let x = (2 * ox + kx) as isize - 1;
                if y < 0 || x < 0 || y >= map.height as isize || x >= map.width as isize {
                    continue;
                }
                let cell = map.cell(x as usize, y as usize);
                for ci in 0..cin {
                    acc += cell[ci] * w.data()[((ky * 3 + kx) * cin + ci) * cout + co];
                }
            }
        }
        acc.max(T::zero())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::from_fn(h, w, 3, |x, y, c| ((x * 3 + y * 5 + c) as f64 * 0.41).cos() * 0.5 + 0.5)
    }

    #[test]
    fn extents_halve() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = ImageEncoder::new(&mut store, "e", 3, 6, 4, &mut rng);
        let mut g = Graph::new();
        let levels = enc.encode(&mut g, &store, &image(32, 32));
        let dims: Vec<_> = levels.iter().map(|l| (l.height, l.width)).collect();
        assert_eq!(dims, vec![(16, 16), (8, 8), (4, 4), (2, 2)]);
        for l in &levels {
            assert_eq!(g.shape(l.map), &[l.height * l.width, 6]);
        }
    }

    #[test]
    fn zero_weights_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = ImageEncoder::new(&mut store, "e", 3, 4, 3, &mut rng);
        enc.zero_weights(&mut store);
        let mut g = Graph::new();
        for l in enc.encode(&mut g, &store, &image(16, 16)) {
            assert!(g.value(l.map).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = ImageEncoder::new(&mut store, "e", 3, 5, 2, &mut rng);
        for &(_, b) in enc.layers() {
            store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.05);
        }
        let im = image(9, 7);
        let mut g = Graph::new();
        let levels = enc.encode(&mut g, &store, &im);
        let mut expect = im;
        for (l, &(w, b)) in levels.iter().zip(enc.layers()) {
            expect = conv_reference(&expect, store.get(w), store.get(b));
            assert_eq!((expect.height, expect.width), (l.height, l.width));
            for (a, e) in g.value(l.map).data().iter().zip(&expect.data) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_reach_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = ImageEncoder::new(&mut store, "e", 3, 3, 2, &mut rng);
        for &(_, b) in enc.layers() {
            store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.1);
        }
        let im = image(8, 8);
        let ids: Vec<_> = store.ids().collect();
        let rep = grad_check_params(
            |g, s| {
                let levels = enc.encode(g, s, &im);
                let last = levels.last().unwrap().map;
                let sq = g.square(last);
                g.sum(sq)
            },
            &store,
            &ids,
            1e-6,
            30,
            0,
        )
        .unwrap();
        assert!(rep.max_relative_error < 1e-5, "{rep:?}");
    }
}
