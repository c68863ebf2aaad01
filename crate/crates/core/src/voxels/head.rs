use crate::autodiff::{Graph, Mlp, ParamStore, Var};
use crate::scalar::Real;
use crate::voxels::query::{align_rows, union_indices, QueryProposalSet};
use crate::voxels::VoxelError;

/// Per-voxel predictions of a semantic head over `indices`.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub level: usize,
    pub dims: [usize; 3],
    pub indices: Vec<usize>,
    /// `[n, K]` class logits.
    pub logits: Var,
    /// `[n, 1]` pre-sigmoid occupancy.
    pub occupancy_logit: Var,
    /// `[n, 1]` occupancy score in `[0, 1]`.
    pub occupancy: Var,
}

/// `h(q + up_q)` over the union of both supports, a missing operand counting
/// as zero. `h` outputs `K + 1` columns: the class logits, then the
/// occupancy logit.
pub fn semantic_head<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    q: &QueryProposalSet,
    up_q: &QueryProposalSet,
    h: &Mlp,
) -> Result<HeadOutput, VoxelError> {
    if q.level != up_q.level || q.dims != up_q.dims {
        return Err(VoxelError::LevelMismatch {
            left: q.level,
            right: up_q.level,
        });
    }
    if h.output_width() < 2 {
        return Err(VoxelError::HeadWidth(h.output_width()));
    }
    let k = h.output_width() - 1;
    let indices = union_indices(&q.indices, &up_q.indices);
    let input = if up_q.is_empty() && indices.len() == q.len() {
        q.features
    } else if q.is_empty() && indices.len() == up_q.len() {
        up_q.features
    } else {
        let a = align_rows(g, q, &indices);
        let b = align_rows(g, up_q, &indices);
        g.add(a, b)
    };
    let out = h.forward(g, store, input);
    let logits = g.slice_cols(out, 0, k);
    let occupancy_logit = g.slice_cols(out, k, 1);
    let occupancy = g.sigmoid(occupancy_logit);
    Ok(HeadOutput {
        level: q.level,
        dims: q.dims,
        indices,
        logits,
        occupancy_logit,
        occupancy,
    })
}

/// Stencil tap order of [`sparse_conv3d`] kernels: `(dz, dy, dx)` each in
/// `-1..=1`, x fastest.
pub const TAPS: usize = 27;

pub fn tap_offset(t: usize) -> [i64; 3] {
    [(t % 3) as i64 - 1, ((t / 3) % 3) as i64 - 1, (t / 9) as i64 - 1]
}

/// For every active voxel and tap, the row of the active neighbour, if any.
pub fn neighbor_rows(dims: [usize; 3], indices: &[usize]) -> Vec<Option<usize>> {
    let (nx, ny) = (dims[0], dims[1]);
    let mut out = Vec::with_capacity(indices.len() * TAPS);
    for &i in indices {
        let c = [(i % nx) as i64, ((i / nx) % ny) as i64, (i / (nx * ny)) as i64];
        for t in 0..TAPS {
            let o = tap_offset(t);
            let n = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
            let inside = (0..3).all(|a| n[a] >= 0 && n[a] < dims[a] as i64);
            out.push(if inside {
                let j = n[0] as usize + nx * (n[1] as usize + ny * n[2] as usize);
                indices.binary_search(&j).ok()
            } else {
                None
            });
        }
    }
    out
}

/// Submanifold 3×3×3 convolution: the active set is unchanged and each
/// output row aggregates only active neighbours. `kernel` is
/// `[27·C_in, C_out]`, tap-major in [`TAPS`] order.
pub fn sparse_conv3d<T: Real>(g: &mut Graph<T>, q: &QueryProposalSet, kernel: Var) -> QueryProposalSet {
    let c_in = g.shape(q.features)[1];
    assert_eq!(g.shape(kernel)[0], TAPS * c_in, "kernel rows must be 27·C_in");
    let n = q.len();
    let gathered = g.gather_rows(q.features, neighbor_rows(q.dims, &q.indices));
    let patches = g.reshape(gathered, &[n, TAPS * c_in]);
    let features = g.matmul(patches, kernel);
    QueryProposalSet {
        level: q.level,
        dims: q.dims,
        indices: q.indices.clone(),
        features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::voxels::query::mask_to_indices;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, dims: [usize; 3], p: f64, c: usize) -> QueryProposalSet {
        let n = dims.iter().product::<usize>();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(p)).collect();
        let idx = mask_to_indices(&mask);
        let data = (0..idx.len() * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = g.constant(Tensor::matrix(idx.len(), c, data));
        QueryProposalSet::new(g, 2, dims, idx, f).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Tensor<f64> {
        Tensor::matrix(TAPS * c_in, c_out, (0..TAPS * c_in * c_out).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Zero-padded dense convolution evaluated at every voxel.
    fn dense_conv(dims: [usize; 3], dense: &[f64], c_in: usize, kernel: &Tensor<f64>, c_out: usize) -> Vec<f64> {
        let n = dims.iter().product::<usize>();
        let mut out = vec![0.0; n * c_out];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = x + dims[0] * (y + dims[1] * z);
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if xx < 0 || yy < 0 || zz < 0 || xx >= dims[0] as i64 || yy >= dims[1] as i64 || zz >= dims[2] as i64 {
                                    continue;
                                }
                                let j = xx as usize + dims[0] * (yy as usize + dims[1] * zz as usize);
                                let t = ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                                for ci in 0..c_in {
                                    let v = dense[j * c_in + ci];
                                    for co in 0..c_out {
                                        out[i * c_out + co] += v * kernel.data()[(t * c_in + ci) * c_out + co];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn check_against_dense(g: &mut Graph<f64>, q: &QueryProposalSet, kernel: &Tensor<f64>, c_out: usize) {
        let c_in = g.shape(q.features)[1];
        let n = q.dims.iter().product::<usize>();
        let mut dense = vec![0.0; n * c_in];
        for (r, &i) in q.indices.iter().enumerate() {
            dense[i * c_in..(i + 1) * c_in].copy_from_slice(g.value(q.features).row(r));
        }
        let expect = dense_conv(q.dims, &dense, c_in, kernel, c_out);
        let kv = g.constant(kernel.clone());
        let out = sparse_conv3d(g, q, kv);
        assert_eq!(out.indices, q.indices);
        for (r, &i) in out.indices.iter().enumerate() {
            for co in 0..c_out {
                let a = g.value(out.features).row(r)[co];
                assert!((a - expect[i * c_out + co]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let q = random_set(&mut g, &mut rng, [5, 4, 3], 0.5, 3);
        let mut k = Tensor::zeros(&[TAPS * 3, 3]);
        for c in 0..3 {
            k.data_mut()[(13 * 3 + c) * 3 + c] = 1.0;
        }
        let kv = g.constant(k);
        let out = sparse_conv3d(&mut g, &q, kv);
        assert_eq!(g.value(out.features), g.value(q.features));
    }

    #[test]
    fn isolated_voxel_gets_center_tap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let f = g.constant(Tensor::matrix(1, 2, vec![0.5, -2.0]));
        let q = QueryProposalSet::new(&g, 1, [3, 3, 3], vec![13], f).unwrap();
        let k = random_kernel(&mut rng, 2, 4);
        let center = Tensor::matrix(2, 4, k.data()[13 * 8..14 * 8].to_vec());
        let expect = Tensor::matrix(1, 2, vec![0.5, -2.0]).matmul(&center);
        let kv = g.constant(k);
        let out = sparse_conv3d(&mut g, &q, kv);
        assert_eq!(g.value(out.features), &expect);
    }

    #[test]
    fn adjacent_pair_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let f = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, -0.5, 0.25]));
        let q = QueryProposalSet::new(&g, 1, [4, 4, 4], vec![21, 22], f).unwrap();
        let k = random_kernel(&mut rng, 2, 3);
        check_against_dense(&mut g, &q, &k, 3);
    }

    #[test]
    fn random_grids_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dims in [[1, 1, 1], [2, 3, 1], [4, 4, 2], [5, 3, 7], [8, 8, 8]] {
            for p in [0.1, 0.5, 0.9] {
                let mut g = Graph::new();
                let q = random_set(&mut g, &mut rng, dims, p, 2);
                let k = random_kernel(&mut rng, 2, 2);
                check_against_dense(&mut g, &q, &k, 2);
            }
        }
    }

    fn const_set(g: &mut Graph<f64>, indices: Vec<usize>, c: usize, v: f64) -> QueryProposalSet {
        let f = g.constant(Tensor::filled(&[indices.len(), c], v));
        QueryProposalSet::new(g, 2, [2, 2, 2], indices, f).unwrap()
    }

    #[test]
    fn empty_skip_is_plain_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[3, 4, 6], &mut rng);
        let mut g = Graph::new();
        let q = const_set(&mut g, vec![1, 3, 6], 3, 0.7);
        let up = const_set(&mut g, vec![], 3, 0.0);
        let out = semantic_head(&mut g, &store, &q, &up, &h).unwrap();
        let direct = h.forward_values(&store, g.value(q.features));
        let o = g.value(out.logits);
        for r in 0..3 {
            for c in 0..5 {
                assert!((o.row(r)[c] - direct.row(r)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn union_support_zero_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[2, 3], &mut rng);
        let mut g = Graph::new();
        let q = const_set(&mut g, vec![0, 2], 2, 1.0);
        let up = const_set(&mut g, vec![2, 5], 2, 0.5);
        let out = semantic_head(&mut g, &store, &q, &up, &h).unwrap();
        assert_eq!(out.indices, vec![0, 2, 5]);
        let expect = h.forward_values(&store, &Tensor::matrix(3, 2, vec![1.0, 1.0, 1.5, 1.5, 0.5, 0.5]));
        for r in 0..3 {
            assert!((g.value(out.logits).row(r)[0] - expect.row(r)[0]).abs() < 1e-12);
            assert!((g.value(out.occupancy_logit).row(r)[0] - expect.row(r)[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[4, 6], &mut rng);
        h.zero_weights(&mut store);
        let mut g = Graph::new();
        let q = const_set(&mut g, vec![0, 1, 7], 4, 3.0);
        let up = const_set(&mut g, vec![1], 4, -1.0);
        let out = semantic_head(&mut g, &store, &q, &up, &h).unwrap();
        let l = g.value(out.logits);
        for r in 0..l.rows() {
            assert!(l.row(r).iter().all(|&x| x == l.row(r)[0]));
        }
    }

    #[test]
    fn occupancy_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[3, 8, 4], &mut rng);
        let mut g = Graph::new();
        let data = (0..3000).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let f = g.constant(Tensor::matrix(1000, 3, data));
        let q = QueryProposalSet::new(&g, 3, [10, 10, 10], (0..1000).collect(), f).unwrap();
        let zf = g.constant(Tensor::zeros(&[0, 3]));
        let up = QueryProposalSet::new(&g, 3, [10, 10, 10], vec![], zf).unwrap();
        let out = semantic_head(&mut g, &store, &q, &up, &h).unwrap();
        assert!(g.value(out.occupancy).data().iter().all(|&o| (0.0..=1.0).contains(&o)));
    }

    #[test]
    fn level_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let h = Mlp::new(&mut store, "h", &[2, 3], &mut rng);
        let mut g = Graph::new();
        let q = const_set(&mut g, vec![0], 2, 1.0);
        let mut up = const_set(&mut g, vec![0], 2, 1.0);
        up.level = 3;
        assert!(semantic_head(&mut g, &store, &q, &up, &h).is_err());
    }
}
