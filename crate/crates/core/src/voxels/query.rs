use crate::autodiff::{Graph, Var};
use crate::scalar::Real;
use crate::voxels::VoxelError;

/// Sparse set of voxels at one pyramid level with one feature row each.
/// `indices` are strictly increasing linear indices into a grid of `dims`
/// (x-fastest), i.e. lexicographic `(z, y, x)` order; row `r` of
/// `features` belongs to `indices[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryProposalSet {
    pub level: usize,
    pub dims: [usize; 3],
    pub indices: Vec<usize>,
    pub features: Var,
}

impl QueryProposalSet {
    pub fn new<T: Real>(
        g: &Graph<T>,
        level: usize,
        dims: [usize; 3],
        indices: Vec<usize>,
        features: Var,
    ) -> Result<Self, VoxelError> {
        let n = dims.iter().product::<usize>();
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(VoxelError::UnsortedIndices);
        }
        if let Some(&i) = indices.last() {
            if i >= n {
                return Err(VoxelError::IndexOutOfRange { index: i, len: n });
            }
        }
        let shape = g.shape(features);
        if shape.len() != 2 || shape[0] != indices.len() {
            return Err(VoxelError::FeatureRows {
                expected: indices.len(),
                found: shape.to_vec(),
            });
        }
        Ok(Self {
            level,
            dims,
            indices,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row holding voxel `index`, if active.
    pub fn row_of(&self, index: usize) -> Option<usize> {
        self.indices.binary_search(&index).ok()
    }

    pub fn mask(&self) -> Vec<bool> {
        indices_to_mask(&self.indices, self.dims.iter().product())
    }
}

/// `mask(v) = O(v) ≥ θ`: values strictly below θ are empty.
pub fn threshold_occupancy<T: Real>(occupancy: &[T], theta: T) -> Vec<bool> {
    occupancy.iter().map(|&o| o >= theta).collect()
}

pub fn mask_to_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

pub fn indices_to_mask(indices: &[usize], len: usize) -> Vec<bool> {
    let mut m = vec![false; len];
    for &i in indices {
        m[i] = true;
    }
    m
}

/// The 8 children, at `2·dims`, of voxel `i` of a grid of `dims`.
pub fn children(dims: [usize; 3], i: usize) -> [usize; 8] {
    let (nx, ny) = (dims[0], dims[1]);
    let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
    let (fx, fy) = (2 * nx, 2 * ny);
    let mut out = [0; 8];
    for (k, o) in out.iter_mut().enumerate() {
        let (dx, dy, dz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
        *o = (2 * c[0] + dx) + fx * ((2 * c[1] + dy) + fy * (2 * c[2] + dz));
    }
    out
}

/// Parent, at `fine_dims / 2`, of voxel `i` of a grid of `fine_dims`.
pub fn parent(fine_dims: [usize; 3], i: usize) -> usize {
    let (nx, ny) = (fine_dims[0], fine_dims[1]);
    let c = [i % nx / 2, (i / nx) % ny / 2, i / (nx * ny) / 2];
    c[0] + (nx / 2) * (c[1] + (ny / 2) * c[2])
}

/// Sorted children of `indices` with the parent position of each child.
pub fn upsample_indices(dims: [usize; 3], indices: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut pairs: Vec<(usize, usize)> = indices
        .iter()
        .enumerate()
        .flat_map(|(r, &i)| children(dims, i).map(|c| (c, r)))
        .collect();
    pairs.sort_unstable();
    pairs.into_iter().unzip()
}

pub fn upsample_mask(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let mut out = vec![false; 8 * mask.len()];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            for c in children(dims, i) {
                out[c] = true;
            }
        }
    }
    out
}

/// Max-pool of a mask over 2×2×2 blocks.
pub fn maxpool_mask(mask: &[bool], fine_dims: [usize; 3]) -> Vec<bool> {
    let mut out = vec![false; mask.len() / 8];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out[parent(fine_dims, i)] = true;
        }
    }
    out
}

/// Nearest-neighbour 2× refinement: every voxel becomes its 8 children,
/// each carrying a copy of the parent's feature row.
pub fn upsample2x<T: Real>(
    g: &mut Graph<T>,
    q: &QueryProposalSet,
    max_level: usize,
) -> Result<QueryProposalSet, VoxelError> {
    if q.level >= max_level {
        return Err(VoxelError::FinestLevel(q.level));
    }
    let (indices, rows) = upsample_indices(q.dims, &q.indices);
    let features = g.gather_rows(q.features, rows.into_iter().map(Some).collect());
    Ok(QueryProposalSet {
        level: q.level + 1,
        dims: q.dims.map(|d| 2 * d),
        indices,
        features,
    })
}

/// Feature rows of `q` realigned to `indices`, zero where `q` has no row.
pub fn align_rows<T: Real>(g: &mut Graph<T>, q: &QueryProposalSet, indices: &[usize]) -> Var {
    let map = indices.iter().map(|&i| q.row_of(i)).collect();
    g.gather_rows(q.features, map)
}

/// Sorted union of two sorted index lists.
pub fn union_indices(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}
