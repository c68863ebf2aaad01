//! Sparse voxel pyramid: sorted-index query sets, occupancy thresholding,
//! 2× refinement, semantic heads and submanifold sparse convolution.
//!
//! Level 1 is the coarsest; each level doubles every grid extent of the one
//! before it.

mod grid;
mod head;
mod query;
mod truth;

pub use grid::Grid;
pub use head::{neighbor_rows, semantic_head, sparse_conv3d, tap_offset, HeadOutput, TAPS};
pub use query::{
    align_rows, children, indices_to_mask, mask_to_indices, maxpool_mask, parent, threshold_occupancy,
    union_indices, upsample2x, upsample_indices, upsample_mask, QueryProposalSet,
};
pub use truth::{downsample_gt, LevelTruth, VoxelVolume};

#[derive(Debug, thiserror::Error)]
pub enum VoxelError {
    #[error("voxel indices must be strictly increasing")]
    UnsortedIndices,
    #[error("voxel index {index} outside a grid of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("expected {expected} feature rows, found shape {found:?}")]
    FeatureRows { expected: usize, found: Vec<usize> },
    #[error("level {0} is the finest level and cannot be refined")]
    FinestLevel(usize),
    #[error("query sets at levels {left} and {right} cannot be combined")]
    LevelMismatch { left: usize, right: usize },
    #[error("semantic head must output at least 2 columns, got {0}")]
    HeadWidth(usize),
    #[error("level {level} outside 1..={levels}")]
    Level { level: usize, levels: usize },
    #[error("grid {dims:?} is not divisible by {factor}")]
    Indivisible { dims: [usize; 3], factor: usize },
    #[error("mask of {found} voxels does not match a grid of {expected}")]
    MaskSize { expected: usize, found: usize },
}
