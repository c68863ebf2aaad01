//! Depth-supervised implicit occupancy field: ray sampling, field
//! evaluation, volume rendering of depth and multi-camera fusion of the
//! field into a voxel mask.

mod field;
mod fusion;
mod render;
mod sampling;

pub use field::{eval_field, feature_coords, FieldOutput, ImplicitField};
pub use fusion::{fuse_multicam_occupancy, visible_voxels, voxel_opacity, FusedOccupancy};
pub use render::{
    render_depth, render_depth_values, render_weights, RaySampleSet, RenderOutput, SAMPLE_CSV_HEADER,
};
pub use sampling::{
    deltas, sample_hierarchical, sample_occupancy_aware, sample_probabilistic, sample_uniform,
    select_occupancy_aware, OccupancySamples,
};
