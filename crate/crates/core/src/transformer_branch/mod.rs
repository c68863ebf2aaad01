//! Lifting of multi-camera image features onto sparse voxel queries with
//! deformable cross-attention.
//!
//! Every query projects its voxel centre into each camera. A layer computes
//! offsets and weights from the query once, samples each camera's value map
//! around the projection, averages over the cameras that see the query and
//! adds the result back to the query.

mod attention;
mod encoder;
mod lift;

pub use attention::{
    attention_plan, attention_weights, deform_attn, sample_heads, AttentionPlan, DeformAttnConfig, DeformAttnLayer,
};
pub use encoder::{FeatureLevel, FeaturePyramid, ImageEncoder};
pub use lift::{attend_cameras, lift_level, reference_points, LevelLifter, References};
