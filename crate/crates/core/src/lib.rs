//! Semantic occupancy from posed multi-camera images: a sparse coarse-to-fine
//! voxel pyramid whose active set is proposed jointly by attention-lifted
//! image features and a depth-supervised implicit occupancy field.

pub mod autodiff;
pub mod fusion_loss;
pub mod geometry;
pub mod harness;
pub mod nerf_branch;
pub mod scalar;
pub mod scenegen;
pub mod transformer_branch;
pub mod voxels;

pub use scalar::Real;

pub type TensorF64 = autodiff::Tensor<f64>;
pub type TensorF32 = autodiff::Tensor<f32>;
pub type GraphF64 = autodiff::Graph<f64>;
pub type GraphF32 = autodiff::Graph<f32>;
pub type ParamStoreF64 = autodiff::ParamStore<f64>;
pub type ParamStoreF32 = autodiff::ParamStore<f32>;
pub type CameraF64 = geometry::Camera<f64>;
pub type CameraF32 = geometry::Camera<f32>;
pub type GridF64 = voxels::Grid<f64>;
pub type GridF32 = voxels::Grid<f32>;
pub type SceneF64 = scenegen::GroundTruthScene<f64>;
pub type SceneF32 = scenegen::GroundTruthScene<f32>;
pub type SceneDataF64 = harness::SceneData<f64>;
pub type SceneDataF32 = harness::SceneData<f32>;
