//! Pinhole cameras, rays, positional encoding and bilinear feature lookup.

mod camera;
mod encoding;
mod sampling;
pub mod vec3;

pub use camera::{Camera, CameraConfig, CameraRig, Intrinsics, Projection, Ray};
pub use encoding::{positional_encoding, PositionalEncodingConfig};
pub use sampling::{bilinear_sample, FeatureMap};
pub use vec3::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel ({u}, {v}) is outside the image")]
    PixelOutOfBounds { u: f64, v: f64 },
    #[error("rig config: {0}")]
    Config(String),
}
