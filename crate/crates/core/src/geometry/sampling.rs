use crate::autodiff::{BilinearCell, Tensor};
use crate::scalar::Real;

/// `height × width` grid of `channels`-vectors stored row-major (`y·width + x`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn cell(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// `[height·width, channels]` view for graph operations.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::matrix(self.height * self.width, self.channels, self.data.clone())
    }

    pub fn from_tensor(height: usize, width: usize, t: &Tensor<T>) -> Self {
        assert_eq!(t.rows(), height * width);
        Self {
            height,
            width,
            channels: t.cols(),
            data: t.data().to_vec(),
        }
    }
}

/// Bilinear blend of the four cells around `pixel` (x, y), clamped to the border.
pub fn bilinear_sample<T: Real>(map: &FeatureMap<T>, pixel: [T; 2]) -> Vec<T> {
    let mut out = vec![T::zero(); map.channels];
    BilinearCell::new(pixel[0], pixel[1], map.height, map.width).blend(&map.data, map.channels, &mut out);
    out
}
