use crate::geometry::vec3::Vec3;
use crate::scalar::Real;

/// Sinusoidal encoding of a 3D point at frequencies `2^k·π`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionalEncodingConfig {
    pub n_frequencies: usize,
    pub include_input: bool,
}

impl Default for PositionalEncodingConfig {
    fn default() -> Self {
        Self {
            n_frequencies: 6,
            include_input: true,
        }
    }
}

impl PositionalEncodingConfig {
    pub fn output_dim(&self) -> usize {
        3 * (usize::from(self.include_input) + 2 * self.n_frequencies)
    }

    /// Layout: `[x, y, z]` (if included), then per frequency `k` the three
    /// sines followed by the three cosines.
    pub fn encode_into<T: Real>(&self, x: Vec3<T>, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.output_dim());
        let mut i = 0;
        if self.include_input {
            out[..3].copy_from_slice(&x);
            i = 3;
        }
        let pi = T::lit(std::f64::consts::PI);
        let mut freq = pi;
        for _ in 0..self.n_frequencies {
            for c in 0..3 {
                out[i + c] = (freq * x[c]).sin();
                out[i + 3 + c] = (freq * x[c]).cos();
            }
            i += 6;
            freq = freq + freq;
        }
    }

    pub fn encode<T: Real>(&self, x: Vec3<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_dim()];
        self.encode_into(x, &mut out);
        out
    }
}

/// Free-function form of [`PositionalEncodingConfig::encode`].
pub fn positional_encoding<T: Real>(x: Vec3<T>, cfg: &PositionalEncodingConfig) -> Vec<T> {
    cfg.encode(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_encodes_to_zero_sines_unit_cosines() {
        let cfg = PositionalEncodingConfig {
            n_frequencies: 4,
            include_input: false,
        };
        let e = positional_encoding([0.0f64; 3], &cfg);
        for k in 0..4 {
            assert_eq!(&e[k * 6..k * 6 + 3], &[0.0; 3]);
            assert_eq!(&e[k * 6 + 3..k * 6 + 6], &[1.0; 3]);
        }
    }

    #[test]
    fn zero_frequencies_is_identity() {
        let cfg = PositionalEncodingConfig {
            n_frequencies: 0,
            include_input: true,
        };
        assert_eq!(positional_encoding([0.3, -2.0, 7.0], &cfg), vec![0.3, -2.0, 7.0]);
    }

    #[test]
    fn default_dimension_is_39() {
        assert_eq!(PositionalEncodingConfig::default().output_dim(), 39);
    }

    proptest! {
        #[test]
        fn band_lipschitz(
            a in prop::array::uniform3(-2.0f64..2.0),
            b in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let cfg = PositionalEncodingConfig { n_frequencies: 5, include_input: false };
            let ea = cfg.encode(a);
            let eb = cfg.encode(b);
            let dist = ((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2) + (a[2]-b[2]).powi(2)).sqrt();
            for k in 0..5 {
                let bound = 2f64.powi(k as i32) * std::f64::consts::PI * dist + 1e-12;
                for j in 0..6 {
                    let d = (ea[k * 6 + j] - eb[k * 6 + j]).abs();
                    prop_assert!(d <= bound);
                }
            }
        }
    }
}
