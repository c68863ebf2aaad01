use crate::geometry::Vec3;
use crate::scalar::Real;

/// Regular axis-aligned voxel lattice. Linear indices are x-fastest:
/// `i = x + nx·(y + ny·z)`, so sorting linear indices sorts voxels
/// lexicographically by `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub dims: [usize; 3],
    pub voxel_size: T,
    pub origin: Vec3<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(dims: [usize; 3], voxel_size: T, origin: Vec3<T>) -> Self {
        Self {
            dims,
            voxel_size,
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        debug_assert!(c[0] < self.dims[0] && c[1] < self.dims[1] && c[2] < self.dims[2]);
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Index of the voxel at signed coordinates, if inside the grid.
    pub fn checked_index(&self, c: [i64; 3]) -> Option<usize> {
        for a in 0..3 {
            if c[a] < 0 || c[a] >= self.dims[a] as i64 {
                return None;
            }
        }
        Some(self.index([c[0] as usize, c[1] as usize, c[2] as usize]))
    }

    pub fn extent(&self) -> Vec3<T> {
        [0, 1, 2].map(|a| T::from_usize_lossy(self.dims[a]) * self.voxel_size)
    }

    pub fn upper(&self) -> Vec3<T> {
        let e = self.extent();
        [0, 1, 2].map(|a| self.origin[a] + e[a])
    }

    pub fn center(&self, i: usize) -> Vec3<T> {
        let c = self.coords(i);
        let half = T::lit(0.5);
        [0, 1, 2].map(|a| self.origin[a] + (T::from_usize_lossy(c[a]) + half) * self.voxel_size)
    }

    /// Voxel containing world point `p`, if any.
    pub fn locate(&self, p: Vec3<T>) -> Option<usize> {
        let mut c = [0i64; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            c[a] = u.to_i64()?;
        }
        self.checked_index(c)
    }

    /// Grid with every extent divided by `factor` and voxels `factor` times larger.
    pub fn coarsen(&self, factor: usize) -> Self {
        Self {
            dims: self.dims.map(|d| d / factor),
            voxel_size: self.voxel_size * T::from_usize_lossy(factor),
            origin: self.origin,
        }
    }

    pub fn refine(&self) -> Self {
        Self {
            dims: self.dims.map(|d| d * 2),
            voxel_size: self.voxel_size * T::lit(0.5),
            origin: self.origin,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Grid::new([3, 4, 5], 0.5f64, [0.0; 3]);
        for i in 0..g.len() {
            assert_eq!(g.index(g.coords(i)), i);
        }
        assert_eq!(g.index([1, 0, 0]), 1);
        assert_eq!(g.index([0, 1, 0]), 3);
        assert_eq!(g.index([0, 0, 1]), 12);
    }

    #[test]
    fn locate_center() {
        let g = Grid::new([4, 4, 2], 0.25f64, [-0.5, -0.5, 0.0]);
        for i in 0..g.len() {
            assert_eq!(g.locate(g.center(i)), Some(i));
        }
        assert_eq!(g.locate([-0.6, 0.0, 0.1]), None);
        assert_eq!(g.locate([0.0, 0.0, 0.5]), None);
    }

    #[test]
    fn coarsen_keeps_extent() {
        let g = Grid::new([32, 32, 8], 0.25f64, [1.0, 2.0, 0.0]);
        let c = g.coarsen(4);
        assert_eq!(c.dims, [8, 8, 2]);
        assert_eq!(c.extent(), g.extent());
        assert_eq!(c.refine().refine(), g);
    }
}
