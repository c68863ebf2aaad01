use crate::geometry::Camera;
use crate::scalar::Real;
use crate::voxels::Grid;

/// Per-voxel fused opacity and its binarization.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedOccupancy<T> {
    pub score: Vec<T>,
    pub mask: Vec<bool>,
}

/// Opacity of one voxel of edge `voxel_size` at density `sigma`.
pub fn voxel_opacity<T: Real>(sigma: T, voxel_size: T) -> T {
    -(-sigma * voxel_size).exp_m1()
}

/// Fuses per-camera densities at voxel centres: `per_camera[c][v]` is the
/// density camera `c` assigns voxel `v`, `None` where `v` is outside its
/// view. The fused score is the maximum opacity over cameras; voxels no
/// camera sees score 0.
pub fn fuse_multicam_occupancy<T: Real>(per_camera: &[Vec<Option<T>>], voxel_size: T, theta: T) -> FusedOccupancy<T> {
    assert!(!per_camera.is_empty(), "at least one camera");
    let n = per_camera[0].len();
    let mut score = vec![T::zero(); n];
    for cam in per_camera {
        assert_eq!(cam.len(), n, "one entry per voxel");
        for (s, sigma) in score.iter_mut().zip(cam) {
            if let Some(sigma) = sigma {
                *s = s.max(voxel_opacity(*sigma, voxel_size));
            }
        }
    }
    let mask = score.iter().map(|&s| s >= theta).collect();
    FusedOccupancy { score, mask }
}

/// Whether each listed voxel centre of `grid` projects into `camera`.
pub fn visible_voxels<T: Real>(grid: &Grid<T>, camera: &Camera<T>, voxels: &[usize]) -> Vec<bool> {
    voxels.iter().map(|&v| camera.project_point(grid.center(v)).valid).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_density_is_empty() {
        let f = fuse_multicam_occupancy(&[vec![Some(0.0f64); 10]], 0.25, 0.5);
        assert!(f.mask.iter().all(|&m| !m));
        assert!(f.score.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn shared_voxel_marked_once() {
        let mut a = vec![Some(0.0f64); 6];
        let mut b = vec![None; 6];
        a[2] = Some(1e4);
        b[2] = Some(1e4);
        let f = fuse_multicam_occupancy(&[a, b], 0.25, 0.5);
        assert_eq!(f.mask, vec![false, false, true, false, false, false]);
        assert!((f.score[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_is_free() {
        let f = fuse_multicam_occupancy(&[vec![None, Some(100.0f64)]], 0.25, 0.5);
        assert_eq!(f.mask, vec![false, true]);
    }

    proptest! {
        #[test]
        fn disjoint_frusta_union(
            owner in prop::collection::vec(0usize..3, 40),
            sig in prop::collection::vec(0.0f64..20.0, 40),
        ) {
            let cams: Vec<Vec<Option<f64>>> = (0..3)
                .map(|c| (0..40).map(|v| (owner[v] == c).then_some(sig[v])).collect())
                .collect();
            let fused = fuse_multicam_occupancy(&cams, 0.25, 0.5);
            let mut union = vec![false; 40];
            for cam in &cams {
                let m = fuse_multicam_occupancy(std::slice::from_ref(cam), 0.25, 0.5).mask;
                for (u, x) in union.iter_mut().zip(m) {
                    *u |= x;
                }
            }
            prop_assert_eq!(fused.mask, union);
        }
    }
}
