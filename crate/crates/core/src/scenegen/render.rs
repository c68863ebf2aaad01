use crate::geometry::{Camera, FeatureMap};
use crate::scalar::Real;
use crate::scenegen::{first_hit, traverse, GroundTruthScene, SceneError};

/// Per-pixel depth (distance along the pixel ray). Pixels whose ray leaves
/// the grid without a hit have `valid = false` and depth 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> DepthMap<T> {
    pub fn get(&self, u: usize, v: usize) -> Option<T> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Voxels seen by the rig: `visible_occupied` is the first hit of some pixel
/// ray, `observed_free` is crossed by some ray before its first hit.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityGrid {
    pub visible_occupied: Vec<bool>,
    pub observed_free: Vec<bool>,
}

impl VisibilityGrid {
    pub fn visible(&self, i: usize) -> bool {
        self.visible_occupied[i] || self.observed_free[i]
    }

    /// Evaluation mask: every voxel any camera observes.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.visible_occupied.len()).map(|i| self.visible(i)).collect()
    }

    pub fn visible_occupied_count(&self) -> usize {
        self.visible_occupied.iter().filter(|&&v| v).count()
    }
}

fn camera<T: Real>(scene: &GroundTruthScene<T>, index: usize) -> Result<&Camera<T>, SceneError> {
    scene.rig().get(index).ok_or(SceneError::CameraIndex {
        index,
        len: scene.rig().len(),
    })
}

fn pixel_ray<T: Real>(cam: &Camera<T>, u: usize, v: usize) -> crate::geometry::Ray<T> {
    cam.generate_ray([T::from_usize_lossy(u), T::from_usize_lossy(v)])
        .expect("pixel centres are inside the image")
}

pub fn render_gt_depth<T: Real>(scene: &GroundTruthScene<T>, camera_index: usize) -> Result<DepthMap<T>, SceneError> {
    let cam = camera(scene, camera_index)?;
    let (w, h) = (cam.width(), cam.height());
    let mut depth = vec![T::zero(); w * h];
    let mut valid = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let ray = pixel_ray(cam, u, v);
            if let Some(hit) = first_hit(scene.grid(), ray.origin, ray.direction, T::zero(), T::infinity(), |i| {
                scene.occupied(i)
            }) {
                depth[v * w + u] = hit.t_enter;
                valid[v * w + u] = true;
            }
        }
    }
    Ok(DepthMap {
        width: w,
        height: h,
        depth,
        valid,
    })
}

pub fn gt_visibility<T: Real>(scene: &GroundTruthScene<T>) -> VisibilityGrid {
    let n = scene.grid().len();
    let mut visible_occupied = vec![false; n];
    let mut observed_free = vec![false; n];
    for cam in scene.rig().cameras() {
        for v in 0..cam.height() {
            for u in 0..cam.width() {
                let ray = pixel_ray(cam, u, v);
                traverse(scene.grid(), ray.origin, ray.direction, T::zero(), T::infinity(), |s| {
                    if scene.occupied(s.voxel) {
                        visible_occupied[s.voxel] = true;
                        false
                    } else {
                        observed_free[s.voxel] = true;
                        true
                    }
                });
            }
        }
    }
    VisibilityGrid {
        visible_occupied,
        observed_free,
    }
}

pub const BACKGROUND: [f64; 3] = [0.12, 0.16, 0.30];

/// Fixed RGB albedo per class id.
pub fn class_albedo(class: u8) -> [f64; 3] {
    match class {
        0 => BACKGROUND,
        1 => [0.55, 0.50, 0.42],
        2 => [0.85, 0.85, 0.88],
        3 => [0.90, 0.30, 0.20],
        4 => [0.20, 0.55, 0.90],
        c => {
            let h = c as f64 * 0.618_033_988_75;
            let f = h - h.floor();
            [0.3 + 0.6 * f, 0.9 - 0.6 * f, 0.3 + 0.4 * (1.0 - (2.0 * f - 1.0).abs())]
        }
    }
}

const FACE_SHADE: [f64; 3] = [0.8, 0.65, 1.0];
const FOG_DISTANCE: f64 = 12.0;

/// RGB value of one pixel: albedo of the first-hit class, shaded by the
/// axis of the face hit and attenuated with distance.
pub fn render_image_pixels<T: Real>(scene: &GroundTruthScene<T>, cam: &Camera<T>, u: usize, v: usize) -> [T; 3] {
    let ray = pixel_ray(cam, u, v);
    match first_hit(scene.grid(), ray.origin, ray.direction, T::zero(), T::infinity(), |i| {
        scene.occupied(i)
    }) {
        Some(hit) => {
            let a = class_albedo(scene.semantics()[hit.voxel]);
            let shade = hit.entry_axis.map_or(1.0, |ax| FACE_SHADE[ax]);
            let fog = (-hit.t_enter.to_f64_lossy() / FOG_DISTANCE).exp();
            a.map(|c| T::lit(c * shade * fog))
        }
        None => BACKGROUND.map(T::lit),
    }
}

/// Shaded `height × width × 3` image for one camera.
pub fn render_image<T: Real>(scene: &GroundTruthScene<T>, camera_index: usize) -> Result<FeatureMap<T>, SceneError> {
    let cam = camera(scene, camera_index)?;
    let mut img = FeatureMap::zeros(cam.height(), cam.width(), 3);
    for v in 0..cam.height() {
        for u in 0..cam.width() {
            let px = render_image_pixels(scene, cam, u, v);
            let i = (v * cam.width() + u) * 3;
            img.data[i..i + 3].copy_from_slice(&px);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{vec3, CameraRig, Intrinsics};
    use crate::scenegen::{generate_scene, SceneSpec};
    use crate::voxels::Grid;

    fn one_camera_scene(semantics_at: &[([usize; 3], u8)]) -> GroundTruthScene<f64> {
        let grid = Grid::new([20, 20, 20], 0.25, [-2.5, -2.5, -2.5]);
        let cam = Camera::look_at(
            [-4.875, 0.125, 0.125],
            [0.125, 0.125, 0.125],
            [0.0, 0.0, 1.0],
            Intrinsics {
                fx: 20.0,
                fy: 20.0,
                cx: 8.0,
                cy: 8.0,
            },
            17,
            17,
            0.5,
            20.0,
        )
        .unwrap();
        let mut sem = vec![0u8; grid.len()];
        for (c, k) in semantics_at {
            sem[grid.index(*c)] = *k;
        }
        GroundTruthScene::new(grid, sem, 3, CameraRig::new(vec![cam]), 0).unwrap()
    }

    #[test]
    fn all_free_has_no_returns() {
        let s = one_camera_scene(&[]);
        assert_eq!(render_gt_depth(&s, 0).unwrap().valid_count(), 0);
        assert_eq!(gt_visibility(&s).visible_occupied_count(), 0);
    }

    #[test]
    fn camera_index_checked() {
        let s = one_camera_scene(&[]);
        assert!(render_gt_depth(&s, 1).is_err());
    }

    #[test]
    fn voxel_on_axis_at_five_metres() {
        // Voxel (10, 10, 10) spans [0, 0.25]³; its centre is 5 m down the optical axis.
        let s = one_camera_scene(&[([10, 10, 10], 1)]);
        let d = render_gt_depth(&s, 0).unwrap();
        let half_diag = 0.5 * 0.25 * 3f64.sqrt();
        let depth = d.get(8, 8).expect("centre pixel hits");
        let center = s.grid().center(s.grid().index([10, 10, 10]));
        assert!((vec3::distance(center, [-4.875, 0.125, 0.125]) - 5.0).abs() < 1e-12);
        assert!((depth - 5.0).abs() <= half_diag, "{depth}");
        // The near face sits half a voxel in front of the centre.
        assert!((depth - 4.875).abs() < 1e-12);
        assert!(gt_visibility(&s).visible_occupied[s.grid().index([10, 10, 10])]);
    }

    #[test]
    fn slab_farther_means_depth_not_nearer() {
        let slab = |x: usize| {
            let mut v = Vec::new();
            for y in 0..20 {
                for z in 0..20 {
                    v.push(([x, y, z], 1u8));
                }
            }
            one_camera_scene(&v)
        };
        for x in 4..18 {
            let a = render_gt_depth(&slab(x), 0).unwrap();
            let b = render_gt_depth(&slab(x + 1), 0).unwrap();
            for i in 0..a.depth.len() {
                let da = if a.valid[i] { a.depth[i] } else { f64::INFINITY };
                let db = if b.valid[i] { b.depth[i] } else { f64::INFINITY };
                assert!(db >= da);
            }
        }
    }

    #[test]
    fn depth_points_land_in_occupied_voxels() {
        let scene = generate_scene::<f64>(&SceneSpec::default(), 3).unwrap();
        for c in 0..scene.rig().len() {
            let cam = &scene.rig().cameras()[c];
            let d = render_gt_depth(&scene, c).unwrap();
            for v in 0..d.height {
                for u in 0..d.width {
                    let Some(t) = d.get(u, v) else { continue };
                    let ray = cam.generate_ray([u as f64, v as f64]).unwrap();
                    let p = ray.at(t + 1e-7);
                    let i = scene.grid().locate(p).expect("inside grid");
                    assert!(scene.occupied(i));
                }
            }
        }
    }

    #[test]
    fn image_is_background_on_misses() {
        let s = one_camera_scene(&[]);
        let img = render_image(&s, 0).unwrap();
        assert!(img.data.chunks(3).all(|p| p == BACKGROUND));
    }
}
