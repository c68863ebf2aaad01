//! Deterministic synthetic scenes: a voxelised world of floor, walls and
//! boxes observed by a ring of inward-facing cameras, with exact ray-cast
//! depth, visibility and shaded images.

mod dda;
mod io;
mod render;

pub use dda::{clip_to_grid, first_hit, traverse, DdaStep};
pub use io::{
    read_depth_map, read_volume, write_depth_map, write_volume, VolumeFile, DEPTH_MAGIC, SCENE_MAGIC,
    SCENE_VERSION, PREDICTION_VERSION,
};
pub use render::{
    class_albedo, gt_visibility, render_gt_depth, render_image, render_image_pixels, DepthMap, VisibilityGrid,
    BACKGROUND,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{vec3, CameraRig, GeometryError, Intrinsics, Vec3};
use crate::scalar::Real;
use crate::voxels::Grid;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("grid dimensions must all be nonzero, got {0:?}")]
    EmptyGrid([usize; 3]),
    #[error("class count must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("occluder fraction {0} is outside [0, 1]")]
    OccluderFraction(f64),
    #[error("voxel size must be positive")]
    VoxelSize,
    #[error("semantics length {found} does not match grid size {expected}")]
    SemanticsLength { expected: usize, found: usize },
    #[error("class id {id} is not below the class count {count}")]
    ClassOutOfRange { id: u8, count: usize },
    #[error("camera index {index} out of range for a rig of {len}")]
    CameraIndex { index: usize, len: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Camera ring placement relative to the grid: `count` cameras at horizontal
/// distance `radius_scale · max(half-extent)` from the grid centre, raised
/// `height_scale · radius` above the floor, all facing a point a quarter of
/// the way up the grid centre column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigSpec {
    pub count: usize,
    pub radius_scale: f64,
    pub height_scale: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub fov_degrees: f64,
    pub near: f64,
    pub far_scale: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            count: 4,
            radius_scale: 1.6,
            height_scale: 0.45,
            image_width: 32,
            image_height: 32,
            fov_degrees: 90.0,
            near: 0.5,
            far_scale: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub n_boxes: usize,
    /// The first wall is the floor slab; the rest are thin vertical walls.
    pub n_walls: usize,
    pub occluder_fraction: f64,
    pub class_count: usize,
    pub grid_dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub rig: RigSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_boxes: 3,
            n_walls: 2,
            occluder_fraction: 0.5,
            class_count: 5,
            grid_dims: [32, 32, 8],
            voxel_size: 0.25,
            origin: [-4.0, -4.0, 0.0],
            rig: RigSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.grid_dims.contains(&0) {
            return Err(SceneError::EmptyGrid(self.grid_dims));
        }
        if self.class_count < 2 {
            return Err(SceneError::TooFewClasses(self.class_count));
        }
        if !(0.0..=1.0).contains(&self.occluder_fraction) {
            return Err(SceneError::OccluderFraction(self.occluder_fraction));
        }
        if !(self.voxel_size > 0.0) {
            return Err(SceneError::VoxelSize);
        }
        Ok(())
    }
}

pub fn floor_class(_k: usize) -> u8 {
    1
}

pub fn wall_class(k: usize) -> u8 {
    if k > 2 {
        2
    } else {
        1
    }
}

pub fn box_class(i: usize, k: usize) -> u8 {
    if k > 3 {
        (3 + i % (k - 3)) as u8
    } else {
        (k - 1) as u8
    }
}

/// Voxelised world with per-voxel class ids (0 = free) and its camera rig.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthScene<T> {
    grid: Grid<T>,
    semantics: Vec<u8>,
    class_count: usize,
    rig: CameraRig<T>,
    seed: u64,
}

impl<T: Real> GroundTruthScene<T> {
    pub fn new(
        grid: Grid<T>,
        semantics: Vec<u8>,
        class_count: usize,
        rig: CameraRig<T>,
        seed: u64,
    ) -> Result<Self, SceneError> {
        if grid.dims.contains(&0) {
            return Err(SceneError::EmptyGrid(grid.dims));
        }
        if class_count < 2 {
            return Err(SceneError::TooFewClasses(class_count));
        }
        if semantics.len() != grid.len() {
            return Err(SceneError::SemanticsLength {
                expected: grid.len(),
                found: semantics.len(),
            });
        }
        if let Some(&id) = semantics.iter().find(|&&c| c as usize >= class_count) {
            return Err(SceneError::ClassOutOfRange { id, count: class_count });
        }
        Ok(Self {
            grid,
            semantics,
            class_count,
            rig,
            seed,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn voxel_size(&self) -> T {
        self.grid.voxel_size
    }

    pub fn origin(&self) -> Vec3<T> {
        self.grid.origin
    }

    pub fn semantics(&self) -> &[u8] {
        &self.semantics
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn rig(&self) -> &CameraRig<T> {
        &self.rig
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn occupied(&self, i: usize) -> bool {
        self.semantics[i] != 0
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.semantics.iter().map(|&c| c != 0).collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.semantics.iter().filter(|&&c| c != 0).count()
    }
}

/// Inclusive-exclusive voxel box `[lo, hi)`.
#[derive(Clone, Copy, Debug)]
struct VoxelBox {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl VoxelBox {
    fn fill(&self, dims: [usize; 3], class: u8, semantics: &mut [u8]) {
        for z in self.lo[2]..self.hi[2].min(dims[2]) {
            for y in self.lo[1]..self.hi[1].min(dims[1]) {
                for x in self.lo[0]..self.hi[0].min(dims[0]) {
                    semantics[x + dims[0] * (y + dims[1] * z)] = class;
                }
            }
        }
    }

    fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.lo[0] + self.hi[0]) as f64,
            0.5 * (self.lo[1] + self.hi[1]) as f64,
        ]
    }
}

fn place_footprint(dims: [usize; 3], size: [usize; 2], center: [f64; 2]) -> [usize; 2] {
    [0, 1].map(|a| {
        let max_lo = dims[a].saturating_sub(size[a]);
        let lo = (center[a] - 0.5 * size[a] as f64).round();
        (lo.max(0.0) as usize).min(max_lo)
    })
}

/// Camera ring for a grid, following `spec`.
pub fn build_rig<T: Real>(grid: &Grid<T>, spec: &RigSpec) -> Result<CameraRig<T>, SceneError> {
    let lo = vec3::to_f64(grid.origin);
    let ext = vec3::to_f64(grid.extent());
    let center = [lo[0] + 0.5 * ext[0], lo[1] + 0.5 * ext[1]];
    let radius = spec.radius_scale * 0.5 * ext[0].max(ext[1]);
    let target = [center[0], center[1], lo[2] + 0.25 * ext[2]];
    let height = lo[2] + spec.height_scale * radius;
    let half_fov = 0.5 * spec.fov_degrees.to_radians();
    let fx = 0.5 * spec.image_width as f64 / half_fov.tan();
    let fy = 0.5 * spec.image_height as f64 / half_fov.tan();
    let intrinsics = Intrinsics {
        fx: T::lit(fx),
        fy: T::lit(fy),
        cx: T::lit(0.5 * (spec.image_width as f64 - 1.0)),
        cy: T::lit(0.5 * (spec.image_height as f64 - 1.0)),
    };
    let rig = CameraRig::ring(
        spec.count,
        vec3::cast(target),
        T::lit(radius),
        T::lit(height),
        T::zero(),
        intrinsics,
        spec.image_width,
        spec.image_height,
        T::lit(spec.near),
        T::lit(spec.far_scale * radius),
    )?;
    Ok(rig)
}

/// Builds the scene for `(spec, seed)`. Boxes are at least three voxels on
/// every axis (grid permitting), so each has an interior no camera sees.
/// A `occluder_fraction` share of the boxes after the first is placed
/// directly behind an earlier box as seen from a random camera.
pub fn generate_scene<T: Real>(spec: &SceneSpec, seed: u64) -> Result<GroundTruthScene<T>, SceneError> {
    spec.validate()?;
    let dims = spec.grid_dims;
    let grid = Grid::new(dims, T::lit(spec.voxel_size), vec3::cast(spec.origin));
    let rig = build_rig(&grid, &spec.rig)?;
    let k = spec.class_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut semantics = vec![0u8; grid.len()];

    let base = usize::from(spec.n_walls > 0 && dims[2] > 1);
    if spec.n_walls > 0 {
        VoxelBox {
            lo: [0, 0, 0],
            hi: [dims[0], dims[1], 1],
        }
        .fill(dims, floor_class(k), &mut semantics);
    }
    for _ in 1..spec.n_walls {
        let axis = rng.gen_range(0..2usize);
        let other = 1 - axis;
        let pos = rng.gen_range(0..dims[axis]);
        let len = rng.gen_range((dims[other] / 4).max(1)..=(dims[other] / 2).max(1));
        let start = rng.gen_range(0..=dims[other] - len);
        let top = rng.gen_range((base + 1).min(dims[2])..=dims[2]);
        let mut lo = [0, 0, base];
        let mut hi = [0, 0, top.max(base + 1)];
        lo[axis] = pos;
        hi[axis] = pos + 1;
        lo[other] = start;
        hi[other] = start + len;
        VoxelBox { lo, hi }.fill(dims, wall_class(k), &mut semantics);
    }

    let n_occluded = (spec.occluder_fraction * spec.n_boxes.saturating_sub(1) as f64).round() as usize;
    let camera_xy: Vec<[f64; 2]> = rig
        .cameras()
        .iter()
        .map(|c| {
            let p = vec3::to_f64(c.center());
            [
                (p[0] - spec.origin[0]) / spec.voxel_size,
                (p[1] - spec.origin[1]) / spec.voxel_size,
            ]
        })
        .collect();
    let mut boxes: Vec<VoxelBox> = Vec::new();
    for i in 0..spec.n_boxes {
        let max_side = (dims[0].min(dims[1]) / 5).max(3);
        let size = [0, 1].map(|a| rng.gen_range(3..=max_side).min(dims[a]));
        let zmax = dims[2] - base;
        let height = rng.gen_range(3.min(zmax)..=(zmax.saturating_sub(1)).max(3.min(zmax)));
        let occluded = i >= 1 && i <= n_occluded && !camera_xy.is_empty();
        let center = if occluded {
            let front = boxes[rng.gen_range(0..boxes.len())];
            let cam = camera_xy[rng.gen_range(0..camera_xy.len())];
            let fc = front.center();
            let d = [fc[0] - cam[0], fc[1] - cam[1]];
            let n = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-9);
            let fs = (front.hi[0] - front.lo[0]).max(front.hi[1] - front.lo[1]) as f64;
            let gap = 0.5 * fs + 0.5 * size[0].max(size[1]) as f64 + 1.0;
            [fc[0] + d[0] / n * gap, fc[1] + d[1] / n * gap]
        } else {
            [
                rng.gen_range(0.0..dims[0] as f64),
                rng.gen_range(0.0..dims[1] as f64),
            ]
        };
        let lo = place_footprint(dims, size, center);
        let b = VoxelBox {
            lo: [lo[0], lo[1], base],
            hi: [lo[0] + size[0], lo[1] + size[1], base + height],
        };
        b.fill(dims, box_class(i, k), &mut semantics);
        boxes.push(b);
    }
    GroundTruthScene::new(grid, semantics, k, rig, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_is_free() {
        let spec = SceneSpec {
            n_boxes: 0,
            n_walls: 0,
            ..SceneSpec::default()
        };
        let s = generate_scene::<f64>(&spec, 1).unwrap();
        assert_eq!(s.occupied_count(), 0);
    }

    #[test]
    fn deterministic() {
        let spec = SceneSpec::default();
        let a = generate_scene::<f64>(&spec, 42).unwrap();
        let b = generate_scene::<f64>(&spec, 42).unwrap();
        assert_eq!(a.semantics(), b.semantics());
        let c = generate_scene::<f64>(&spec, 43).unwrap();
        assert_ne!(a.semantics(), c.semantics());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = SceneSpec::default();
        spec.grid_dims = [0, 4, 4];
        assert!(matches!(generate_scene::<f64>(&spec, 0), Err(SceneError::EmptyGrid(_))));
        let mut spec = SceneSpec::default();
        spec.class_count = 1;
        assert!(matches!(generate_scene::<f64>(&spec, 0), Err(SceneError::TooFewClasses(1))));
    }

    #[test]
    fn class_ids_below_k() {
        for k in 2..7 {
            let spec = SceneSpec {
                class_count: k,
                n_boxes: 5,
                n_walls: 3,
                ..SceneSpec::default()
            };
            let s = generate_scene::<f64>(&spec, 5).unwrap();
            assert!(s.semantics().iter().all(|&c| (c as usize) < k));
            assert!(s.occupied_count() > 0);
        }
    }

    #[test]
    fn rig_sees_grid_center() {
        let s = generate_scene::<f64>(&SceneSpec::default(), 0).unwrap();
        assert_eq!(s.rig().len(), 4);
        for cam in s.rig().cameras() {
            assert!(cam.project_point([0.0, 0.0, 0.5]).valid);
        }
    }
}
