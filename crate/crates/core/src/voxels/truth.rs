use crate::scalar::Real;
use crate::scenegen::{GroundTruthScene, VolumeFile};
use crate::voxels::{Grid, VoxelError};

/// Ground truth at one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTruth {
    pub level: usize,
    pub dims: [usize; 3],
    pub occupied: Vec<bool>,
    pub classes: Vec<u8>,
}

/// Level-`level` truth of an `levels`-level pyramid whose finest level is the
/// scene grid: occupancy is the max over each `2^(levels−level)` block, the
/// class is the most frequent class among occupied children (ties to the
/// smallest id).
pub fn downsample_gt<T: Real>(
    scene: &GroundTruthScene<T>,
    level: usize,
    levels: usize,
) -> Result<LevelTruth, VoxelError> {
    if level == 0 || level > levels {
        return Err(VoxelError::Level { level, levels });
    }
    let f = 1usize << (levels - level);
    let fine = scene.grid_dims();
    if fine.iter().any(|&d| d % f != 0) {
        return Err(VoxelError::Indivisible { dims: fine, factor: f });
    }
    let dims = fine.map(|d| d / f);
    let k = scene.class_count();
    let n = dims.iter().product::<usize>();
    let mut counts = vec![0u32; n * k];
    let sem = scene.semantics();
    for z in 0..fine[2] {
        for y in 0..fine[1] {
            for x in 0..fine[0] {
                let c = sem[x + fine[0] * (y + fine[1] * z)] as usize;
                if c != 0 {
                    let p = x / f + dims[0] * (y / f + dims[1] * (z / f));
                    counts[p * k + c] += 1;
                }
            }
        }
    }
    let mut occupied = vec![false; n];
    let mut classes = vec![0u8; n];
    for p in 0..n {
        let row = &counts[p * k..(p + 1) * k];
        let mut best = 0;
        for c in 1..k {
            if row[c] > 0 && (best == 0 || row[c] > row[best]) {
                best = c;
            }
        }
        occupied[p] = best != 0;
        classes[p] = best as u8;
    }
    Ok(LevelTruth {
        level,
        dims,
        occupied,
        classes,
    })
}

/// Dense prediction at one level: occupancy score and class per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelVolume<T> {
    pub level: usize,
    pub grid: Grid<T>,
    pub occupancy: Vec<T>,
    pub classes: Vec<u8>,
}

impl<T: Real> VoxelVolume<T> {
    pub fn empty(level: usize, grid: Grid<T>) -> Self {
        Self {
            level,
            grid,
            occupancy: vec![T::zero(); grid.len()],
            classes: vec![0; grid.len()],
        }
    }

    pub fn threshold(&self, theta: T) -> Vec<bool> {
        crate::voxels::threshold_occupancy(&self.occupancy, theta)
    }

    /// Classes with every voxel below `theta` forced to free.
    pub fn thresholded_classes(&self, theta: T) -> Vec<u8> {
        self.classes
            .iter()
            .zip(&self.occupancy)
            .map(|(&c, &o)| if o >= theta { c } else { 0 })
            .collect()
    }

    /// Version-2 volume file with the thresholded classes and raw scores.
    pub fn to_file(&self, theta: T) -> VolumeFile {
        VolumeFile {
            dims: self.grid.dims,
            voxel_size: self.grid.voxel_size.to_f64_lossy() as f32,
            origin: self.grid.origin.map(|v| v.to_f64_lossy() as f32),
            classes: self.thresholded_classes(theta),
            occupancy: Some(self.occupancy.iter().map(|o| o.to_f64_lossy() as f32).collect()),
        }
    }
}
