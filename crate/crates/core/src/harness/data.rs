use crate::geometry::FeatureMap;
use crate::scalar::Real;
use crate::scenegen::{
    generate_scene, gt_visibility, render_gt_depth, render_image, DepthMap, GroundTruthScene, SceneError, VisibilityGrid,
};
use crate::voxels::{downsample_gt, Grid, LevelTruth, VoxelError};

use super::config::ExperimentConfig;

/// A scene with everything training and evaluation read from it.
#[derive(Clone, Debug)]
pub struct SceneData<T> {
    pub scene: GroundTruthScene<T>,
    pub images: Vec<FeatureMap<T>>,
    pub depths: Vec<DepthMap<T>>,
    /// Level `l` at index `l − 1`.
    pub truths: Vec<LevelTruth>,
    pub grids: Vec<Grid<T>>,
    pub visibility: VisibilityGrid,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

impl<T: Real> SceneData<T> {
    pub fn prepare(scene: GroundTruthScene<T>, levels: usize) -> Result<Self, DataError> {
        let n = scene.rig().len();
        let images = (0..n).map(|c| render_image(&scene, c)).collect::<Result<Vec<_>, _>>()?;
        let depths = (0..n).map(|c| render_gt_depth(&scene, c)).collect::<Result<Vec<_>, _>>()?;
        let truths = (1..=levels)
            .map(|l| downsample_gt(&scene, l, levels))
            .collect::<Result<Vec<_>, _>>()?;
        let grids = (1..=levels).map(|l| scene.grid().coarsen(1 << (levels - l))).collect();
        let visibility = gt_visibility(&scene);
        Ok(Self {
            scene,
            images,
            depths,
            truths,
            grids,
            visibility,
        })
    }

    pub fn levels(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, level: usize) -> &Grid<T> {
        &self.grids[level - 1]
    }

    pub fn truth(&self, level: usize) -> &LevelTruth {
        &self.truths[level - 1]
    }
}

/// Seed of training scene `i`.
pub fn train_scene_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    cfg.scene_seed + i as u64
}

/// Seed of held-out scene `i`.
pub fn eval_scene_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    cfg.scene_seed + 1000 + i as u64
}

pub fn load_scenes<T: Real>(cfg: &ExperimentConfig, held_out: bool) -> Result<Vec<SceneData<T>>, DataError> {
    let count = if held_out { cfg.eval_scenes } else { cfg.train_scenes };
    (0..count)
        .map(|i| {
            let seed = if held_out {
                eval_scene_seed(cfg, i)
            } else {
                train_scene_seed(cfg, i)
            };
            SceneData::prepare(generate_scene(&cfg.scene, seed)?, cfg.levels)
        })
        .collect()
}
