use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::fusion_loss::LossConfig;
use crate::scenegen::{RigSpec, SceneSpec};
use crate::transformer_branch::DeformAttnConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the field's ray samples are placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingStrategy {
    Uniform,
    Hierarchical,
    Probabilistic,
    OccupancyAware,
}

impl SamplingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Hierarchical => "hierarchical",
            Self::Probabilistic => "probabilistic",
            Self::OccupancyAware => "occupancy_aware",
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "hierarchical" => Ok(Self::Hierarchical),
            "probabilistic" => Ok(Self::Probabilistic),
            "occupancy_aware" => Ok(Self::OccupancyAware),
            _ => Err(()),
        }
    }
}

/// Which voxels the metrics count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalProtocol {
    AllOccupied,
    VisibleOnly,
}

impl EvalProtocol {
    pub fn name(&self) -> &'static str {
        match self {
            Self::AllOccupied => "all_occupied",
            Self::VisibleOnly => "visible_only",
        }
    }
}

impl FromStr for EvalProtocol {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "all_occupied" => Ok(Self::AllOccupied),
            "visible_only" => Ok(Self::VisibleOnly),
            _ => Err(()),
        }
    }
}

/// Every knob of one experiment. The text form is one `key = value` per
/// line; `#` starts a comment; lists are comma separated.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    /// Seed of the scene collection; training scenes use `scene_seed + i`,
    /// held-out scenes `scene_seed + 1000 + i`.
    pub scene_seed: u64,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// Seed of initialization and sampling.
    pub seed: u64,
    pub levels: usize,
    pub channels: usize,
    pub attention: DeformAttnConfig,
    pub field_hidden: usize,
    pub sampling: SamplingStrategy,
    pub samples: usize,
    pub candidates: usize,
    pub rays_per_camera: usize,
    pub occupancy_samples: usize,
    /// Attention lifting on; off gives plain projected features.
    pub lift: bool,
    pub sparse_conv: bool,
    pub nerf: bool,
    /// Explicit proposals on; off leaves only the field's proposals.
    pub explicit: bool,
    pub loss: LossConfig,
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    pub steps: usize,
    pub log_every: usize,
    pub protocol: EvalProtocol,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            scene_seed: 100,
            train_scenes: 16,
            eval_scenes: 4,
            seed: 0,
            levels: 4,
            channels: 16,
            attention: DeformAttnConfig::default(),
            field_hidden: 32,
            sampling: SamplingStrategy::OccupancyAware,
            samples: 32,
            candidates: 128,
            rays_per_camera: 32,
            occupancy_samples: 64,
            lift: true,
            sparse_conv: true,
            nerf: true,
            explicit: true,
            loss: LossConfig::default(),
            lr: 0.02,
            momentum: 0.9,
            clip: 1.0,
            steps: 2000,
            log_every: 1,
            protocol: EvalProtocol::AllOccupied,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Every accepted key, in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "scene_seed",
    "train_scenes",
    "eval_scenes",
    "n_boxes",
    "n_walls",
    "occluder_fraction",
    "class_count",
    "grid_dims",
    "voxel_size",
    "grid_origin",
    "cameras",
    "image_size",
    "fov_degrees",
    "seed",
    "levels",
    "channels",
    "attn_heads",
    "attn_layers",
    "attn_points",
    "field_hidden",
    "sampling",
    "samples",
    "candidates",
    "rays_per_camera",
    "occupancy_samples",
    "lift",
    "sparse_conv",
    "nerf",
    "explicit",
    "beta",
    "theta",
    "alpha_decay",
    "silog_lambda",
    "occupancy_weight",
    "miss_margin",
    "lr",
    "momentum",
    "clip",
    "steps",
    "log_every",
    "protocol",
    "output_dir",
];

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "scene_seed" => self.scene_seed = parse(key, v)?,
            "train_scenes" => self.train_scenes = parse(key, v)?,
            "eval_scenes" => self.eval_scenes = parse(key, v)?,
            "n_boxes" => self.scene.n_boxes = parse(key, v)?,
            "n_walls" => self.scene.n_walls = parse(key, v)?,
            "occluder_fraction" => self.scene.occluder_fraction = parse(key, v)?,
            "class_count" => self.scene.class_count = parse(key, v)?,
            "grid_dims" => {
                let d: Vec<usize> = parse_list(key, v)?;
                self.scene.grid_dims = d.try_into().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                })?;
            }
            "voxel_size" => self.scene.voxel_size = parse(key, v)?,
            "grid_origin" => {
                let d: Vec<f64> = parse_list(key, v)?;
                self.scene.origin = d.try_into().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                })?;
            }
            "cameras" => self.scene.rig.count = parse(key, v)?,
            "image_size" => {
                let s: usize = parse(key, v)?;
                self.scene.rig.image_width = s;
                self.scene.rig.image_height = s;
            }
            "fov_degrees" => self.scene.rig.fov_degrees = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "levels" => {
                self.levels = parse(key, v)?;
                self.loss.levels = self.levels;
            }
            "channels" => self.channels = parse(key, v)?,
            "attn_heads" => self.attention.heads = parse(key, v)?,
            "attn_layers" => self.attention.layers = parse_list(key, v)?,
            "attn_points" => self.attention.points = parse_list(key, v)?,
            "field_hidden" => self.field_hidden = parse(key, v)?,
            "sampling" => self.sampling = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "candidates" => self.candidates = parse(key, v)?,
            "rays_per_camera" => self.rays_per_camera = parse(key, v)?,
            "occupancy_samples" => self.occupancy_samples = parse(key, v)?,
            "lift" => self.lift = parse_bool(key, v)?,
            "sparse_conv" => self.sparse_conv = parse_bool(key, v)?,
            "nerf" => self.nerf = parse_bool(key, v)?,
            "explicit" => self.explicit = parse_bool(key, v)?,
            "beta" => self.loss.beta = parse(key, v)?,
            "theta" => self.loss.theta = parse(key, v)?,
            "alpha_decay" => self.loss.alpha_decay = parse(key, v)?,
            "silog_lambda" => self.loss.silog_lambda = parse(key, v)?,
            "occupancy_weight" => self.loss.occupancy_weight = parse(key, v)?,
            "miss_margin" => self.loss.miss_margin = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "protocol" => self.protocol = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Defaults overridden by the lines of `text`.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.levels < 2 {
            return bad("levels must be at least 2");
        }
        let f = 1usize << (self.levels - 1);
        if self.scene.grid_dims.iter().any(|&d| d % f != 0) {
            return bad("grid_dims must be divisible by 2^(levels-1)");
        }
        if self.attention.layers.len() != self.levels || self.attention.points.len() != self.levels {
            return bad("attn_layers and attn_points need one entry per level");
        }
        if self.attention.heads == 0 || !self.channels.is_multiple_of(self.attention.heads) {
            return bad("channels must be a multiple of attn_heads");
        }
        if self.attention.points.contains(&0) {
            return bad("attn_points must be positive");
        }
        if self.samples == 0 || self.candidates < self.samples {
            return bad("need candidates >= samples >= 1");
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 {
            return bad("need at least one training and one held-out scene");
        }
        if !self.explicit && !self.nerf {
            return bad("at least one of explicit and nerf must be on");
        }
        if self.scene.rig.image_width >> self.levels == 0 || self.scene.rig.image_height >> self.levels == 0 {
            return bad("image_size too small for the number of levels");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("need lr > 0 and 0 <= momentum < 1");
        }
        if self.loss.levels != self.levels {
            return bad("loss levels must match levels");
        }
        Ok(())
    }

    /// Text form that [`Self::parse_str`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("scene_seed", self.scene_seed.to_string());
        kv("train_scenes", self.train_scenes.to_string());
        kv("eval_scenes", self.eval_scenes.to_string());
        kv("n_boxes", s.n_boxes.to_string());
        kv("n_walls", s.n_walls.to_string());
        kv("occluder_fraction", s.occluder_fraction.to_string());
        kv("class_count", s.class_count.to_string());
        kv("grid_dims", join(&s.grid_dims));
        kv("voxel_size", s.voxel_size.to_string());
        kv("grid_origin", join(&s.origin));
        kv("cameras", s.rig.count.to_string());
        kv("image_size", s.rig.image_width.to_string());
        kv("fov_degrees", s.rig.fov_degrees.to_string());
        kv("seed", self.seed.to_string());
        kv("levels", self.levels.to_string());
        kv("channels", self.channels.to_string());
        kv("attn_heads", self.attention.heads.to_string());
        kv("attn_layers", join(&self.attention.layers));
        kv("attn_points", join(&self.attention.points));
        kv("field_hidden", self.field_hidden.to_string());
        kv("sampling", self.sampling.name().to_string());
        kv("samples", self.samples.to_string());
        kv("candidates", self.candidates.to_string());
        kv("rays_per_camera", self.rays_per_camera.to_string());
        kv("occupancy_samples", self.occupancy_samples.to_string());
        kv("lift", self.lift.to_string());
        kv("sparse_conv", self.sparse_conv.to_string());
        kv("nerf", self.nerf.to_string());
        kv("explicit", self.explicit.to_string());
        kv("beta", self.loss.beta.to_string());
        kv("theta", self.loss.theta.to_string());
        kv("alpha_decay", self.loss.alpha_decay.to_string());
        kv("silog_lambda", self.loss.silog_lambda.to_string());
        kv("occupancy_weight", self.loss.occupancy_weight.to_string());
        kv("miss_margin", self.loss.miss_margin.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("clip", self.clip.to_string());
        kv("steps", self.steps.to_string());
        kv("log_every", self.log_every.to_string());
        kv("protocol", self.protocol.name().to_string());
        kv("output_dir", self.output_dir.display().to_string());
        o
    }

    pub fn rig(&self) -> &RigSpec {
        &self.scene.rig
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("sampling", "hierarchical").unwrap();
        c.set("samples", "64").unwrap();
        c.set("attn_layers", "2, 1, 1, 1").unwrap();
        c.set("protocol", "visible_only").unwrap();
        c.set("occluder_fraction", "0.25").unwrap();
        let back = ExperimentConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_written() {
        let text = ExperimentConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, CONFIG_KEYS);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(ExperimentConfig::parse_str("bogus = 1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(ExperimentConfig::parse_str("steps 4"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(ExperimentConfig::parse_str("steps = -4"), Err(ConfigError::Value { .. })));
        assert!(matches!(ExperimentConfig::parse_str("sampling = random"), Err(ConfigError::Value { .. })));
        assert!(matches!(ExperimentConfig::parse_str("attn_layers = 1,2"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn comments_and_blanks() {
        let c = ExperimentConfig::parse_str("# header\n\nsteps = 7  # short\n").unwrap();
        assert_eq!(c.steps, 7);
    }
}
