//! Experiment plumbing: configuration files, scene splits, the full
//! coarse-to-fine model, training, evaluation metrics and ablation suites.

pub mod ablation;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::{ConfigError, EvalProtocol, ExperimentConfig, SamplingStrategy, CONFIG_KEYS};
pub use data::{eval_scene_seed, load_scenes, train_scene_seed, DataError, SceneData};
pub use metrics::{compute_iou, compute_miou, MetricCounts, MetricsError, MetricsReport};
pub use model::{ForwardOutput, LossBreakdown, Model, ModelConfig, ModelError};
pub use train::{
    evaluate, export, fit, init_model, read_checkpoint, train, write_checkpoint, write_metrics_csv, StepRecord,
    TrainError, TrainOutcome, Trained,
};
pub use ablation::{mean_std, run_ablation, variants, AblationTable, Suite, VariantResult};
