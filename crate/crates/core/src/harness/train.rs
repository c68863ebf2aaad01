use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, ParamStore, Sgd};
use crate::scalar::Real;
use crate::scenegen::{write_depth_map, write_volume, SceneError};

use super::config::{ConfigError, EvalProtocol, ExperimentConfig};
use super::data::{load_scenes, DataError, SceneData};
use super::metrics::{MetricCounts, MetricsError, MetricsReport};
use super::model::{LossBreakdown, Model, ModelConfig, ModelError};

/// Stream offset separating initialization from per-step sampling.
const STEP_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("non-finite loss {value} at step {step}")]
    NonFinite { step: usize, value: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row of the loss curve. Per-level terms are unweighted.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub explicit: Vec<f64>,
    pub implicit: Vec<f64>,
    pub total: f64,
}

impl StepRecord {
    fn from_loss<T: Real>(g: &Graph<T>, step: usize, levels: usize, loss: &LossBreakdown, w_occ: f64) -> Self {
        let v = |x| g.value(x).item().to_f64_lossy();
        let explicit = (0..levels)
            .map(|l| v(loss.explicit.semantic[l]) + w_occ * v(loss.explicit.occupancy[l]))
            .collect();
        let mut implicit = vec![0.0; levels];
        for t in &loss.implicit_terms {
            implicit[t.level - 1] = [t.depth, t.occupancy].into_iter().flatten().map(v).sum();
        }
        Self {
            step,
            explicit,
            implicit,
            total: v(loss.total),
        }
    }

    pub fn csv_header(levels: usize) -> String {
        let mut h = String::from("step");
        for l in 1..=levels {
            h.push_str(&format!(",l_exp_{l}"));
        }
        for l in 1..=levels {
            h.push_str(&format!(",l_imp_{l}"));
        }
        h.push_str(",l_total");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = self.step.to_string();
        for x in self.explicit.iter().chain(&self.implicit) {
            r.push_str(&format!(",{x:.6}"));
        }
        r.push_str(&format!(",{:.6}", self.total));
        r
    }
}

/// A model with its parameters.
#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub model: Model,
    pub store: ParamStore<T>,
    pub history: Vec<StepRecord>,
}

/// Freshly initialized model for `cfg`.
pub fn init_model<T: Real>(cfg: &ExperimentConfig) -> (Model, ParamStore<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, ModelConfig::from_experiment(cfg), &mut rng);
    (model, store)
}

/// Runs `cfg.steps` SGD steps, one training scene per step in order.
/// `on_step` sees every record as it is produced. A non-finite loss stops
/// before the update, so `Trained` from the error path is the last good
/// state; the caller gets it through `last_good`.
pub fn fit<T: Real>(
    cfg: &ExperimentConfig,
    scenes: &[SceneData<T>],
    mut on_step: impl FnMut(&StepRecord),
    last_good: &mut Option<Trained<T>>,
) -> Result<Trained<T>, TrainError> {
    cfg.validate()?;
    let (model, mut store) = init_model::<T>(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STEP_STREAM);
    let clip = (cfg.clip > 0.0).then(|| T::lit(cfg.clip));
    let mut opt = Sgd::new(T::lit(cfg.lr), T::lit(cfg.momentum), clip);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let data = &scenes[step % scenes.len()];
        let mut g = Graph::new();
        let out = model.forward(&mut g, &store, data, Some(&cfg.loss), &mut rng)?;
        let loss = out.loss.as_ref().expect("loss requested");
        let value = g.value(loss.total).item().to_f64_lossy();
        if !value.is_finite() {
            *last_good = Some(Trained {
                model: model.clone(),
                store: store.clone(),
                history: history.clone(),
            });
            return Err(TrainError::NonFinite { step, value });
        }
        let rec = StepRecord::from_loss(&g, step, cfg.levels, loss, cfg.loss.occupancy_weight);
        on_step(&rec);
        history.push(rec);
        let grads = g.backward(loss.total)?;
        let dense = grads.dense_param_grads(&store);
        opt.step(&mut store, &dense)?;
    }
    Ok(Trained { model, store, history })
}

/// Pooled metrics of the finest-level prediction over `scenes`.
pub fn evaluate<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    scenes: &[SceneData<T>],
    protocol: EvalProtocol,
) -> Result<MetricsReport, TrainError> {
    let start = Instant::now();
    let theta = T::lit(model.cfg.theta);
    let mut counts = MetricCounts::new(model.cfg.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for data in scenes {
        let mut g = Graph::new();
        let out = model.forward(&mut g, store, data, None, &mut rng)?;
        let levels = data.levels();
        let vol = model.predict_volume(&g, &out, data.grid(levels));
        let pred = vol.threshold(theta);
        let pred_cls = vol.thresholded_classes(theta);
        let truth = data.truth(levels);
        let visible = data.visibility.mask();
        let mask = match protocol {
            EvalProtocol::AllOccupied => None,
            EvalProtocol::VisibleOnly => Some(visible.as_slice()),
        };
        counts.add_binary(&pred, &truth.occupied, mask)?;
        counts.add_semantic(&pred_cls, &truth.classes, mask)?;
        counts.add_occluded(&pred, &truth.occupied, &visible)?;
    }
    let mut report = counts.report();
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<(), TrainError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_metrics_csv(path: &Path, classes: usize, report: &MetricsReport) -> Result<(), TrainError> {
    write_text(path, &format!("{}\n{}\n", MetricsReport::csv_header(classes), report.csv_row()))
}

pub fn write_checkpoint<T: Real>(path: &Path, store: &ParamStore<T>) -> Result<(), TrainError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    store.write_checkpoint(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<ParamStore<T>, TrainError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(ParamStore::read_checkpoint(&mut std::io::BufReader::new(f))?)
}

/// Everything a finished `train` run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub trained: Trained<T>,
    pub report: MetricsReport,
}

/// Full run: train on the training split, evaluate on the held-out split,
/// and write `config.txt`, `loss.csv`, `metrics.csv`, `checkpoint.bin` and
/// the exports into `cfg.output_dir`. On a non-finite loss the last good
/// parameters are still checkpointed before the error returns.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome<f64>, TrainError> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let train_scenes = load_scenes::<f64>(cfg, false)?;
    let eval_scenes = load_scenes::<f64>(cfg, true)?;

    let loss_path = dir.join("loss.csv");
    let f = File::create(&loss_path).map_err(io_err(&loss_path))?;
    let mut loss_csv = BufWriter::new(f);
    writeln!(loss_csv, "{}", StepRecord::csv_header(cfg.levels)).map_err(io_err(&loss_path))?;
    let mut write_failed = None;
    let every = cfg.log_every.max(1);
    let mut last_good = None;
    let result = fit(
        cfg,
        &train_scenes,
        |r| {
            if r.step % every == 0 && write_failed.is_none() {
                if let Err(e) = writeln!(loss_csv, "{}", r.csv_row()) {
                    write_failed = Some(e);
                }
            }
        },
        &mut last_good,
    );
    loss_csv.flush().map_err(io_err(&loss_path))?;
    if let Some(e) = write_failed {
        return Err(io_err(&loss_path)(e));
    }
    let ckpt = dir.join("checkpoint.bin");
    let trained = match result {
        Ok(t) => t,
        Err(e) => {
            if let Some(t) = last_good {
                write_checkpoint(&ckpt, &t.store)?;
            }
            return Err(e);
        }
    };
    write_checkpoint(&ckpt, &trained.store)?;
    let report = evaluate(&trained.model, &trained.store, &eval_scenes, cfg.protocol)?;
    write_metrics_csv(&dir.join("metrics.csv"), cfg.scene.class_count, &report)?;
    export(&trained.model, &trained.store, &eval_scenes, &dir.join("export"), cfg.seed)?;
    Ok(TrainOutcome { trained, report })
}

/// Writes, per scene, the thresholded prediction volume, every camera's
/// field-rendered depth map, and a CSV of the samples along each ray.
pub fn export<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    scenes: &[SceneData<T>],
    dir: &Path,
    seed: u64,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let theta = T::lit(model.cfg.theta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STEP_STREAM.rotate_left(17));
    for (i, data) in scenes.iter().enumerate() {
        let mut g = Graph::new();
        let out = model.forward(&mut g, store, data, None, &mut rng)?;
        let levels = data.levels();
        let vol = model.predict_volume(&g, &out, data.grid(levels));
        let path = dir.join(format!("scene{i}_pred.vol"));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        write_volume(&mut w, &vol.to_file(theta))?;
        w.flush().map_err(io_err(&path))?;
        for cam in 0..data.scene.rig().len() {
            let (map, samples) = model.render_camera(&mut g, store, data, &out, cam, &mut rng);
            let path = dir.join(format!("scene{i}_cam{cam}_depth.bin"));
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            write_depth_map(&mut w, &map)?;
            w.flush().map_err(io_err(&path))?;
            let path = dir.join(format!("scene{i}_cam{cam}_rays.csv"));
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            writeln!(w, "{}", crate::nerf_branch::SAMPLE_CSV_HEADER).map_err(io_err(&path))?;
            for (k, s) in samples.iter().enumerate() {
                s.write_csv(k, &mut w).map_err(io_err(&path))?;
            }
            w.flush().map_err(io_err(&path))?;
        }
    }
    Ok(())
}
