use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use occlift::harness::{
    eval_scene_seed, evaluate, export, init_model, load_scenes, read_checkpoint, run_ablation, train,
    train_scene_seed, write_metrics_csv, ConfigError, ExperimentConfig, Suite, TrainError,
};
use occlift::scenegen::{generate_scene, render_gt_depth, write_depth_map, write_volume, GroundTruthScene, VolumeFile};

/// Semantic occupancy from synthetic multi-camera scenes.
#[derive(Parser, Debug)]
#[command(name = "occlift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training and held-out scenes with their depth maps.
    GenScenes(Common),
    /// Train, evaluate on the held-out scenes and export predictions.
    Train(Common),
    /// Evaluate a checkpoint on the held-out scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out-dir>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every variant of an ablation suite over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// `components` or `sampling`.
        #[arg(long, default_value = "components")]
        suite: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Write prediction volumes, rendered depth maps and ray samples.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` file; see the README for keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numeric(String),
    Other(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => Failure::Config(c.to_string()),
            TrainError::NonFinite { .. } => Failure::Numeric(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

fn other<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Other(e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_scene(dir: &Path, stem: &str, scene: &GroundTruthScene<f64>) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.vol"))).map_err(other)?);
    write_volume(&mut w, &VolumeFile::from_scene(scene)).map_err(other)?;
    w.flush().map_err(other)?;
    fs::write(dir.join(format!("{stem}_rig.toml")), scene.rig().to_toml()).map_err(other)?;
    for c in 0..scene.rig().len() {
        let d = render_gt_depth(scene, c).map_err(other)?;
        let mut w = BufWriter::new(File::create(dir.join(format!("{stem}_cam{c}_depth.bin"))).map_err(other)?);
        write_depth_map(&mut w, &d).map_err(other)?;
        w.flush().map_err(other)?;
    }
    Ok(())
}

fn gen_scenes(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let dir = cfg.output_dir.join("scenes");
    fs::create_dir_all(&dir).map_err(other)?;
    for i in 0..cfg.train_scenes {
        let s = generate_scene::<f64>(&cfg.scene, train_scene_seed(cfg, i)).map_err(other)?;
        write_scene(&dir, &format!("train{i}"), &s)?;
    }
    for i in 0..cfg.eval_scenes {
        let s = generate_scene::<f64>(&cfg.scene, eval_scene_seed(cfg, i)).map_err(other)?;
        write_scene(&dir, &format!("eval{i}"), &s)?;
    }
    println!("wrote {} scenes to {}", cfg.train_scenes + cfg.eval_scenes, dir.display());
    Ok(())
}

fn load_trained(
    cfg: &ExperimentConfig,
    checkpoint: Option<PathBuf>,
) -> Result<(occlift::harness::Model, occlift::autodiff::ParamStore<f64>), Failure> {
    let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join("checkpoint.bin"));
    let saved = read_checkpoint::<f64>(&path)?;
    let (model, mut store) = init_model::<f64>(cfg);
    store
        .load_from(&saved)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok((model, store))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenScenes(c) => gen_scenes(&c.resolve()?),
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let out = train(&cfg)?;
            println!("{}", occlift::harness::MetricsReport::csv_header(cfg.scene.class_count));
            println!("{}", out.report.csv_row());
            Ok(())
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.resolve()?;
            let (model, store) = load_trained(&cfg, checkpoint)?;
            let scenes = load_scenes::<f64>(&cfg, true).map_err(other)?;
            let report = evaluate(&model, &store, &scenes, cfg.protocol)?;
            fs::create_dir_all(&cfg.output_dir).map_err(other)?;
            let path = cfg.output_dir.join(format!("eval_{}.csv", cfg.protocol.name()));
            write_metrics_csv(&path, cfg.scene.class_count, &report)?;
            println!("{}", occlift::harness::MetricsReport::csv_header(cfg.scene.class_count));
            println!("{}", report.csv_row());
            Ok(())
        }
        Command::Ablate { common, suite, seeds } => {
            let cfg = common.resolve()?;
            let suite: Suite = suite.parse()?;
            let table = run_ablation(suite, &cfg, &seeds, |name, seed, r| {
                eprintln!("{name} seed {seed}: {}", r.csv_row());
            })?;
            fs::create_dir_all(&cfg.output_dir).map_err(other)?;
            let name = match suite {
                Suite::Components => "ablation_components.csv",
                Suite::Sampling => "ablation_sampling.csv",
            };
            let csv = table.to_csv();
            fs::write(cfg.output_dir.join(name), &csv).map_err(other)?;
            print!("{csv}");
            Ok(())
        }
        Command::Export { common, checkpoint } => {
            let cfg = common.resolve()?;
            let (model, store) = load_trained(&cfg, checkpoint)?;
            let scenes = load_scenes::<f64>(&cfg, true).map_err(other)?;
            let dir = cfg.output_dir.join("export");
            export(&model, &store, &scenes, &dir, cfg.seed)?;
            println!("exported {} scenes to {}", scenes.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numerical abort: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
