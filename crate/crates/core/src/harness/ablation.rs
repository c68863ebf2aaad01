use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use super::config::{ConfigError, ExperimentConfig, SamplingStrategy};
use super::data::{load_scenes, SceneData};
use super::metrics::MetricsReport;
use super::train::{evaluate, fit, TrainError};

/// Which table of variants to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Components,
    Sampling,
}

impl FromStr for Suite {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "components" => Ok(Self::Components),
            "sampling" => Ok(Self::Sampling),
            _ => Err(ConfigError::Value {
                key: "suite".into(),
                value: s.into(),
            }),
        }
    }
}

/// Named configurations of `suite` derived from `base`.
pub fn variants(suite: Suite, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let with = |name: &str, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (name.to_string(), c)
    };
    match suite {
        Suite::Components => vec![
            with("full", &|_| {}),
            with("wo_nerf", &|c| c.nerf = false),
            with("wo_sparse_conv", &|c| c.sparse_conv = false),
            with("nerf_only", &|c| {
                c.lift = false;
                c.sparse_conv = false;
                c.explicit = false;
                c.sampling = SamplingStrategy::Probabilistic;
            }),
        ],
        Suite::Sampling => [
            (SamplingStrategy::Hierarchical, 64),
            (SamplingStrategy::Probabilistic, 32),
            (SamplingStrategy::OccupancyAware, 16),
            (SamplingStrategy::OccupancyAware, 32),
            (SamplingStrategy::OccupancyAware, 64),
        ]
        .into_iter()
        .map(|(s, n)| {
            let mut c = base.clone();
            c.sampling = s;
            c.samples = n;
            c.candidates = c.candidates.max(n);
            (format!("{}_{n}", s.name()), c)
        })
        .collect(),
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One variant's held-out metrics, one report per seed.
#[derive(Clone, Debug)]
pub struct VariantResult {
    pub name: String,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    /// Wall time of each training plus evaluation run.
    pub seconds: Vec<f64>,
}

impl VariantResult {
    pub fn sc_iou(&self) -> (f64, f64) {
        mean_std(&self.reports.iter().map(|r| r.sc_iou).collect::<Vec<_>>())
    }

    pub fn miou(&self) -> (f64, f64) {
        mean_std(&self.reports.iter().map(|r| r.miou).collect::<Vec<_>>())
    }

    pub fn occluded_recall(&self) -> (f64, f64) {
        mean_std(&self.reports.iter().map(|r| r.occluded_recall).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub rows: Vec<VariantResult>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str =
        "variant,seeds,sc_iou_mean,sc_iou_std,miou_mean,miou_std,occluded_recall_mean,occluded_recall_std";

    pub fn row(&self, name: &str) -> Option<&VariantResult> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let (a, b) = r.sc_iou();
            let (c, d) = r.miou();
            let (e, f) = r.occluded_recall();
            let _ = writeln!(s, "{},{},{a:.6},{b:.6},{c:.6},{d:.6},{e:.6},{f:.6}", r.name, r.reports.len());
        }
        s
    }
}

/// Trains every variant of `suite` once per seed on shared scenes and
/// evaluates each on the held-out split. `progress` is told about every
/// finished run.
pub fn run_ablation(
    suite: Suite,
    base: &ExperimentConfig,
    seeds: &[u64],
    mut progress: impl FnMut(&str, u64, &MetricsReport),
) -> Result<AblationTable, TrainError> {
    base.validate()?;
    let train: Vec<SceneData<f64>> = load_scenes(base, false)?;
    let held_out: Vec<SceneData<f64>> = load_scenes(base, true)?;
    let mut rows = Vec::new();
    for (name, cfg) in variants(suite, base) {
        cfg.validate()?;
        let mut reports = Vec::with_capacity(seeds.len());
        let mut seconds = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let start = Instant::now();
            let mut c = cfg.clone();
            c.seed = seed;
            let t = fit(&c, &train, |_| {}, &mut None)?;
            let r = evaluate(&t.model, &t.store, &held_out, c.protocol)?;
            seconds.push(start.elapsed().as_secs_f64());
            progress(&name, seed, &r);
            reports.push(r);
        }
        rows.push(VariantResult {
            name,
            seeds: seeds.to_vec(),
            reports,
            seconds,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_have_table_rows() {
        let base = ExperimentConfig::default();
        let names: Vec<String> = variants(Suite::Components, &base).into_iter().map(|v| v.0).collect();
        assert_eq!(names, ["full", "wo_nerf", "wo_sparse_conv", "nerf_only"]);
        let s = variants(Suite::Sampling, &base);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|(_, c)| c.validate().is_ok()));
        assert_eq!(s[0].1.samples, 64);
        assert_eq!(s[0].1.sampling, SamplingStrategy::Hierarchical);
        let only = &variants(Suite::Components, &base)[3].1;
        assert!(!only.lift && !only.explicit && only.nerf);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_table() {
        let mut base = ExperimentConfig::default();
        base.train_scenes = 1;
        base.eval_scenes = 1;
        base.channels = 4;
        base.attention.layers = vec![1, 1, 1, 1];
        base.attention.points = vec![2, 2, 2, 2];
        base.field_hidden = 8;
        base.rays_per_camera = 2;
        base.samples = 4;
        base.candidates = 8;
        base.occupancy_samples = 4;
        base.steps = 1;
        let mut seen = 0;
        let t = run_ablation(Suite::Components, &base, &[0, 1], |_, _, _| seen += 1).unwrap();
        assert_eq!(seen, 8);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("full,2,"));
    }
}
