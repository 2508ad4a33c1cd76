//! Experiment files, sweeps over seeds and operating points, per-run metrics
//! and CSV output.
//!
//! An experiment file is flat TOML: every simulation key of the config file
//! plus the experiment keys below.
//!
//! ```toml
//! policy = ["proposed", "one_time_greedy"]
//! seeds = [1, 2, 3]
//! sweep = [[1.0, 0.9], [1.5, 0.9]]   # (device tasks per second, edge load)
//! output_path = "results.csv"
//! profile_path = "profiles/alexnet.toml"
//! weight_energy = 0.002
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{SimConfig, SimConfigFile};
use crate::contvalue::ContValueModel;
use crate::error::{Error, Result};
use crate::profile::{DnnProfile, ProfileSpec};
use crate::sim::{edge_load_to_lambda, lambda_to_edge_load};
use crate::simulation::{simulate, Policy, RunOptions, RunResult};

/// CSV column order.
pub const CSV_COLUMNS: [&str; 12] = [
    "policy",
    "device_task_rate",
    "edge_load",
    "seed",
    "mean_utility",
    "mean_delay_s",
    "mean_accuracy",
    "mean_energy_j",
    "training_samples",
    "final_training_loss",
    "decision_evaluations",
    "signaling_messages",
];

/// One operating point: device tasks per second and edge load fraction.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct SweepPoint {
    pub device_task_rate: f64,
    pub edge_load: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PolicyField {
    One(Policy),
    Many(Vec<Policy>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    policy: Option<PolicyField>,
    seeds: Option<Vec<u64>>,
    sweep: Option<Vec<(f64, f64)>>,
    output_path: Option<PathBuf>,
    profile_path: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    checkpoint_dir: Option<PathBuf>,
}

const EXPERIMENT_KEYS: [&str; 7] = [
    "policy",
    "seeds",
    "sweep",
    "output_path",
    "profile_path",
    "checkpoint",
    "checkpoint_dir",
];

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub sim: SimConfig,
    pub profile_path: Option<PathBuf>,
    pub policies: Vec<Policy>,
    pub sweep: Vec<SweepPoint>,
    pub seeds: Vec<u64>,
    pub output_path: Option<PathBuf>,
    /// Initial model for learned policies.
    pub checkpoint: Option<PathBuf>,
    /// Where to write each learned run's final model.
    pub checkpoint_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Single-point spec with the operating point taken from `sim`.
    pub fn new(sim: SimConfig, policies: Vec<Policy>, seeds: Vec<u64>) -> Self {
        let point = SweepPoint {
            device_task_rate: sim.device_task_rate(),
            edge_load: lambda_to_edge_load(sim.edge_arrival_rate, &sim),
        };
        Self {
            sim,
            profile_path: None,
            policies,
            sweep: vec![point],
            seeds,
            output_path: None,
            checkpoint: None,
            checkpoint_dir: None,
        }
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::parse(origin, e))?;
        let mut exp = toml::Table::new();
        for key in EXPERIMENT_KEYS {
            if let Some(v) = table.remove(key) {
                exp.insert(key.to_string(), v);
            }
        }
        let sim_file: SimConfigFile = table.try_into().map_err(|e| Error::parse(origin, e))?;
        let exp: ExperimentFile = exp.try_into().map_err(|e| Error::parse(origin, e))?;
        let sim = sim_file.resolve();
        let policies = match exp.policy {
            None => vec![Policy::Proposed],
            Some(PolicyField::One(p)) => vec![p],
            Some(PolicyField::Many(ps)) => ps,
        };
        let mut spec = Self::new(sim.clone(), policies, exp.seeds.unwrap_or_else(|| vec![sim.rng_seed]));
        if let Some(points) = exp.sweep {
            spec.sweep = points
                .into_iter()
                .map(|(device_task_rate, edge_load)| SweepPoint {
                    device_task_rate,
                    edge_load,
                })
                .collect();
        }
        let base = origin.parent().unwrap_or(Path::new(""));
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        spec.profile_path = exp.profile_path.map(rel);
        spec.checkpoint = exp.checkpoint.map(rel);
        spec.checkpoint_dir = exp.checkpoint_dir.map(rel);
        spec.output_path = exp.output_path.map(rel);
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Simulation config of one run.
    pub fn config_for(&self, point: SweepPoint, seed: u64) -> SimConfig {
        let mut cfg = self.sim.clone();
        cfg.device_task_prob = point.device_task_rate * cfg.slot_duration_s;
        cfg.edge_arrival_rate = edge_load_to_lambda(point.edge_load, &cfg);
        cfg.rng_seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("policy list must not be empty".into()));
        }
        if self.sweep.is_empty() {
            return Err(Error::Config("sweep must not be empty".into()));
        }
        for p in &self.sweep {
            let prob = p.device_task_rate * self.sim.slot_duration_s;
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::Config(format!(
                    "device task rate {}/s gives per-slot probability {prob} outside [0, 1]",
                    p.device_task_rate
                )));
            }
            if !(p.edge_load >= 0.0 && p.edge_load.is_finite()) {
                return Err(Error::Config(format!("edge load {} must be non-negative", p.edge_load)));
            }
        }
        for &p in &self.sweep {
            self.config_for(p, 0).validate()?;
        }
        self.profile()?;
        Ok(())
    }

    pub fn profile(&self) -> Result<DnnProfile> {
        match &self.profile_path {
            Some(path) => DnnProfile::from_spec(&ProfileSpec::load(path)?, &self.sim),
            None => Ok(DnnProfile::default_for(&self.sim)),
        }
    }
}

/// Per-run summary; averages are over the tasks after the training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub policy: Policy,
    pub device_task_rate: f64,
    pub edge_load: f64,
    pub seed: u64,
    pub eval_tasks: usize,
    pub mean_utility: f64,
    pub mean_delay_s: f64,
    pub mean_accuracy: f64,
    pub mean_energy_j: f64,
    pub training_samples: usize,
    pub final_training_loss: Option<f64>,
    pub decision_evaluations: f64,
    pub signaling_messages: u64,
}

impl RunMetrics {
    pub fn from_run(run: &RunResult, point: SweepPoint, train_task_count: usize) -> Self {
        let eval = run.eval_tasks(train_task_count);
        let n = eval.len() as f64;
        let mean = |f: &dyn Fn(&crate::simulation::TaskRecord) -> f64| {
            if eval.is_empty() {
                f64::NAN
            } else {
                eval.iter().map(f).sum::<f64>() / n
            }
        };
        Self {
            policy: run.policy,
            device_task_rate: point.device_task_rate,
            edge_load: point.edge_load,
            seed: run.seed,
            eval_tasks: eval.len(),
            mean_utility: mean(&|t| t.cost.utility),
            mean_delay_s: mean(&|t| t.cost.total_delay_s),
            mean_accuracy: mean(&|t| t.cost.accuracy),
            mean_energy_j: mean(&|t| t.cost.energy_j),
            training_samples: run.training_samples.last().copied().unwrap_or(0),
            final_training_loss: run.final_training_loss,
            decision_evaluations: mean(&|t| t.evaluations as f64),
            signaling_messages: run.signaling_messages,
        }
    }

    fn row(&self) -> [String; 12] {
        [
            self.policy.to_string(),
            format!("{:.4}", self.device_task_rate),
            format!("{:.4}", self.edge_load),
            self.seed.to_string(),
            format!("{:.9}", self.mean_utility),
            format!("{:.9}", self.mean_delay_s),
            format!("{:.9}", self.mean_accuracy),
            format!("{:.9}", self.mean_energy_j),
            self.training_samples.to_string(),
            self.final_training_loss.map_or(String::new(), |l| format!("{l:.9e}")),
            format!("{:.6}", self.decision_evaluations),
            self.signaling_messages.to_string(),
        ]
    }
}

/// One run with its summary and full result.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub point: SweepPoint,
    pub metrics: RunMetrics,
    pub result: RunResult,
}

/// Runs every (policy, point, seed) on the rayon pool; results come back
/// sorted by policy, point and seed regardless of scheduling.
pub fn run_experiment_full(spec: &ExperimentSpec) -> Result<Vec<RunOutput>> {
    spec.validate()?;
    let profile = spec.profile()?;
    let initial = spec.checkpoint.as_ref().map(ContValueModel::load).transpose()?;
    let mut jobs = Vec::new();
    for &policy in &spec.policies {
        for (pi, &point) in spec.sweep.iter().enumerate() {
            for &seed in &spec.seeds {
                jobs.push((policy, pi, point, seed));
            }
        }
    }
    let mut outputs: Vec<(Policy, usize, u64, RunOutput)> = jobs
        .into_par_iter()
        .map(|(policy, pi, point, seed)| {
            let cfg = spec.config_for(point, seed);
            let opts = RunOptions {
                initial_model: initial.clone(),
            };
            let result = simulate(&cfg, &profile, policy, opts).map_err(|e| Error::Run {
                policy: policy.name().to_string(),
                device_task_rate: point.device_task_rate,
                edge_load: point.edge_load,
                seed,
                source: Box::new(e),
            })?;
            if let (Some(dir), Some(model)) = (&spec.checkpoint_dir, &result.model) {
                model.save(dir.join(format!("{policy}_p{pi}_s{seed}.json")))?;
            }
            let metrics = RunMetrics::from_run(&result, point, cfg.train_task_count);
            Ok((policy, pi, seed, RunOutput { point, metrics, result }))
        })
        .collect::<Result<_>>()?;
    outputs.sort_by_key(|o| (o.0, o.1, o.2));
    Ok(outputs.into_iter().map(|o| o.3).collect())
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunMetrics>> {
    Ok(run_experiment_full(spec)?.into_iter().map(|o| o.metrics).collect())
}

pub fn write_csv<W: Write>(metrics: &[RunMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for m in metrics {
        w.write_record(m.row())?;
    }
    w.flush().map_err(|e| Error::Io {
        path: PathBuf::from("<csv>"),
        source: e,
    })?;
    Ok(())
}

pub fn emit_csv(metrics: &[RunMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(metrics, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Csv(c) => Error::Parse {
            path: path.to_path_buf(),
            message: c.to_string(),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        let sim = SimConfig {
            device_task_prob: 0.02,
            train_task_count: 10,
            eval_task_count: 20,
            weight_energy: 0.002,
            ..SimConfig::default()
        };
        ExperimentSpec::new(sim, vec![Policy::OneTimeGreedy, Policy::Proposed], vec![3, 1])
    }

    #[test]
    fn parses_flat_file() {
        let text = r#"
            policy = ["one_time_greedy", "proposed"]
            seeds = [1, 2]
            sweep = [[1.0, 0.9], [2.0, 0.5]]
            weight_energy = 0.002
            eval_task_count = 100
        "#;
        let spec = ExperimentSpec::from_toml(text, Path::new("exp.toml")).unwrap();
        assert_eq!(spec.policies, vec![Policy::OneTimeGreedy, Policy::Proposed]);
        assert_eq!(spec.sweep.len(), 2);
        assert_eq!(spec.sim.eval_task_count, 100);
        let cfg = spec.config_for(spec.sweep[0], 2);
        assert!((cfg.device_task_prob - 0.01).abs() < 1e-15);
        assert!((cfg.edge_arrival_rate - 11.25).abs() < 1e-12);
        assert_eq!(cfg.rng_seed, 2);
    }

    #[test]
    fn single_policy_and_defaults() {
        let spec = ExperimentSpec::from_toml("policy = \"one_time_ideal\"", Path::new("x.toml")).unwrap();
        assert_eq!(spec.policies, vec![Policy::OneTimeIdeal]);
        assert_eq!(spec.seeds, vec![0]);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "seeds = []",
            "policy = \"best\"",
            "sweep = [[150.0, 0.9]]",
            "unknown_key = 1",
            "acc_full = 0.1",
        ] {
            assert!(ExperimentSpec::from_toml(text, Path::new("x.toml")).is_err(), "{text}");
        }
    }

    #[test]
    fn empty_metrics_give_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn results_are_sorted_and_deterministic() {
        let spec = tiny_spec();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        let keys: Vec<_> = a.iter().map(|m| (m.policy, m.seed)).collect();
        assert_eq!(
            keys,
            vec![
                (Policy::Proposed, 1),
                (Policy::Proposed, 3),
                (Policy::OneTimeGreedy, 1),
                (Policy::OneTimeGreedy, 3)
            ]
        );
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_csv(&a, &mut x).unwrap();
        write_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 12));
    }

    #[test]
    fn zero_rate_gives_empty_metrics() {
        let mut spec = tiny_spec();
        spec.sweep = vec![SweepPoint {
            device_task_rate: 0.0,
            edge_load: 0.9,
        }];
        let m = run_experiment(&spec).unwrap();
        assert!(m.iter().all(|m| m.eval_tasks == 0 && m.mean_utility.is_nan()));
    }
}
