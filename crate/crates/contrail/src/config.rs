//! Experiment configuration: a flat `key = value` text format with dotted
//! sections. Every knob has a default, so a near-empty file runs the full
//! default grid on synthetic data; the resolved config echoes back in a
//! canonical order that re-parses to the same configuration.

use crate::cohort::{Task, Window};
use crate::error::{Error, Result};
use crate::eval::{CheckpointMode, ExperimentSpec, Regime};
use crate::loss::LossKind;
use crate::model::EncoderKind;
use crate::synth::GeneratorConfig;
use crate::train::TrainConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub cohort_path: Option<PathBuf>,
    pub schema_path: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub tasks: Vec<Task>,
    pub encoders: Vec<EncoderKind>,
    pub losses: Vec<LossKind>,
    pub windows: Vec<Window>,
    pub regimes: Vec<Regime>,
    pub restricted_rates: BTreeMap<Task, f64>,
    pub clip_low: f64,
    pub clip_high: f64,
    pub latent: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub resample_peers: bool,
    pub a: f64,
    pub b: f64,
    pub m: usize,
    pub q: usize,
    pub folds: usize,
    pub checkpoints: CheckpointMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        let train = TrainConfig::default();
        ExperimentConfig {
            seed: 42,
            out: None,
            jobs: 0,
            cohort_path: None,
            schema_path: None,
            generator: GeneratorConfig::default(),
            tasks: spec.tasks,
            encoders: spec.encoders,
            losses: spec.losses,
            windows: spec.windows,
            regimes: spec.regimes,
            restricted_rates: spec.restricted_rates,
            clip_low: spec.clip_low,
            clip_high: spec.clip_high,
            latent: train.latent,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            batch: train.batch,
            resample_peers: train.resample_each_epoch,
            a: train.a,
            b: train.b,
            m: train.m,
            q: train.q,
            folds: spec.folds,
            checkpoints: CheckpointMode::FirstFold,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_strict(&text)
    }

    pub fn from_str_strict(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        config.generator.seed = config.seed;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "jobs" => self.jobs = parse_num(key, value)?,
            "cohort.path" => self.cohort_path = Some(PathBuf::from(value)),
            "cohort.schema" => self.schema_path = Some(PathBuf::from(value)),
            "generator.patients" => self.generator.n_patients = parse_num(key, value)?,
            "generator.rate.mortality" => {
                self.generator
                    .positive_rates
                    .insert(Task::Mortality, parse_num(key, value)?);
            }
            "generator.rate.intubation" => {
                self.generator
                    .positive_rates
                    .insert(Task::Intubation, parse_num(key, value)?);
            }
            "generator.rate.icu_transfer" => {
                self.generator
                    .positive_rates
                    .insert(Task::IcuTransfer, parse_num(key, value)?);
            }
            "generator.signal_features" => {
                self.generator.signal_features = parse_pairs(key, value)?;
            }
            "generator.feature_missingness" => {
                self.generator.feature_missingness = parse_pairs(key, value)?;
            }
            "generator.noise_std" => self.generator.noise_std = parse_num(key, value)?,
            "generator.missingness" => self.generator.missingness = parse_num(key, value)?,
            "generator.stay_mu_ln" => self.generator.stay_mu_ln = parse_num(key, value)?,
            "generator.stay_sigma_ln" => self.generator.stay_sigma_ln = parse_num(key, value)?,
            "generator.label_sharpness" => {
                self.generator.label_sharpness = parse_num(key, value)?;
            }
            "run.tasks" => self.tasks = parse_list(value, Task::parse)?,
            "run.encoders" => self.encoders = parse_list(value, EncoderKind::parse)?,
            "run.losses" => self.losses = parse_list(value, LossKind::parse)?,
            "run.windows" => self.windows = parse_list(value, Window::parse)?,
            "run.regimes" => self.regimes = parse_list(value, Regime::parse)?,
            "restricted.rate.mortality" => {
                self.restricted_rates
                    .insert(Task::Mortality, parse_num(key, value)?);
            }
            "restricted.rate.intubation" => {
                self.restricted_rates
                    .insert(Task::Intubation, parse_num(key, value)?);
            }
            "restricted.rate.icu_transfer" => {
                self.restricted_rates
                    .insert(Task::IcuTransfer, parse_num(key, value)?);
            }
            "clip.low" => self.clip_low = parse_num(key, value)?,
            "clip.high" => self.clip_high = parse_num(key, value)?,
            "model.latent" => self.latent = parse_num(key, value)?,
            "train.epochs" => self.epochs = parse_num(key, value)?,
            "train.learning_rate" => self.learning_rate = parse_num(key, value)?,
            "train.batch" => self.batch = parse_num(key, value)?,
            "train.resample_peers" => self.resample_peers = parse_bool(key, value)?,
            "loss.a" => self.a = parse_num(key, value)?,
            "loss.b" => self.b = parse_num(key, value)?,
            "loss.m" => self.m = parse_num(key, value)?,
            "loss.q" => self.q = parse_num(key, value)?,
            "cv.folds" => self.folds = parse_num(key, value)?,
            "checkpoints" => self.checkpoints = CheckpointMode::parse(value)?,
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical text form. Re-parsing it reproduces this config exactly;
    /// the output directory is intentionally not part of it.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("jobs", self.jobs.to_string());
        if let Some(p) = &self.cohort_path {
            kv("cohort.path", p.display().to_string());
        }
        if let Some(p) = &self.schema_path {
            kv("cohort.schema", p.display().to_string());
        }
        kv("generator.patients", self.generator.n_patients.to_string());
        for task in Task::ALL {
            kv(
                &format!("generator.rate.{task}"),
                self.generator.positive_rates[&task].to_string(),
            );
        }
        kv(
            "generator.signal_features",
            format_pairs(&self.generator.signal_features),
        );
        if !self.generator.feature_missingness.is_empty() {
            kv(
                "generator.feature_missingness",
                format_pairs(&self.generator.feature_missingness),
            );
        }
        kv("generator.noise_std", self.generator.noise_std.to_string());
        kv(
            "generator.missingness",
            self.generator.missingness.to_string(),
        );
        kv("generator.stay_mu_ln", self.generator.stay_mu_ln.to_string());
        kv(
            "generator.stay_sigma_ln",
            self.generator.stay_sigma_ln.to_string(),
        );
        kv(
            "generator.label_sharpness",
            self.generator.label_sharpness.to_string(),
        );
        kv("run.tasks", join(&self.tasks));
        kv("run.encoders", join(&self.encoders));
        kv("run.losses", join(&self.losses));
        kv("run.windows", join(&self.windows));
        kv("run.regimes", join(&self.regimes));
        for task in Task::ALL {
            if let Some(rate) = self.restricted_rates.get(&task) {
                kv(&format!("restricted.rate.{task}"), rate.to_string());
            }
        }
        kv("clip.low", self.clip_low.to_string());
        kv("clip.high", self.clip_high.to_string());
        kv("model.latent", self.latent.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.learning_rate", self.learning_rate.to_string());
        kv("train.batch", self.batch.to_string());
        kv("train.resample_peers", self.resample_peers.to_string());
        kv("loss.a", self.a.to_string());
        kv("loss.b", self.b.to_string());
        kv("loss.m", self.m.to_string());
        kv("loss.q", self.q.to_string());
        kv("cv.folds", self.folds.to_string());
        kv("checkpoints", self.checkpoints.to_string());
        s
    }

    /// The driver-facing view of this config.
    pub fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            tasks: self.tasks.clone(),
            encoders: self.encoders.clone(),
            losses: self.losses.clone(),
            windows: self.windows.clone(),
            regimes: self.regimes.clone(),
            restricted_rates: self.restricted_rates.clone(),
            folds: self.folds,
            train: TrainConfig {
                latent: self.latent,
                epochs: self.epochs,
                learning_rate: self.learning_rate,
                a: self.a,
                b: self.b,
                m: self.m,
                q: self.q,
                batch: self.batch,
                resample_each_epoch: self.resample_peers,
            },
            clip_low: self.clip_low,
            clip_high: self.clip_high,
            seed: self.seed,
            jobs: self.jobs,
            checkpoints: self.checkpoints,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("bad boolean `{value}` for {key}"))),
    }
}

fn parse_list<T>(value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|part| f(part.trim())).collect()
}

/// `feature:value` pairs, e.g. `2:2.0,10:1.4`.
fn parse_pairs(key: &str, value: &str) -> Result<Vec<(usize, f64)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            let (f, v) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::config(format!("bad pair `{part}` for {key}")))?;
            Ok((parse_num(key, f.trim())?, parse_num(key, v.trim())?))
        })
        .collect()
}

fn format_pairs(pairs: &[(usize, f64)]) -> String {
    pairs
        .iter()
        .map(|(f, v)| format!("{f}:{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
