//! Patient data model: raw records, static encoding, and the binned
//! sequence matrices fed to the encoders.

mod io;
mod preprocess;

pub use io::{load_cohort, save_cohort, FeatureSchema};
pub use preprocess::{
    apply_clip_bounds, bin_timeline, compute_clip_bounds, compute_norm_stats, encode_statics,
    estimate_endpoint_stats, normalize, restrict_positives, sample_negative_endpoint, ClipBounds,
    EndpointStats, FeatureStat, NormStats, SampledEndpoint,
};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Longitudinal feature count: 8 vitals followed by 55 labs.
pub const FEATURE_COUNT: usize = 63;
pub const VITAL_COUNT: usize = 8;
pub const COMORBIDITY_COUNT: usize = 12;
/// Static vector layout: z-scored age (1) + gender one-hot (2)
/// + race one-hot (5) + comorbidity flags (12).
pub const STATIC_DIM: usize = 20;
/// Width of one time bin, in hours.
pub const BIN_HOURS: f64 = 6.0;

pub const VITAL_NAMES: [&str; VITAL_COUNT] = [
    "heart_rate",
    "respiration_rate",
    "pulse_oximetry",
    "systolic_bp",
    "diastolic_bp",
    "temperature",
    "height",
    "weight",
];

/// Predicted outcome kinds.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mortality,
    Intubation,
    IcuTransfer,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Mortality, Task::Intubation, Task::IcuTransfer];

    pub fn index(self) -> usize {
        match self {
            Task::Mortality => 0,
            Task::Intubation => 1,
            Task::IcuTransfer => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "mortality" => Ok(Task::Mortality),
            "intubation" => Ok(Task::Intubation),
            "icu_transfer" => Ok(Task::IcuTransfer),
            other => Err(Error::config(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Task::Mortality => "mortality",
            Task::Intubation => "intubation",
            Task::IcuTransfer => "icu_transfer",
        };
        f.write_str(s)
    }
}

/// Observation window before the reference endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    #[serde(rename = "24h")]
    H24,
    #[serde(rename = "48h")]
    H48,
}

impl Window {
    pub fn hours(self) -> f64 {
        match self {
            Window::H24 => 24.0,
            Window::H48 => 48.0,
        }
    }

    /// Number of 6-hour bins covering the window.
    pub fn bins(self) -> usize {
        (self.hours() / BIN_HOURS) as usize
    }

    pub fn parse(s: &str) -> Result<Window> {
        match s {
            "24" | "24h" => Ok(Window::H24),
            "48" | "48h" => Ok(Window::H48),
            other => Err(Error::config(format!("unknown window `{other}`"))),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::H24 => f.write_str("24h"),
            Window::H48 => f.write_str("48h"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    AfricanAmerican,
    White,
    Asian,
    Other,
    Unknown,
}

impl Race {
    pub fn one_hot_index(self) -> usize {
        match self {
            Race::AfricanAmerican => 0,
            Race::White => 1,
            Race::Asian => 2,
            Race::Other => 3,
            Race::Unknown => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }
}

/// One timestamped measurement: `(time in hours, feature index, value)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement(pub f64, pub usize, pub f64);

impl Measurement {
    pub fn time(&self) -> f64 {
        self.0
    }
    pub fn feature(&self) -> usize {
        self.1
    }
    pub fn value(&self) -> f64 {
        self.2
    }
}

/// Raw demographics and comorbidity flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticRaw {
    pub age: f64,
    pub gender: Gender,
    pub race: Race,
    pub comorbidities: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub label: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_time: Option<f64>,
}

/// One patient: admission interval, statics, timestamped measurements,
/// and a label (plus event time when positive) for every task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub admit: f64,
    pub end: f64,
    #[serde(rename = "static")]
    pub statics: StaticRaw,
    pub timeline: Vec<Measurement>,
    pub outcomes: BTreeMap<Task, Outcome>,
}

impl PatientRecord {
    pub fn stay_hours(&self) -> f64 {
        self.end - self.admit
    }

    pub fn outcome(&self, task: Task) -> &Outcome {
        &self.outcomes[&task]
    }

    pub fn is_positive(&self, task: Task) -> bool {
        self.outcome(task).label.is_positive()
    }

    /// Check every record invariant; errors name the record.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::Validation {
                id: self.id.clone(),
                msg,
            })
        };
        if self.id.is_empty() || self.id.contains([',', '\n', '"']) {
            return fail("id must be non-empty and free of commas/quotes/newlines".into());
        }
        if !(self.admit.is_finite() && self.end.is_finite()) || self.end < self.admit {
            return fail(format!("bad stay interval [{}, {}]", self.admit, self.end));
        }
        if !self.statics.age.is_finite() {
            return fail("age must be finite".into());
        }
        if self.statics.comorbidities.len() != COMORBIDITY_COUNT {
            return fail(format!(
                "expected {COMORBIDITY_COUNT} comorbidity flags, got {}",
                self.statics.comorbidities.len()
            ));
        }
        if self.statics.comorbidities.iter().any(|&c| c > 1) {
            return fail("comorbidity flags must be 0 or 1".into());
        }
        for m in &self.timeline {
            if m.feature() >= FEATURE_COUNT {
                return fail(format!("feature index {} out of range", m.feature()));
            }
            if !m.time().is_finite() || m.time() < self.admit || m.time() > self.end {
                return fail(format!(
                    "timestamp {} outside stay [{}, {}]",
                    m.time(),
                    self.admit,
                    self.end
                ));
            }
            if !m.value().is_finite() {
                return fail(format!("non-finite value for feature {}", m.feature()));
            }
        }
        for task in Task::ALL {
            let Some(outcome) = self.outcomes.get(&task) else {
                return fail(format!("missing outcome for task {task}"));
            };
            match (outcome.label, outcome.event_time) {
                (Label::Positive, Some(t)) if t >= self.admit && t <= self.end => {}
                (Label::Positive, Some(t)) => {
                    return fail(format!("{task} event time {t} outside stay"));
                }
                (Label::Positive, None) => {
                    return fail(format!("{task} positive outcome lacks event_time"));
                }
                (Label::Negative, Some(_)) => {
                    return fail(format!("{task} negative outcome carries event_time"));
                }
                (Label::Negative, None) => {}
            }
        }
        Ok(())
    }
}

/// An ordered collection of validated patient records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>) -> Self {
        Cohort { patients }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn labels(&self, task: Task) -> Vec<bool> {
        self.patients.iter().map(|p| p.is_positive(task)).collect()
    }

    pub fn positive_count(&self, task: Task) -> usize {
        self.patients.iter().filter(|p| p.is_positive(task)).count()
    }

    pub fn positive_rate(&self, task: Task) -> f64 {
        if self.patients.is_empty() {
            0.0
        } else {
            self.positive_count(task) as f64 / self.len() as f64
        }
    }
}

/// Model input for one patient under one (task, window): an `n x 63`
/// matrix of 6-hour bin means plus the 20-dim static vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedSequence {
    pub patient_id: String,
    /// `[n_bins, 63]`, chronological; empty cells are exactly zero.
    pub matrix: Tensor,
    /// `[20]` static vector.
    pub statics: Tensor,
    pub label: bool,
}

impl BinnedSequence {
    pub fn n_bins(&self) -> usize {
        self.matrix.rows()
    }
}
