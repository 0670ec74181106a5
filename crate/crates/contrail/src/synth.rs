//! Synthetic cohort generation with a latent-severity mechanism.
//!
//! Every patient draws a severity `s ~ N(0,1)`. Signal features drift by
//! `effect * s` as the stay progresses, outcomes are Bernoulli in a
//! logistic link of `s` (with the offset bisected so the realized positive
//! count matches the target exactly), and event times fall inside the
//! stay. Prediction difficulty, class imbalance, and ground-truth feature
//! importance are therefore all controlled by one common mechanism.

use crate::cohort::{
    Cohort, Gender, Label, Measurement, Outcome, PatientRecord, Race, StaticRaw, Task,
    COMORBIDITY_COUNT, FEATURE_COUNT, VITAL_COUNT,
};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    /// Target positive fraction per task; matched to within one patient.
    pub positive_rates: BTreeMap<Task, f64>,
    /// `(feature_id, effect_size)` pairs; all other features are noise.
    pub signal_features: Vec<(usize, f64)>,
    pub noise_std: f64,
    /// Probability that any single measurement is dropped.
    pub missingness: f64,
    /// Per-feature missingness overrides (a rate of 1.0 silences a feature).
    pub feature_missingness: Vec<(usize, f64)>,
    /// Log-normal stay length parameters, in ln-hours.
    pub stay_mu_ln: f64,
    pub stay_sigma_ln: f64,
    /// Slope of the logistic label link on severity.
    pub label_sharpness: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let mut positive_rates = BTreeMap::new();
        positive_rates.insert(Task::Mortality, 0.25);
        positive_rates.insert(Task::Intubation, 0.10);
        positive_rates.insert(Task::IcuTransfer, 0.17);
        GeneratorConfig {
            n_patients: 2000,
            positive_rates,
            // pulse oximetry strongest, then two labs
            signal_features: vec![(2, 2.0), (10, 1.4), (40, 1.0)],
            noise_std: 1.0,
            missingness: 0.3,
            feature_missingness: Vec::new(),
            stay_mu_ln: 96.0_f64.ln(),
            stay_sigma_ln: 0.35,
            label_sharpness: 2.2,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (task, &rate) in &self.positive_rates {
            if !(0.0 < rate && rate < 1.0) {
                return Err(Error::contract(format!(
                    "positive rate for {task} must be in (0,1), got {rate}"
                )));
            }
        }
        if self.positive_rates.len() != Task::ALL.len() {
            return Err(Error::contract("a positive rate is required per task"));
        }
        for &(f, e) in &self.signal_features {
            if f >= FEATURE_COUNT || !e.is_finite() {
                return Err(Error::contract(format!(
                    "bad signal feature ({f}, {e})"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.missingness) {
            return Err(Error::contract(format!(
                "global missingness must be in [0,1), got {}",
                self.missingness
            )));
        }
        for &(f, r) in &self.feature_missingness {
            if f >= FEATURE_COUNT || !(0.0..=1.0).contains(&r) {
                return Err(Error::contract(format!(
                    "bad missingness override ({f}, {r})"
                )));
            }
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::contract("noise_std must be finite and >= 0"));
        }
        Ok(())
    }

    fn missingness_of(&self, feature: usize) -> f64 {
        self.feature_missingness
            .iter()
            .rev()
            .find(|&&(f, _)| f == feature)
            .map(|&(_, r)| r)
            .unwrap_or(self.missingness)
    }

    /// Signal feature ids ranked by |effect| descending, ties by index.
    pub fn planted_truth(&self) -> Vec<usize> {
        let mut ranked = self.signal_features.clone();
        ranked.sort_by(|a, b| {
            b.1.abs()
                .total_cmp(&a.1.abs())
                .then(a.0.cmp(&b.0))
        });
        ranked.into_iter().map(|(f, _)| f).collect()
    }
}

/// Bisect the logistic offset until the realized positive count equals
/// `round(target * n)` exactly (the count is monotone in the offset).
fn bisect_offset(severity: &[f64], draws: &[f64], sharpness: f64, target: f64) -> Result<f64> {
    let n = severity.len();
    let want = (target * n as f64).round() as usize;
    let count = |offset: f64| -> usize {
        severity
            .iter()
            .zip(draws)
            .filter(|&(&s, &u)| u < sigmoid(sharpness * s + offset))
            .count()
    };
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = count(mid);
        if c == want {
            return Ok(mid);
        }
        if c < want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let realized = count(mid) as f64 / n as f64;
    if (realized - target).abs() <= 0.01 {
        Ok(mid)
    } else {
        Err(Error::contract(format!(
            "bisection cannot reach positive rate {target}: best {realized}"
        )))
    }
}

/// Deterministically generate a cohort from the config (the seed lives in
/// the config).
pub fn generate_cohort(config: &GeneratorConfig) -> Result<Cohort> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let n = config.n_patients;
    if n == 0 {
        return Ok(Cohort::default());
    }

    let severity_dist = Normal::new(0.0, 1.0).expect("unit normal");
    let stay_dist =
        LogNormal::new(config.stay_mu_ln, config.stay_sigma_ln).expect("finite stay params");

    let severity: Vec<f64> = (0..n).map(|_| severity_dist.sample(&mut rng)).collect();
    let stays: Vec<f64> = (0..n)
        .map(|_| stay_dist.sample(&mut rng).clamp(30.0, 400.0))
        .collect();

    // Label draws and event-time fractions first, so the label mechanism
    // does not perturb the measurement stream.
    let mut label_draws: BTreeMap<Task, Vec<f64>> = BTreeMap::new();
    let mut event_fractions: BTreeMap<Task, Vec<f64>> = BTreeMap::new();
    for task in Task::ALL {
        label_draws.insert(task, (0..n).map(|_| rng.random_range(0.0..1.0)).collect());
        event_fractions.insert(
            task,
            (0..n).map(|_| rng.random_range(0.55..0.95)).collect(),
        );
    }
    let mut labels: BTreeMap<Task, Vec<bool>> = BTreeMap::new();
    for task in Task::ALL {
        let target = config.positive_rates[&task];
        let draws = &label_draws[&task];
        let offset = bisect_offset(&severity, draws, config.label_sharpness, target)?;
        labels.insert(
            task,
            severity
                .iter()
                .zip(draws)
                .map(|(&s, &u)| u < sigmoid(config.label_sharpness * s + offset))
                .collect(),
        );
    }

    let effects: Vec<f64> = {
        let mut e = vec![0.0; FEATURE_COUNT];
        for &(f, eff) in &config.signal_features {
            e[f] = eff;
        }
        e
    };

    let races = [
        Race::AfricanAmerican,
        Race::White,
        Race::Asian,
        Race::Other,
        Race::Unknown,
    ];
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut patients = Vec::with_capacity(n);
    for i in 0..n {
        let s = severity[i];
        let stay = stays[i];

        let age_z: f64 = noise.sample(&mut rng);
        let age = (62.0 + 14.0 * (0.35 * s + 0.94 * age_z)).clamp(18.0, 100.0);
        let gender = if rng.random_bool(0.5) {
            Gender::Male
        } else {
            Gender::Female
        };
        let race = races[rng.random_range(0..races.len())];
        let comorbidities: Vec<u8> = (0..COMORBIDITY_COUNT)
            .map(|_| u8::from(rng.random_bool(sigmoid(0.4 * s - 1.6))))
            .collect();

        // Measurement stream: vitals every ~4h, labs every ~8h, values
        // drifting toward `effect * s` as the stay progresses.
        let mut timeline = Vec::new();
        for feature in 0..FEATURE_COUNT {
            let cadence = if feature < VITAL_COUNT { 4.0 } else { 8.0 };
            let drop_rate = config.missingness_of(feature);
            let baseline = 10.0 + feature as f64;
            let mut k = 0usize;
            loop {
                let t = k as f64 * cadence + rng.random_range(0.0..cadence);
                if t >= stay {
                    break;
                }
                k += 1;
                let keep = !rng.random_bool(drop_rate);
                let ramp = t / stay;
                let value = baseline
                    + effects[feature] * s * ramp
                    + config.noise_std * noise.sample(&mut rng);
                if keep {
                    timeline.push(Measurement(t, feature, value));
                }
            }
        }

        let mut outcomes = BTreeMap::new();
        for task in Task::ALL {
            if labels[&task][i] {
                let event_time = event_fractions[&task][i] * stay;
                outcomes.insert(
                    task,
                    Outcome {
                        label: Label::Positive,
                        event_time: Some(event_time),
                    },
                );
            } else {
                outcomes.insert(
                    task,
                    Outcome {
                        label: Label::Negative,
                        event_time: None,
                    },
                );
            }
        }

        patients.push(PatientRecord {
            id: format!("p{i:05}"),
            admit: 0.0,
            end: stay,
            statics: StaticRaw {
                age,
                gender,
                race,
                comorbidities,
            },
            timeline,
            outcomes,
        });
    }

    let cohort = Cohort::new(patients);
    for p in &cohort.patients {
        p.validate()?;
    }
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: n,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let config = small_config(50, 9);
        let a = generate_cohort(&config).unwrap();
        let b = generate_cohort(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_patients_is_an_empty_cohort() {
        let cohort = generate_cohort(&small_config(0, 1)).unwrap();
        assert!(cohort.is_empty());
    }

    #[test]
    fn realized_rates_match_targets_within_one_patient() {
        let mut config = small_config(1000, 3);
        config.positive_rates.insert(Task::Mortality, 0.23);
        let cohort = generate_cohort(&config).unwrap();
        for task in Task::ALL {
            let target = config.positive_rates[&task];
            let realized = cohort.positive_rate(task);
            assert!(
                (realized - target).abs() <= 1.0 / cohort.len() as f64 + 1e-12,
                "{task}: {realized} vs {target}"
            );
        }
    }

    #[test]
    fn silenced_feature_never_appears() {
        let mut config = small_config(30, 4);
        config.feature_missingness.push((5, 1.0));
        let cohort = generate_cohort(&config).unwrap();
        assert!(cohort
            .patients
            .iter()
            .all(|p| p.timeline.iter().all(|m| m.feature() != 5)));
        // other features still measured
        assert!(cohort
            .patients
            .iter()
            .any(|p| p.timeline.iter().any(|m| m.feature() == 6)));
    }

    #[test]
    fn planted_truth_sorts_by_effect_magnitude() {
        let mut config = small_config(1, 1);
        config.signal_features = vec![(10, 0.5), (3, 2.0)];
        assert_eq!(config.planted_truth(), vec![3, 10]);
        config.signal_features = vec![(7, -1.0)];
        assert_eq!(config.planted_truth(), vec![7]);
        // ties break by index
        config.signal_features = vec![(9, 1.0), (4, -1.0)];
        assert_eq!(config.planted_truth(), vec![4, 9]);
    }

    #[test]
    fn severity_links_signal_features_to_labels() {
        // Positive patients should show elevated late-stay values on the
        // strongest planted feature.
        let config = small_config(400, 5);
        let cohort = generate_cohort(&config).unwrap();
        let late_mean = |p: &PatientRecord| {
            let stay = p.stay_hours();
            let late: Vec<f64> = p
                .timeline
                .iter()
                .filter(|m| m.feature() == 2 && m.time() > 0.5 * stay)
                .map(|m| m.value())
                .collect();
            late.iter().sum::<f64>() / late.len().max(1) as f64
        };
        let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0, 0.0, 0);
        for p in &cohort.patients {
            if p.is_positive(Task::Mortality) {
                pos_sum += late_mean(p);
                pos_n += 1;
            } else {
                neg_sum += late_mean(p);
                neg_n += 1;
            }
        }
        let gap = pos_sum / pos_n as f64 - neg_sum / neg_n as f64;
        assert!(gap > 0.5, "positive/negative late-stay gap {gap}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = small_config(10, 1);
        config.missingness = 1.0;
        assert!(generate_cohort(&config).is_err());

        let mut config = small_config(10, 1);
        config.positive_rates.insert(Task::Mortality, 0.0);
        assert!(generate_cohort(&config).is_err());

        let mut config = small_config(10, 1);
        config.signal_features = vec![(99, 1.0)];
        assert!(generate_cohort(&config).is_err());
    }
}
