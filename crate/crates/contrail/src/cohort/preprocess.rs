//! Cohort preprocessing: percentile clipping, z-scoring, static encoding,
//! endpoint statistics, time binning, and positive-label down-sampling.
//!
//! All statistics are meant to be computed on the training fold of a CV
//! split and then applied unchanged to held-out patients.

use super::{
    BinnedSequence, Cohort, PatientRecord, Task, Window, BIN_HOURS, COMORBIDITY_COUNT,
    FEATURE_COUNT, STATIC_DIM,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Per-feature clipping interval; `None` when the training fold had no
/// observations, in which case every downstream value of that feature is
/// treated as missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub features: Vec<Option<(f64, f64)>>,
    pub age: Option<(f64, f64)>,
    pub low_percentile: f64,
    pub high_percentile: f64,
}

/// Mean and sample (n-1) standard deviation of one numeric feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl FeatureStat {
    fn from_values(values: &[f64]) -> FeatureStat {
        let n = values.len();
        if n == 0 {
            return FeatureStat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        FeatureStat {
            mean,
            std,
            count: n,
        }
    }

    /// Standard score; zero when the spread is zero or the stat is empty.
    pub fn z(&self, value: f64) -> f64 {
        if self.count == 0 || self.std == 0.0 {
            0.0
        } else {
            (value - self.mean) / self.std
        }
    }
}

/// Z-score statistics for the 63 longitudinal features plus age.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: Vec<FeatureStat>,
    pub age: FeatureStat,
}

/// Mean/std (hours) of admission-to-event time among positive patients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointStats {
    pub mean: f64,
    pub std: f64,
    pub positives: usize,
}

/// Reference endpoint for a negative patient; `short_stay` marks stays
/// shorter than the window, whose leading bins will be zero-filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledEndpoint {
    pub time: f64,
    pub short_stay: bool,
}

/// Nearest-rank percentile of an already-sorted sample.
fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Per-feature percentile bounds from the given (training) cohort, using
/// nearest-rank percentiles on a stably sorted sample.
pub fn compute_clip_bounds(cohort: &Cohort, low: f64, high: f64) -> Result<ClipBounds> {
    if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || low >= high {
        return Err(Error::contract(format!(
            "percentiles must satisfy 0 <= low < high <= 100, got ({low}, {high})"
        )));
    }
    let mut per_feature: Vec<Vec<f64>> = vec![Vec::new(); FEATURE_COUNT];
    let mut ages: Vec<f64> = Vec::with_capacity(cohort.len());
    for p in &cohort.patients {
        for m in &p.timeline {
            per_feature[m.feature()].push(m.value());
        }
        ages.push(p.statics.age);
    }
    let bounds_of = |mut values: Vec<f64>| -> Option<(f64, f64)> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        Some((nearest_rank(&values, low), nearest_rank(&values, high)))
    };
    Ok(ClipBounds {
        features: per_feature.into_iter().map(bounds_of).collect(),
        age: bounds_of(ages),
        low_percentile: low,
        high_percentile: high,
    })
}

/// Drop measurements outside their feature's clip interval. Out-of-range
/// values count as inaccurate measurements and become missing; features
/// with no bounds lose all their values.
pub fn apply_clip_bounds(cohort: &Cohort, bounds: &ClipBounds) -> Cohort {
    let patients = cohort
        .patients
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.timeline.retain(|m| match bounds.features[m.feature()] {
                Some((lo, hi)) => m.value() >= lo && m.value() <= hi,
                None => false,
            });
            q
        })
        .collect();
    Cohort::new(patients)
}

/// Mean / sample std per feature (and for age) over a clipped cohort.
pub fn compute_norm_stats(cohort: &Cohort) -> NormStats {
    let mut per_feature: Vec<Vec<f64>> = vec![Vec::new(); FEATURE_COUNT];
    let mut ages: Vec<f64> = Vec::with_capacity(cohort.len());
    for p in &cohort.patients {
        for m in &p.timeline {
            per_feature[m.feature()].push(m.value());
        }
        ages.push(p.statics.age);
    }
    NormStats {
        features: per_feature
            .iter()
            .map(|v| FeatureStat::from_values(v))
            .collect(),
        age: FeatureStat::from_values(&ages),
    }
}

/// Replace every measurement value by its standard score.
pub fn normalize(cohort: &Cohort, stats: &NormStats) -> Cohort {
    let patients = cohort
        .patients
        .iter()
        .map(|p| {
            let mut q = p.clone();
            for m in &mut q.timeline {
                m.2 = stats.features[m.1].z(m.2);
            }
            q
        })
        .collect();
    Cohort::new(patients)
}

/// Encode demographics as `[age_z | gender(2) | race(5) | comorbidities(12)]`.
/// Ages outside the clip interval are treated as missing (zero).
pub fn encode_statics(record: &PatientRecord, bounds: &ClipBounds, stats: &NormStats) -> Tensor {
    let mut out = vec![0.0; STATIC_DIM];
    let age_ok = match bounds.age {
        Some((lo, hi)) => record.statics.age >= lo && record.statics.age <= hi,
        None => false,
    };
    if age_ok {
        out[0] = stats.age.z(record.statics.age);
    }
    match record.statics.gender {
        super::Gender::Male => out[1] = 1.0,
        super::Gender::Female => out[2] = 1.0,
    }
    out[3 + record.statics.race.one_hot_index()] = 1.0;
    for (i, &c) in record.statics.comorbidities.iter().enumerate() {
        out[8 + i] = c as f64;
    }
    debug_assert_eq!(8 + COMORBIDITY_COUNT, STATIC_DIM);
    Tensor::vector(out)
}

/// Mean and sample std of elapsed admission-to-event hours over the
/// positive patients of the (training) cohort.
pub fn estimate_endpoint_stats(cohort: &Cohort, task: Task) -> Result<EndpointStats> {
    let elapsed: Vec<f64> = cohort
        .patients
        .iter()
        .filter(|p| p.is_positive(task))
        .map(|p| p.outcome(task).event_time.expect("positive has event") - p.admit)
        .collect();
    if elapsed.len() < 2 {
        return Err(Error::contract(format!(
            "need at least 2 positive patients for {task} endpoint stats, got {}",
            elapsed.len()
        )));
    }
    let stat = FeatureStat::from_values(&elapsed);
    Ok(EndpointStats {
        mean: stat.mean,
        std: stat.std,
        positives: elapsed.len(),
    })
}

/// Draw a Gaussian reference endpoint for a negative patient, clamped into
/// `[window, stay]` hours after admission (or to the stay end for stays
/// shorter than the window).
pub fn sample_negative_endpoint(
    stats: &EndpointStats,
    record: &PatientRecord,
    window: Window,
    rng: &mut impl Rng,
) -> SampledEndpoint {
    let stay = record.stay_hours();
    let elapsed = if stats.std == 0.0 {
        stats.mean
    } else {
        let normal = Normal::new(stats.mean, stats.std).expect("finite endpoint stats");
        normal.sample(rng)
    };
    let short_stay = stay < window.hours();
    let lo = window.hours().min(stay);
    let clamped = elapsed.clamp(lo, stay.max(lo));
    SampledEndpoint {
        time: record.admit + clamped,
        short_stay,
    }
}

/// Bin the window `[endpoint - window, endpoint)` into 6-hour chunks,
/// averaging same-bin measurements per feature; absent cells stay zero.
/// The output is invariant to the order of timeline entries.
pub fn bin_timeline(
    record: &PatientRecord,
    window: Window,
    endpoint: f64,
    label: bool,
    statics: Tensor,
) -> BinnedSequence {
    let n = window.bins();
    let start = endpoint - window.hours();
    let mut sums = vec![0.0; n * FEATURE_COUNT];
    let mut counts = vec![0usize; n * FEATURE_COUNT];

    // Canonical measurement order makes the bin means independent of the
    // timeline's storage order.
    let mut in_window: Vec<&super::Measurement> = record
        .timeline
        .iter()
        .filter(|m| m.time() >= start && m.time() < endpoint)
        .collect();
    in_window.sort_by(|a, b| {
        a.time()
            .total_cmp(&b.time())
            .then(a.feature().cmp(&b.feature()))
            .then(a.value().total_cmp(&b.value()))
    });

    for m in in_window {
        let bin = (((m.time() - start) / BIN_HOURS).floor() as usize).min(n - 1);
        let cell = bin * FEATURE_COUNT + m.feature();
        sums[cell] += m.value();
        counts[cell] += 1;
    }
    let data: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    BinnedSequence {
        patient_id: record.id.clone(),
        matrix: Tensor::new(vec![n, FEATURE_COUNT], data).expect("bin matrix shape"),
        statics,
        label,
    }
}

/// Uniformly remove positive patients until the positive fraction is within
/// one patient of `target_rate`. Negatives and retained records are
/// untouched; deterministic given the rng.
pub fn restrict_positives(
    cohort: &Cohort,
    task: Task,
    target_rate: f64,
    rng: &mut impl Rng,
) -> Result<Cohort> {
    if target_rate < 0.05 {
        return Err(Error::contract(format!(
            "target positive rate {target_rate} below the 5% minimum"
        )));
    }
    let positives: Vec<usize> = (0..cohort.len())
        .filter(|&i| cohort.patients[i].is_positive(task))
        .collect();
    let negatives = cohort.len() - positives.len();
    let current = cohort.positive_rate(task);
    if target_rate > current + 1e-12 {
        return Err(Error::contract(format!(
            "target rate {target_rate:.4} above current rate {current:.4} for {task}"
        )));
    }
    // Keep k positives with k/(k + negatives) as close to the target as
    // possible.
    let keep = ((target_rate * negatives as f64) / (1.0 - target_rate)).round() as usize;
    let keep = keep.min(positives.len());
    if keep == positives.len() {
        return Ok(cohort.clone());
    }
    let chosen = index::sample(rng, positives.len(), keep);
    let mut retained = vec![true; cohort.len()];
    for &i in &positives {
        retained[i] = false;
    }
    for c in chosen.iter() {
        retained[positives[c]] = true;
    }
    let patients = cohort
        .patients
        .iter()
        .zip(&retained)
        .filter(|(_, &keep)| keep)
        .map(|(p, _)| p.clone())
        .collect();
    Ok(Cohort::new(patients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Gender, Label, Measurement, Outcome, Race, StaticRaw};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::collections::BTreeMap;

    fn record(id: &str, timeline: Vec<Measurement>, mortality_event: Option<f64>) -> PatientRecord {
        let mut outcomes = BTreeMap::new();
        outcomes.insert(
            Task::Mortality,
            match mortality_event {
                Some(t) => Outcome {
                    label: Label::Positive,
                    event_time: Some(t),
                },
                None => Outcome {
                    label: Label::Negative,
                    event_time: None,
                },
            },
        );
        for task in [Task::Intubation, Task::IcuTransfer] {
            outcomes.insert(
                task,
                Outcome {
                    label: Label::Negative,
                    event_time: None,
                },
            );
        }
        PatientRecord {
            id: id.to_string(),
            admit: 0.0,
            end: 200.0,
            statics: StaticRaw {
                age: 60.0,
                gender: Gender::Male,
                race: Race::Unknown,
                comorbidities: vec![0; 12],
            },
            timeline,
            outcomes,
        }
    }

    fn cohort_of_values(values: &[f64]) -> Cohort {
        let timeline = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Measurement(i as f64 * 0.1, 0, v))
            .collect();
        Cohort::new(vec![record("p0", timeline, None)])
    }

    #[test]
    fn constant_feature_collapses_bounds() {
        let cohort = cohort_of_values(&[5.0; 20]);
        let bounds = compute_clip_bounds(&cohort, 0.5, 99.5).unwrap();
        assert_eq!(bounds.features[0], Some((5.0, 5.0)));
    }

    #[test]
    fn uniform_sample_bounds_near_percentiles() {
        // 1000 evenly spread values stand in for the uniform draw; the
        // sort-based oracle is the same sample.
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let cohort = cohort_of_values(&values);
        let bounds = compute_clip_bounds(&cohort, 0.5, 99.5).unwrap();
        let (lo, hi) = bounds.features[0].unwrap();
        assert!((lo - 0.005).abs() < 0.01, "lo={lo}");
        assert!((hi - 0.995).abs() < 0.01, "hi={hi}");
    }

    #[test]
    fn unobserved_feature_has_absent_bounds_and_drops_values() {
        let train = cohort_of_values(&[1.0, 2.0]);
        let bounds = compute_clip_bounds(&train, 0.5, 99.5).unwrap();
        assert_eq!(bounds.features[5], None);

        let held_out = Cohort::new(vec![record(
            "p1",
            vec![Measurement(0.0, 5, 9.9)],
            None,
        )]);
        let clipped = apply_clip_bounds(&held_out, &bounds);
        assert!(clipped.patients[0].timeline.is_empty());
    }

    #[test]
    fn z_score_uses_sample_std() {
        let cohort = cohort_of_values(&[1.0, 2.0, 3.0]);
        let stats = compute_norm_stats(&cohort);
        let normalized = normalize(&cohort, &stats);
        let values: Vec<f64> = normalized.patients[0]
            .timeline
            .iter()
            .map(|m| m.value())
            .collect();
        // mean 2, sample std 1
        assert!((values[0] - -1.0).abs() < 1e-12);
        assert!((values[1] - 0.0).abs() < 1e-12);
        assert!((values[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_normalizes_to_zero() {
        let cohort = cohort_of_values(&[4.2; 5]);
        let stats = compute_norm_stats(&cohort);
        let normalized = normalize(&cohort, &stats);
        assert!(normalized.patients[0]
            .timeline
            .iter()
            .all(|m| m.value() == 0.0));
    }

    #[test]
    fn statics_layout_matches_contract() {
        let mut r = record("p0", vec![], None);
        r.statics.age = 60.0; // the mean below
        let cohort = Cohort::new(vec![r.clone()]);
        let bounds = compute_clip_bounds(&cohort, 0.5, 99.5).unwrap();
        let stats = compute_norm_stats(&cohort);
        let v = encode_statics(&r, &bounds, &stats);
        let mut expected = vec![0.0; STATIC_DIM];
        expected[1] = 1.0; // male
        expected[3 + Race::Unknown.one_hot_index()] = 1.0;
        assert_eq!(v.data(), &expected[..]);
        assert_eq!(v.numel(), 20);
    }

    #[test]
    fn all_comorbidities_fill_the_tail() {
        let mut r = record("p0", vec![], None);
        r.statics.comorbidities = vec![1; 12];
        let cohort = Cohort::new(vec![r.clone()]);
        let bounds = compute_clip_bounds(&cohort, 0.5, 99.5).unwrap();
        let stats = compute_norm_stats(&cohort);
        let v = encode_statics(&r, &bounds, &stats);
        assert!(v.data()[8..20].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn endpoint_stats_use_sample_std_over_positives_only() {
        let cohort = Cohort::new(vec![
            record("a", vec![], Some(24.0)),
            record("b", vec![], Some(48.0)),
            record("c", vec![], None),
        ]);
        let stats = estimate_endpoint_stats(&cohort, Task::Mortality).unwrap();
        assert_eq!(stats.positives, 2);
        assert!((stats.mean - 36.0).abs() < 1e-12);
        // sample std of {24, 48} = sqrt(2*144) = 16.97...
        assert!((stats.std - 288.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn endpoint_stats_need_two_positives() {
        let cohort = Cohort::new(vec![record("a", vec![], Some(24.0))]);
        assert!(estimate_endpoint_stats(&cohort, Task::Mortality).is_err());
    }

    #[test]
    fn duplicated_elapsed_time_gives_zero_std() {
        let cohort = Cohort::new(vec![
            record("a", vec![], Some(30.0)),
            record("b", vec![], Some(30.0)),
        ]);
        let stats = estimate_endpoint_stats(&cohort, Task::Mortality).unwrap();
        assert_eq!(stats.std, 0.0);
    }

    #[test]
    fn zero_std_endpoint_is_deterministic() {
        let stats = EndpointStats {
            mean: 50.0,
            std: 0.0,
            positives: 2,
        };
        let r = record("n", vec![], None);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let ep = sample_negative_endpoint(&stats, &r, Window::H24, &mut rng);
        assert_eq!(ep.time, 50.0);
        assert!(!ep.short_stay);
    }

    #[test]
    fn low_draws_clamp_to_window_length() {
        let stats = EndpointStats {
            mean: 1.0,
            std: 0.0,
            positives: 2,
        };
        let r = record("n", vec![], None);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let ep = sample_negative_endpoint(&stats, &r, Window::H24, &mut rng);
        assert_eq!(ep.time, 24.0);
    }

    #[test]
    fn short_stays_are_flagged_and_clamped_to_stay_end() {
        let stats = EndpointStats {
            mean: 100.0,
            std: 0.0,
            positives: 2,
        };
        let mut r = record("n", vec![], None);
        r.end = 10.0;
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let ep = sample_negative_endpoint(&stats, &r, Window::H24, &mut rng);
        assert!(ep.short_stay);
        assert_eq!(ep.time, 10.0);
    }

    #[test]
    fn gaussian_mean_matches_stats() {
        let stats = EndpointStats {
            mean: 100.0,
            std: 8.0,
            positives: 2,
        };
        let r = record("n", vec![], None); // stay 200h, no clamping active
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_negative_endpoint(&stats, &r, Window::H24, &mut rng).time;
        }
        let mean = sum / n as f64;
        assert!((mean - 100.0).abs() / 100.0 < 0.01, "mean={mean}");
    }

    #[test]
    fn window_of_24h_gives_four_bins() {
        let r = record("p", vec![], None);
        let statics = Tensor::zeros(vec![STATIC_DIM]);
        let seq = bin_timeline(&r, Window::H24, 48.0, false, statics);
        assert_eq!(seq.matrix.shape(), &[4, FEATURE_COUNT]);
        assert!(seq.matrix.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_bin_measurements_average() {
        let r = record(
            "p",
            vec![Measurement(25.0, 3, 2.0), Measurement(26.5, 3, 4.0)],
            None,
        );
        let statics = Tensor::zeros(vec![STATIC_DIM]);
        let seq = bin_timeline(&r, Window::H24, 48.0, false, statics);
        // window [24, 48): both fall in bin 0
        assert_eq!(seq.matrix.data()[3], 3.0);
    }

    #[test]
    fn binning_is_order_invariant() {
        let measurements = vec![
            Measurement(25.0, 3, 2.0),
            Measurement(26.5, 3, 4.0),
            Measurement(40.0, 7, -1.0),
            Measurement(30.0, 3, 8.0),
        ];
        let mut reversed = measurements.clone();
        reversed.reverse();
        let a = bin_timeline(
            &record("p", measurements, None),
            Window::H24,
            48.0,
            false,
            Tensor::zeros(vec![STATIC_DIM]),
        );
        let b = bin_timeline(
            &record("p", reversed, None),
            Window::H24,
            48.0,
            false,
            Tensor::zeros(vec![STATIC_DIM]),
        );
        assert_eq!(a.matrix, b.matrix);
    }

    fn labelled_cohort(positives: usize, negatives: usize) -> Cohort {
        let mut patients = Vec::new();
        for i in 0..positives {
            patients.push(record(&format!("pos{i}"), vec![], Some(40.0)));
        }
        for i in 0..negatives {
            patients.push(record(&format!("neg{i}"), vec![], None));
        }
        Cohort::new(patients)
    }

    #[test]
    fn restrict_hits_the_target_within_one_patient() {
        let cohort = labelled_cohort(230, 770);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let restricted = restrict_positives(&cohort, Task::Mortality, 0.07, &mut rng).unwrap();
        let kept = restricted.positive_count(Task::Mortality);
        assert_eq!(kept, 58);
        assert_eq!(restricted.len(), 828);
        let rate = restricted.positive_rate(Task::Mortality);
        // within one patient of 7%
        assert!((rate - 0.07).abs() <= 1.0 / restricted.len() as f64);
        // negatives untouched
        assert_eq!(restricted.len() - kept, 770);
    }

    #[test]
    fn restrict_at_current_rate_is_identity() {
        let cohort = labelled_cohort(23, 77);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let restricted = restrict_positives(&cohort, Task::Mortality, 0.23, &mut rng).unwrap();
        assert_eq!(restricted, cohort);
    }

    #[test]
    fn restrict_rejects_upsampling_and_sub_minimum_targets() {
        let cohort = labelled_cohort(10, 90);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        assert!(restrict_positives(&cohort, Task::Mortality, 0.2, &mut rng).is_err());
        assert!(restrict_positives(&cohort, Task::Mortality, 0.01, &mut rng).is_err());
    }

    #[test]
    fn restrict_is_deterministic_and_preserves_records() {
        let cohort = labelled_cohort(50, 450);
        let run = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            restrict_positives(&cohort, Task::Mortality, 0.05, &mut rng).unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a, b);
        for p in &a.patients {
            let original = cohort.patients.iter().find(|q| q.id == p.id).unwrap();
            assert_eq!(p, original);
        }
    }
}
