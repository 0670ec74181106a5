//! Cross-validated experiment driver: stratified fold assignment,
//! per-fold preprocessing and training, exact ranking metrics, embedding
//! export, and heatmap artifacts.

mod metrics;

pub use metrics::{auprc, auroc, pr_points, roc_points, silhouette};

use crate::checkpoint::{Checkpoint, PreprocessSnapshot};
use crate::cohort::{
    apply_clip_bounds, bin_timeline, compute_clip_bounds, compute_norm_stats, encode_statics,
    estimate_endpoint_stats, normalize, restrict_positives, sample_negative_endpoint,
    BinnedSequence, Cohort, FeatureSchema, Task, Window,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::interpret::{
    aggregate_heatmap, importance_cel, importance_cl, write_heatmap_csv, write_ranking_csv,
    Heatmap, ImportanceMatrix,
};
use crate::loss::LossKind;
use crate::model::EncoderKind;
use crate::train::{encode_value, train, EncoderParams, TrainConfig, TrainedModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

// Seed-derivation tags, shared with checkpoint-based reconstruction.
const SEED_RESTRICT: u64 = 0x52;
const SEED_SPLIT: u64 = 0x53;
const SEED_ENDPOINT: u64 = 0x45;
const SEED_TRAIN: u64 = 0x54;

// ── Fold assignment ──────────────────────────────────────────────────

/// A label-stratified partition of patients into `k` folds.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }
}

/// Stratified k-fold split: each class is shuffled and dealt round-robin,
/// so fold sizes differ by at most one overall and per class.
pub fn kfold_split(labels: &[bool], k: usize, rng: &mut impl rand::Rng) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::contract(format!(
            "k-fold split needs k >= 2, got {k}"
        )));
    }
    if labels.len() < k {
        return Err(Error::contract(format!(
            "cannot split {} patients into {k} folds",
            labels.len()
        )));
    }
    let mut positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    positives.shuffle(rng);
    negatives.shuffle(rng);
    let mut fold_of = vec![0usize; labels.len()];
    for (pos, idx) in positives.iter().chain(negatives.iter()).enumerate() {
        fold_of[*idx] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}

// ── Experiment specification ─────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Full,
    Restricted,
}

impl Regime {
    pub fn index(self) -> usize {
        match self {
            Regime::Full => 0,
            Regime::Restricted => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Regime> {
        match s {
            "full" => Ok(Regime::Full),
            "restricted" => Ok(Regime::Restricted),
            other => Err(Error::config(format!("unknown regime `{other}`"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Full => f.write_str("full"),
            Regime::Restricted => f.write_str("restricted"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointMode {
    None,
    FirstFold,
    All,
}

impl CheckpointMode {
    pub fn parse(s: &str) -> Result<CheckpointMode> {
        match s {
            "none" => Ok(CheckpointMode::None),
            "first" => Ok(CheckpointMode::FirstFold),
            "all" => Ok(CheckpointMode::All),
            other => Err(Error::config(format!("unknown checkpoint mode `{other}`"))),
        }
    }

    fn wants(self, fold: usize) -> bool {
        match self {
            CheckpointMode::None => false,
            CheckpointMode::FirstFold => fold == 0,
            CheckpointMode::All => true,
        }
    }
}

impl fmt::Display for CheckpointMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointMode::None => f.write_str("none"),
            CheckpointMode::FirstFold => f.write_str("first"),
            CheckpointMode::All => f.write_str("all"),
        }
    }
}

/// Everything the driver needs for one grid of runs.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub tasks: Vec<Task>,
    pub encoders: Vec<EncoderKind>,
    pub losses: Vec<LossKind>,
    pub windows: Vec<Window>,
    pub regimes: Vec<Regime>,
    /// Down-sampling targets for the restricted regime.
    pub restricted_rates: BTreeMap<Task, f64>,
    pub folds: usize,
    pub train: TrainConfig,
    pub clip_low: f64,
    pub clip_high: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the machine default.
    pub jobs: usize,
    pub checkpoints: CheckpointMode,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let mut restricted_rates = BTreeMap::new();
        restricted_rates.insert(Task::Mortality, 0.07);
        restricted_rates.insert(Task::Intubation, 0.05);
        restricted_rates.insert(Task::IcuTransfer, 0.07);
        ExperimentSpec {
            tasks: Task::ALL.to_vec(),
            encoders: vec![EncoderKind::Retain, EncoderKind::Rnn],
            losses: vec![LossKind::Cl, LossKind::Cel],
            windows: vec![Window::H24, Window::H48],
            regimes: vec![Regime::Full, Regime::Restricted],
            restricted_rates,
            folds: 10,
            train: TrainConfig::default(),
            clip_low: 0.5,
            clip_high: 99.5,
            seed: 42,
            jobs: 0,
            checkpoints: CheckpointMode::FirstFold,
        }
    }
}

// ── Report structures ────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub silhouette: Option<f64>,
    /// Reason any metric above is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Feature ids of the aggregated importance ranking (attention
    /// encoder only), best first, truncated to ten.
    pub top_features: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub task: Task,
    pub encoder: EncoderKind,
    pub loss: LossKind,
    pub window: Window,
    pub regime: Regime,
    pub positive_rate: f64,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub auprc_mean: Option<f64>,
    pub auprc_std: Option<f64>,
    pub silhouette_mean: Option<f64>,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub cells: Vec<ReportCell>,
}

impl MetricsReport {
    pub fn cell(
        &self,
        task: Task,
        encoder: EncoderKind,
        loss: LossKind,
        window: Window,
        regime: Regime,
    ) -> Option<&ReportCell> {
        self.cells.iter().find(|c| {
            c.task == task
                && c.encoder == encoder
                && c.loss == loss
                && c.window == window
                && c.regime == regime
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MetricsReport> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (Some(mean), Some((ss / (values.len() - 1) as f64).sqrt()))
}

// ── Per-fold data and evaluation ─────────────────────────────────────

/// One fold's model inputs under training-fold statistics.
struct FoldData {
    train: Vec<BinnedSequence>,
    test: Vec<BinnedSequence>,
    test_ids: Vec<String>,
    test_labels: Vec<bool>,
    snapshot: PreprocessSnapshot,
}

fn build_fold_data(
    cohort: &Cohort,
    assignment: &FoldAssignment,
    fold: usize,
    task: Task,
    window: Window,
    clip_low: f64,
    clip_high: f64,
    endpoint_seed: u64,
) -> Result<FoldData> {
    let train_idx = assignment.train_indices(fold);
    let test_idx = assignment.test_indices(fold);

    // Statistics come exclusively from the training fold.
    let train_cohort = Cohort::new(
        train_idx
            .iter()
            .map(|&i| cohort.patients[i].clone())
            .collect(),
    );
    let clip = compute_clip_bounds(&train_cohort, clip_low, clip_high)?;
    let clipped_train = apply_clip_bounds(&train_cohort, &clip);
    let norm = compute_norm_stats(&clipped_train);
    let endpoint = estimate_endpoint_stats(&train_cohort, task)?;
    drop(clipped_train);
    drop(train_cohort);

    // One endpoint rng for the whole fold, drawn in cohort order.
    let mut ep_rng = ChaCha12Rng::seed_from_u64(endpoint_seed);
    let prepared = apply_clip_bounds(cohort, &clip);
    let prepared = normalize(&prepared, &norm);

    let mut sequences = Vec::with_capacity(cohort.len());
    for (raw, record) in cohort.patients.iter().zip(&prepared.patients) {
        let label = raw.is_positive(task);
        let endpoint_time = if label {
            raw.outcome(task).event_time.expect("positive has event")
        } else {
            sample_negative_endpoint(&endpoint, raw, window, &mut ep_rng).time
        };
        let statics = encode_statics(raw, &clip, &norm);
        sequences.push(bin_timeline(record, window, endpoint_time, label, statics));
    }

    let pick = |idx: &[usize]| -> Vec<BinnedSequence> {
        idx.iter().map(|&i| sequences[i].clone()).collect()
    };
    Ok(FoldData {
        train: pick(&train_idx),
        test: pick(&test_idx),
        test_ids: test_idx
            .iter()
            .map(|&i| cohort.patients[i].id.clone())
            .collect(),
        test_labels: test_idx
            .iter()
            .map(|&i| cohort.patients[i].is_positive(task))
            .collect(),
        snapshot: PreprocessSnapshot {
            clip,
            norm,
            endpoint,
        },
    })
}

/// Importance matrices for a set of sequences under a trained attention
/// model, dispatched on the model's loss kind.
fn importances_for(model: &TrainedModel, sequences: &[BinnedSequence]) -> Result<Vec<ImportanceMatrix>> {
    let EncoderParams::Retain(retain) = &model.params.encoder else {
        return Err(Error::contract(
            "feature importance requires the attention encoder",
        ));
    };
    sequences
        .iter()
        .map(|seq| {
            let enc = encode_value(&model.params, seq);
            let alphas = enc.alphas.as_ref().expect("attention encoder");
            let betas = enc.betas.as_ref().expect("attention encoder");
            match model.loss_kind {
                LossKind::Cl => importance_cl(
                    alphas,
                    betas,
                    retain,
                    &model.params.event,
                    model.task,
                    &seq.matrix,
                ),
                LossKind::Cel => {
                    importance_cel(alphas, betas, retain, &model.params.head, &seq.matrix)
                }
            }
        })
        .collect()
}

/// Aggregated held-out heatmap for a trained attention model.
pub fn holdout_heatmap(model: &TrainedModel, sequences: &[BinnedSequence]) -> Result<Heatmap> {
    aggregate_heatmap(&importances_for(model, sequences)?)
}

struct FoldRun {
    metrics: FoldMetrics,
    scores: Vec<f64>,
    embeddings: Vec<Vec<f64>>,
    heatmap: Option<Heatmap>,
    model: TrainedModel,
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    data: &FoldData,
    fold: usize,
    task: Task,
    encoder: EncoderKind,
    loss: LossKind,
    train_cfg: &TrainConfig,
    run_seed: u64,
) -> Result<FoldRun> {
    let model = train(&data.train, encoder, loss, task, train_cfg, run_seed)?;
    let scores: Vec<f64> = data.test.iter().map(|s| model.predict(s)).collect();
    let embeddings: Vec<Vec<f64>> = data
        .test
        .iter()
        .map(|s| model.representation(s).data().to_vec())
        .collect();

    let mut note: Option<String> = None;
    let mut record = |e: Error| {
        let msg = e.to_string();
        note = Some(match note.take() {
            Some(prev) => format!("{prev}; {msg}"),
            None => msg,
        });
    };
    let auroc_v = match auroc(&scores, &data.test_labels) {
        Ok(v) => Some(v),
        Err(e) => {
            record(e);
            None
        }
    };
    let auprc_v = match auprc(&scores, &data.test_labels) {
        Ok(v) => Some(v),
        Err(e) => {
            record(e);
            None
        }
    };
    let silhouette_v = match silhouette(&embeddings, &data.test_labels) {
        Ok(v) => Some(v),
        Err(e) => {
            record(e);
            None
        }
    };

    let heatmap = if encoder == EncoderKind::Retain {
        Some(holdout_heatmap(&model, &data.test)?)
    } else {
        None
    };
    let top_features = heatmap
        .as_ref()
        .map(|h| h.ranking.iter().copied().take(10).collect())
        .unwrap_or_default();

    Ok(FoldRun {
        metrics: FoldMetrics {
            fold,
            auroc: auroc_v,
            auprc: auprc_v,
            silhouette: silhouette_v,
            note,
            top_features,
        },
        scores,
        embeddings,
        heatmap,
        model,
    })
}

// ── Artifact writers ─────────────────────────────────────────────────

/// Held-out embeddings as CSV: `patient_id,label,c0..c{l-1}`.
pub fn export_embeddings(
    path: impl AsRef<Path>,
    ids: &[String],
    labels: &[bool],
    embeddings: &[Vec<f64>],
) -> Result<()> {
    let path = path.as_ref();
    let latent = embeddings.first().map(|e| e.len()).unwrap_or(0);
    let mut out = String::from("patient_id,label");
    for c in 0..latent {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for ((id, &label), emb) in ids.iter().zip(labels).zip(embeddings) {
        out.push_str(id);
        out.push_str(if label { ",1" } else { ",0" });
        for v in emb {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_curves(dir: &Path, scores: &[f64], labels: &[bool]) -> Result<()> {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let roc = roc_points(scores, labels);
    let mut out = String::from("threshold,fpr,tpr\n");
    out.push_str(&format!("inf,{},{}\n", roc[0].0, roc[0].1));
    for (t, p) in thresholds.iter().zip(&roc[1..]) {
        out.push_str(&format!("{t},{},{}\n", p.0, p.1));
    }
    let path = dir.join("roc.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

    let pr = pr_points(scores, labels);
    let mut out = String::from("threshold,recall,precision\n");
    out.push_str(&format!("inf,{},{}\n", pr[0].0, pr[0].1));
    for (t, p) in thresholds.iter().zip(&pr[1..]) {
        out.push_str(&format!("{t},{},{}\n", p.0, p.1));
    }
    let path = dir.join("pr.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

fn write_loss_trace(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss\n");
    for (epoch, loss) in trace {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ── The driver ───────────────────────────────────────────────────────

fn cell_name(task: Task, encoder: EncoderKind, loss: LossKind, window: Window, regime: Regime) -> String {
    format!("{task}_{encoder}_{loss}_{window}_{regime}")
}

/// Run the full grid over (task, regime, window, encoder, loss), with
/// per-fold training and evaluation. When `out` is given, per-fold curve,
/// embedding, heatmap, loss-trace, and checkpoint artifacts are written
/// beneath it. Fully deterministic given the spec (including its seed).
pub fn run_experiment(
    cohort: &Cohort,
    spec: &ExperimentSpec,
    schema: &FeatureSchema,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    if spec.folds < 2 {
        return Err(Error::config(format!(
            "cv.folds must be >= 2, got {}",
            spec.folds
        )));
    }
    if spec.tasks.is_empty()
        || spec.encoders.is_empty()
        || spec.losses.is_empty()
        || spec.windows.is_empty()
        || spec.regimes.is_empty()
    {
        return Err(Error::config("empty experiment grid"));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;

    let mut cells = Vec::new();
    for &task in &spec.tasks {
        for &regime in &spec.regimes {
            let regime_cohort = match regime {
                Regime::Full => cohort.clone(),
                Regime::Restricted => {
                    let rate = *spec.restricted_rates.get(&task).ok_or_else(|| {
                        Error::config(format!("no restricted rate for {task}"))
                    })?;
                    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
                        spec.seed,
                        &[SEED_RESTRICT, task.index() as u64, regime.index() as u64],
                    ));
                    restrict_positives(cohort, task, rate, &mut rng)?
                }
            };
            let labels = regime_cohort.labels(task);
            let mut split_rng = ChaCha12Rng::seed_from_u64(derive_seed(
                spec.seed,
                &[SEED_SPLIT, task.index() as u64, regime.index() as u64],
            ));
            let assignment = kfold_split(&labels, spec.folds, &mut split_rng)?;
            let positive_rate = regime_cohort.positive_rate(task);

            for &window in &spec.windows {
                let window_idx = window.bins() as u64;
                let fold_data: Vec<FoldData> = pool.install(|| {
                    (0..spec.folds)
                        .into_par_iter()
                        .map(|fold| {
                            build_fold_data(
                                &regime_cohort,
                                &assignment,
                                fold,
                                task,
                                window,
                                spec.clip_low,
                                spec.clip_high,
                                derive_seed(
                                    spec.seed,
                                    &[
                                        SEED_ENDPOINT,
                                        task.index() as u64,
                                        regime.index() as u64,
                                        window_idx,
                                        fold as u64,
                                    ],
                                ),
                            )
                            .map_err(|e| Error::contract(format!("fold {fold}: {e}")))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;

                for &encoder in &spec.encoders {
                    for &loss in &spec.losses {
                        let enc_idx = match encoder {
                            EncoderKind::Retain => 0u64,
                            EncoderKind::Rnn => 1,
                        };
                        let loss_idx = match loss {
                            LossKind::Cl => 0u64,
                            LossKind::Cel => 1,
                        };
                        let runs: Vec<FoldRun> = pool.install(|| {
                            (0..spec.folds)
                                .into_par_iter()
                                .map(|fold| {
                                    run_fold(
                                        &fold_data[fold],
                                        fold,
                                        task,
                                        encoder,
                                        loss,
                                        &spec.train,
                                        derive_seed(
                                            spec.seed,
                                            &[
                                                SEED_TRAIN,
                                                task.index() as u64,
                                                regime.index() as u64,
                                                window_idx,
                                                enc_idx,
                                                loss_idx,
                                                fold as u64,
                                            ],
                                        ),
                                    )
                                    .map_err(|e| {
                                        Error::contract(format!("fold {fold}: {e}"))
                                    })
                                })
                                .collect::<Result<Vec<_>>>()
                        })?;

                        let name = cell_name(task, encoder, loss, window, regime);
                        if let Some(out_dir) = out {
                            for (fold, run) in runs.iter().enumerate() {
                                let fold_dir =
                                    out_dir.join("cells").join(&name).join(format!("fold{fold}"));
                                std::fs::create_dir_all(&fold_dir)
                                    .map_err(|e| Error::io(&fold_dir, e))?;
                                let data = &fold_data[fold];
                                write_curves(&fold_dir, &run.scores, &data.test_labels)?;
                                export_embeddings(
                                    fold_dir.join("embeddings.csv"),
                                    &data.test_ids,
                                    &data.test_labels,
                                    &run.embeddings,
                                )?;
                                write_loss_trace(
                                    &fold_dir.join("loss_trace.csv"),
                                    &run.model.trace,
                                )?;
                                if let Some(heatmap) = &run.heatmap {
                                    write_heatmap_csv(
                                        fold_dir.join("heatmap.csv"),
                                        heatmap,
                                        window,
                                    )?;
                                    write_ranking_csv(
                                        fold_dir.join("ranking.csv"),
                                        heatmap,
                                        schema,
                                    )?;
                                }
                                if spec.checkpoints.wants(fold) {
                                    let restricted_rate = match regime {
                                        Regime::Full => None,
                                        Regime::Restricted => {
                                            spec.restricted_rates.get(&task).copied()
                                        }
                                    };
                                    let ckpt = Checkpoint::from_trained(
                                        &run.model,
                                        window,
                                        regime,
                                        restricted_rate,
                                        fold,
                                        spec.seed,
                                        data.snapshot.clone(),
                                        data.test_ids.clone(),
                                    );
                                    ckpt.save(fold_dir.join("checkpoint.json"))?;
                                }
                            }
                        }

                        let collect = |f: fn(&FoldMetrics) -> Option<f64>| -> Vec<f64> {
                            runs.iter().filter_map(|r| f(&r.metrics)).collect()
                        };
                        let (auroc_mean, auroc_std) = mean_std(&collect(|m| m.auroc));
                        let (auprc_mean, auprc_std) = mean_std(&collect(|m| m.auprc));
                        let (silhouette_mean, _) = mean_std(&collect(|m| m.silhouette));
                        cells.push(ReportCell {
                            task,
                            encoder,
                            loss,
                            window,
                            regime,
                            positive_rate,
                            auroc_mean,
                            auroc_std,
                            auprc_mean,
                            auprc_std,
                            silhouette_mean,
                            folds: runs.into_iter().map(|r| r.metrics).collect(),
                        });
                    }
                }
            }
        }
    }

    let report = MetricsReport {
        seed: spec.seed,
        cells,
    };
    if let Some(out_dir) = out {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        report.save(out_dir.join("report.json"))?;
    }
    Ok(report)
}

/// Output directory layout used by [`run_experiment`].
pub fn fold_dir(out: &Path, task: Task, encoder: EncoderKind, loss: LossKind, window: Window, regime: Regime, fold: usize) -> PathBuf {
    out.join("cells")
        .join(cell_name(task, encoder, loss, window, regime))
        .join(format!("fold{fold}"))
}

/// Rebuild the held-out instances a checkpoint was evaluated on, from the
/// same cohort: the stored statistics are applied as-is and the negative
/// endpoints replay the original seeded draws.
pub fn holdout_inputs_from_checkpoint(
    cohort: &Cohort,
    ckpt: &Checkpoint,
) -> Result<(Vec<BinnedSequence>, Vec<String>, Vec<bool>)> {
    let task = ckpt.task;
    let regime_cohort = match ckpt.regime {
        Regime::Full => cohort.clone(),
        Regime::Restricted => {
            let rate = ckpt.restricted_rate.ok_or_else(|| {
                Error::contract("restricted checkpoint lacks its down-sampling rate")
            })?;
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
                ckpt.seed,
                &[SEED_RESTRICT, task.index() as u64, Regime::Restricted.index() as u64],
            ));
            restrict_positives(cohort, task, rate, &mut rng)?
        }
    };

    let mut ep_rng = ChaCha12Rng::seed_from_u64(derive_seed(
        ckpt.seed,
        &[
            SEED_ENDPOINT,
            task.index() as u64,
            ckpt.regime.index() as u64,
            ckpt.window.bins() as u64,
            ckpt.fold as u64,
        ],
    ));
    let prepared = apply_clip_bounds(&regime_cohort, &ckpt.preprocess.clip);
    let prepared = normalize(&prepared, &ckpt.preprocess.norm);

    let wanted: std::collections::BTreeSet<&str> =
        ckpt.holdout_ids.iter().map(|s| s.as_str()).collect();
    let mut sequences = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (raw, record) in regime_cohort.patients.iter().zip(&prepared.patients) {
        let label = raw.is_positive(task);
        let endpoint_time = if label {
            raw.outcome(task).event_time.expect("positive has event")
        } else {
            sample_negative_endpoint(&ckpt.preprocess.endpoint, raw, ckpt.window, &mut ep_rng).time
        };
        if !wanted.contains(raw.id.as_str()) {
            continue;
        }
        let statics = encode_statics(raw, &ckpt.preprocess.clip, &ckpt.preprocess.norm);
        sequences.push(bin_timeline(
            record,
            ckpt.window,
            endpoint_time,
            label,
            statics,
        ));
        ids.push(raw.id.clone());
        labels.push(label);
    }
    if sequences.len() != ckpt.holdout_ids.len() {
        return Err(Error::contract(format!(
            "cohort matches {} of {} held-out patients; wrong cohort file?",
            sequences.len(),
            ckpt.holdout_ids.len()
        )));
    }
    Ok((sequences, ids, labels))
}
