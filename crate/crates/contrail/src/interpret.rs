//! Feature-importance unrolling for the attention encoder, under both
//! objectives, plus cohort-level heatmap aggregation.
//!
//! For a class-direction vector `d` (the positive event embedding under
//! the contrastive objective, the positive head row under cross-entropy),
//! the contribution of feature `k` at step `i` is
//!
//! `w[i,k] = alpha_i * sum_r d[r] * beta_i[r] * W_embed[r,k] * x[i,k]`
//!
//! which decomposes the inner product `d . C_p_seq` of the pre-fusion
//! sequential representation exactly: summing `w` over all cells recovers
//! it to rounding error. Static features enter after this contraction and
//! therefore carry no importance score.

use crate::cohort::{FeatureSchema, Task, Window, BIN_HOURS, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::loss::CelHead;
use crate::model::{EventParams, RetainParams};
use crate::numerics::Tensor;
use std::path::Path;

/// Per-cell contribution scores, shape `[63, n]` (feature x time bin).
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMatrix {
    pub values: Tensor,
}

impl ImportanceMatrix {
    pub fn bins(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, feature: usize, bin: usize) -> f64 {
        self.values.data()[feature * self.bins() + bin]
    }

    /// Sum of every cell; equals the class-direction inner product with
    /// the pre-fusion sequential representation.
    pub fn total(&self) -> f64 {
        self.values.data().iter().sum()
    }
}

fn contract_direction(
    direction: &Tensor,
    alphas: &[f64],
    betas: &[Tensor],
    embed: &Tensor,
    x: &Tensor,
) -> Result<ImportanceMatrix> {
    let n = x.rows();
    if alphas.len() != n || betas.len() != n {
        return Err(Error::contract(format!(
            "attention for {} steps does not match a {n}-step input",
            alphas.len()
        )));
    }
    let latent = embed.rows();
    let mut values = vec![0.0; FEATURE_COUNT * n];
    for (i, beta) in betas.iter().enumerate() {
        // row vector g[k] = sum_r d[r] beta[r] W[r,k]
        for k in 0..FEATURE_COUNT {
            let mut g = 0.0;
            for r in 0..latent {
                g += direction.data()[r] * beta.data()[r] * embed.data()[r * FEATURE_COUNT + k];
            }
            values[k * n + i] = alphas[i] * g * x.data()[i * FEATURE_COUNT + k];
        }
    }
    Ok(ImportanceMatrix {
        values: Tensor::new(vec![FEATURE_COUNT, n], values).expect("importance shape"),
    })
}

/// Importance under the contrastive objective: contract with the positive
/// event node's translated embedding.
pub fn importance_cl(
    alphas: &[f64],
    betas: &[Tensor],
    retain: &RetainParams,
    event: &EventParams,
    task: Task,
    x: &Tensor,
) -> Result<ImportanceMatrix> {
    let (_, translated) = event.embed_value(task, true);
    contract_direction(&translated, alphas, betas, &retain.embed, x)
}

/// Importance under the cross-entropy objective: contract with the
/// positive-class row of the head (bias excluded).
pub fn importance_cel(
    alphas: &[f64],
    betas: &[Tensor],
    retain: &RetainParams,
    head: &CelHead,
    x: &Tensor,
) -> Result<ImportanceMatrix> {
    contract_direction(&head.positive_row(), alphas, betas, &retain.embed, x)
}

/// Cohort-level aggregate: elementwise mean of |w| across patients,
/// max-normalized to [0,1]; per-feature score is the max over bins, and
/// the ranking is stable with ties broken by feature index.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub matrix: Tensor,
    pub feature_scores: Vec<f64>,
    /// Feature ids, best first.
    pub ranking: Vec<usize>,
}

pub fn aggregate_heatmap(matrices: &[ImportanceMatrix]) -> Result<Heatmap> {
    let Some(first) = matrices.first() else {
        return Err(Error::contract("cannot aggregate an empty importance set"));
    };
    let n = first.bins();
    let mut mean = vec![0.0; FEATURE_COUNT * n];
    for m in matrices {
        if m.bins() != n {
            return Err(Error::contract("importance matrices disagree on bin count"));
        }
        for (acc, v) in mean.iter_mut().zip(m.values.data()) {
            *acc += v.abs();
        }
    }
    for v in mean.iter_mut() {
        *v /= matrices.len() as f64;
    }
    let max = mean.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in mean.iter_mut() {
            *v /= max;
        }
    }
    let feature_scores: Vec<f64> = (0..FEATURE_COUNT)
        .map(|k| mean[k * n..(k + 1) * n].iter().cloned().fold(0.0, f64::max))
        .collect();
    let mut ranking: Vec<usize> = (0..FEATURE_COUNT).collect();
    ranking.sort_by(|&a, &b| feature_scores[b].total_cmp(&feature_scores[a]).then(a.cmp(&b)));
    Ok(Heatmap {
        matrix: Tensor::new(vec![FEATURE_COUNT, n], mean).expect("heatmap shape"),
        feature_scores,
        ranking,
    })
}

/// Time-bin labels for a window, oldest first, e.g. `t-24h..t-18h`.
pub fn bin_labels(window: Window) -> Vec<String> {
    (0..window.bins())
        .map(|i| {
            let from = window.hours() - i as f64 * BIN_HOURS;
            let to = from - BIN_HOURS;
            format!("t-{from:.0}h..t-{to:.0}h")
        })
        .collect()
}

/// 63 rows x n columns of normalized scores, with a header row of bin
/// labels.
pub fn write_heatmap_csv(path: impl AsRef<Path>, heatmap: &Heatmap, window: Window) -> Result<()> {
    let path = path.as_ref();
    let n = heatmap.matrix.cols();
    let mut out = String::new();
    out.push_str(&bin_labels(window).join(","));
    out.push('\n');
    for k in 0..FEATURE_COUNT {
        let row: Vec<String> = (0..n)
            .map(|i| format!("{}", heatmap.matrix.data()[k * n + i]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `(rank, feature_id, name, score)` rows, best feature first.
pub fn write_ranking_csv(
    path: impl AsRef<Path>,
    heatmap: &Heatmap,
    schema: &FeatureSchema,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("rank,feature_id,name,score\n");
    for (rank, &feature) in heatmap.ranking.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            rank + 1,
            feature,
            schema.name(feature),
            heatmap.feature_scores[feature]
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{BinnedSequence, STATIC_DIM};
    use crate::model::EncoderKind;
    use crate::numerics::dot_slices;
    use crate::train::{encode_value, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_setup(seed: u64, latent: usize, n: usize) -> (ModelParams, BinnedSequence) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let params = ModelParams::init(latent, FEATURE_COUNT, EncoderKind::Retain, seed);
        let seq = BinnedSequence {
            patient_id: "p".into(),
            matrix: Tensor::uniform(vec![n, FEATURE_COUNT], -1.5, 1.5, &mut rng),
            statics: Tensor::uniform(vec![STATIC_DIM], -1.0, 1.0, &mut rng),
            label: true,
        };
        (params, seq)
    }

    fn retain_of(params: &ModelParams) -> &RetainParams {
        match &params.encoder {
            crate::train::EncoderParams::Retain(p) => p,
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_input_gives_zero_importance() {
        let (params, mut seq) = random_setup(1, 4, 4);
        seq.matrix = Tensor::zeros(vec![4, FEATURE_COUNT]);
        let enc = encode_value(&params, &seq);
        let w = importance_cl(
            enc.alphas.as_ref().unwrap(),
            enc.betas.as_ref().unwrap(),
            retain_of(&params),
            &params.event,
            Task::Mortality,
            &seq.matrix,
        )
        .unwrap();
        assert!(w.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_instance_matches_four_factor_product() {
        // l = 1, n = 1: w = alpha * beta * c_e * W_embed[0,k] * x_k.
        let (mut params, _) = random_setup(2, 1, 1);
        let retain = match &mut params.encoder {
            crate::train::EncoderParams::Retain(p) => p,
            _ => unreachable!(),
        };
        let mut row = vec![0.0; FEATURE_COUNT];
        row[3] = 0.7;
        retain.embed = Tensor::matrix(1, FEATURE_COUNT, row).unwrap();
        let mut x = vec![0.0; FEATURE_COUNT];
        x[3] = 1.4;
        let x = Tensor::new(vec![1, FEATURE_COUNT], x).unwrap();

        let alphas = vec![1.0]; // softmax of one step
        let betas = vec![Tensor::vector(vec![0.6])];
        let (_, c_e) = params.event.embed_value(Task::Mortality, true);
        let w = importance_cl(
            &alphas,
            &betas,
            retain_of(&params),
            &params.event,
            Task::Mortality,
            &x,
        )
        .unwrap();
        let expected = 1.0 * 0.6 * c_e.data()[0] * 0.7 * 1.4;
        assert!((w.get(3, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn decomposition_identities_hold_on_random_instances() {
        for seed in 0..50u64 {
            let (params, seq) = random_setup(seed + 10, 5, 4);
            let enc = encode_value(&params, &seq);
            let alphas = enc.alphas.as_ref().unwrap();
            let betas = enc.betas.as_ref().unwrap();

            let w = importance_cl(
                alphas,
                betas,
                retain_of(&params),
                &params.event,
                Task::Mortality,
                &seq.matrix,
            )
            .unwrap();
            let (_, c_e) = params.event.embed_value(Task::Mortality, true);
            let want = dot_slices(c_e.data(), enc.pre_fusion.data());
            assert!(
                (w.total() - want).abs() < 1e-10,
                "cl seed {seed}: {} vs {want}",
                w.total()
            );

            let w = importance_cel(
                alphas,
                betas,
                retain_of(&params),
                &params.head,
                &seq.matrix,
            )
            .unwrap();
            // bias-free positive logit of the pre-fusion representation
            let want = dot_slices(params.head.positive_row().data(), enc.pre_fusion.data());
            assert!(
                (w.total() - want).abs() < 1e-10,
                "cel seed {seed}: {} vs {want}",
                w.total()
            );
        }
    }

    #[test]
    fn zero_head_gives_zero_importance() {
        let (mut params, seq) = random_setup(3, 4, 4);
        params.head = CelHead {
            w: Tensor::zeros(vec![2, 4]),
            b: Tensor::vector(vec![0.3, -0.1]),
        };
        let enc = encode_value(&params, &seq);
        let w = importance_cel(
            enc.alphas.as_ref().unwrap(),
            enc.betas.as_ref().unwrap(),
            retain_of(&params),
            &params.head,
            &seq.matrix,
        )
        .unwrap();
        assert!(w.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn importance_is_linear_in_single_cells() {
        let (params, seq) = random_setup(4, 4, 4);
        let enc = encode_value(&params, &seq);
        let alphas = enc.alphas.as_ref().unwrap();
        let betas = enc.betas.as_ref().unwrap();
        let base = importance_cl(
            alphas,
            betas,
            retain_of(&params),
            &params.event,
            Task::Mortality,
            &seq.matrix,
        )
        .unwrap();

        // Scale one input cell by t while keeping attention fixed.
        let (i, k, t) = (2usize, 17usize, 3.5f64);
        let mut scaled = seq.matrix.data().to_vec();
        scaled[i * FEATURE_COUNT + k] *= t;
        let scaled = Tensor::new(vec![4, FEATURE_COUNT], scaled).unwrap();
        let w = importance_cl(
            alphas,
            betas,
            retain_of(&params),
            &params.event,
            Task::Mortality,
            &scaled,
        )
        .unwrap();
        for f in 0..FEATURE_COUNT {
            for bin in 0..4 {
                let expect = if f == k && bin == i {
                    base.get(f, bin) * t
                } else {
                    base.get(f, bin)
                };
                assert!((w.get(f, bin) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matched_directions_make_both_formulas_agree() {
        // With R_o = 0 the contrastive direction is the projected event
        // vector; planting it as the positive head row must reproduce the
        // same importance cell-for-cell.
        let (mut params, seq) = random_setup(5, 4, 4);
        for r in params.event.relations.iter_mut() {
            *r = Tensor::zeros(vec![4]);
        }
        let (projected, translated) = params.event.embed_value(Task::Mortality, true);
        assert_eq!(projected.data(), translated.data());
        let mut head_w = projected.data().to_vec();
        head_w.extend(vec![0.0; 4]);
        params.head = CelHead {
            w: Tensor::matrix(2, 4, head_w).unwrap(),
            b: Tensor::zeros(vec![2]),
        };

        let enc = encode_value(&params, &seq);
        let alphas = enc.alphas.as_ref().unwrap();
        let betas = enc.betas.as_ref().unwrap();
        let a = importance_cl(
            alphas,
            betas,
            retain_of(&params),
            &params.event,
            Task::Mortality,
            &seq.matrix,
        )
        .unwrap();
        let b = importance_cel(
            alphas,
            betas,
            retain_of(&params),
            &params.head,
            &seq.matrix,
        )
        .unwrap();
        assert_eq!(a.values.data(), b.values.data());
    }

    #[test]
    fn step_count_mismatch_is_rejected() {
        let (params, seq) = random_setup(6, 4, 4);
        let enc = encode_value(&params, &seq);
        let err = importance_cl(
            &enc.alphas.as_ref().unwrap()[..2],
            enc.betas.as_ref().unwrap(),
            retain_of(&params),
            &params.event,
            Task::Mortality,
            &seq.matrix,
        )
        .unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");
    }

    #[test]
    fn single_patient_heatmap_is_own_normalized_magnitude() {
        let (params, seq) = random_setup(7, 4, 4);
        let enc = encode_value(&params, &seq);
        let w = importance_cl(
            enc.alphas.as_ref().unwrap(),
            enc.betas.as_ref().unwrap(),
            retain_of(&params),
            &params.event,
            Task::Mortality,
            &seq.matrix,
        )
        .unwrap();
        let heatmap = aggregate_heatmap(&[w.clone()]).unwrap();
        let max = w.values.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (got, want) in heatmap.matrix.data().iter().zip(w.values.data()) {
            assert!((got - want.abs() / max).abs() < 1e-15);
        }
    }

    #[test]
    fn all_zero_matrices_rank_by_index() {
        let zero = ImportanceMatrix {
            values: Tensor::zeros(vec![FEATURE_COUNT, 4]),
        };
        let heatmap = aggregate_heatmap(&[zero.clone(), zero]).unwrap();
        assert!(heatmap.matrix.data().iter().all(|&v| v == 0.0));
        let expected: Vec<usize> = (0..FEATURE_COUNT).collect();
        assert_eq!(heatmap.ranking, expected);
    }

    #[test]
    fn empty_aggregate_is_rejected() {
        assert!(aggregate_heatmap(&[]).is_err());
    }

    #[test]
    fn bin_labels_cover_the_window() {
        let labels = bin_labels(Window::H24);
        assert_eq!(labels.len(), 4);
        assert_eq!(labels[0], "t-24h..t-18h");
        assert_eq!(labels[3], "t-6h..t-0h");
    }
}
