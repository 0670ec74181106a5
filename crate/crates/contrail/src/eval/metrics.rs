//! Ranking metrics with brute-force-verifiable definitions, curve sweeps,
//! and the silhouette coefficient.

use crate::error::{Error, Result};

/// Area under the ROC curve, defined as the Mann-Whitney statistic
/// `P(score+ > score-) + 0.5 * P(tie)`.
///
/// Computed from integer rank sums: with `2U` kept as an exact integer the
/// only rounding is the final division, so the result equals the
/// correctly-rounded rational value on inputs of any size.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "auroc requires both classes".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of doubled average ranks over positives, walked in tie blocks:
    // a block occupying ranks i+1..=i+b has doubled average rank 2i+b+1.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let block = (j - i) as u128;
        let doubled_avg = 2 * i as u128 + block + 1;
        let pos_in_block = order[i..j].iter().filter(|&&idx| labels[idx]).count() as u128;
        doubled_rank_sum += pos_in_block * doubled_avg;
        i = j;
    }
    let p = positives as u128;
    let n = negatives as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * n) as f64)
}

/// Average precision with tie blocks: scores are walked in descending
/// order; every positive inside a tie block contributes the precision at
/// the block's end. Constant scores therefore yield the positive
/// prevalence.
///
/// Accumulated in exact 128-bit rational arithmetic whenever that fits
/// (always, on small instances), with a deterministic f64 fallback.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "auprc requires at least one positive".into(),
        ));
    }

    let blocks = descending_blocks(scores, labels);
    if let Some(exact) = auprc_rational(&blocks, positives) {
        return Ok(exact);
    }

    let mut tp = 0usize;
    let mut rank = 0usize;
    let mut sum = 0.0f64;
    for &(b, p) in &blocks {
        tp += p;
        rank += b;
        sum += p as f64 * (tp as f64 / rank as f64);
    }
    Ok(sum / positives as f64)
}

/// `(block size, positives in block)` in descending score order.
fn descending_blocks(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos = order[i..j].iter().filter(|&&idx| labels[idx]).count();
        blocks.push((j - i, pos));
        i = j;
    }
    blocks
}

/// Exact fraction accumulation; `None` on 128-bit overflow.
fn auprc_rational(blocks: &[(usize, usize)], positives: usize) -> Option<f64> {
    let mut num: i128 = 0;
    let mut den: i128 = 1;
    let mut tp: i128 = 0;
    let mut rank: i128 = 0;
    for &(b, p) in blocks {
        tp += p as i128;
        rank += b as i128;
        // num/den += p * tp / rank
        let term_num = (p as i128).checked_mul(tp)?;
        let lhs = num.checked_mul(rank)?;
        let rhs = term_num.checked_mul(den)?;
        num = lhs.checked_add(rhs)?;
        den = den.checked_mul(rank)?;
        let g = gcd(num.unsigned_abs(), den.unsigned_abs());
        if g > 1 {
            num /= g as i128;
            den /= g as i128;
        }
    }
    den = den.checked_mul(positives as i128)?;
    let g = gcd(num.unsigned_abs(), den.unsigned_abs());
    if g > 1 {
        num /= g as i128;
        den /= g as i128;
    }
    if num.unsigned_abs() > (1 << 53) || den.unsigned_abs() > (1 << 53) {
        return None;
    }
    Some(num as f64 / den as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("empty score set".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("scores must not be NaN"));
    }
    Ok(())
}

/// ROC staircase points `(fpr, tpr)`, one per distinct threshold, from
/// `(0,0)` to `(1,1)`.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let blocks = descending_blocks(scores, labels);
    let positives: usize = blocks.iter().map(|&(_, p)| p).sum();
    let total: usize = blocks.iter().map(|&(b, _)| b).sum();
    let negatives = total - positives;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(b, p) in &blocks {
        tp += p;
        fp += b - p;
        points.push((
            fp as f64 / negatives.max(1) as f64,
            tp as f64 / positives.max(1) as f64,
        ));
    }
    points
}

/// Precision-recall points `(recall, precision)` per distinct threshold,
/// starting from `(0, 1)`.
pub fn pr_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let blocks = descending_blocks(scores, labels);
    let positives: usize = blocks.iter().map(|&(_, p)| p).sum();
    let mut points = vec![(0.0, 1.0)];
    let (mut tp, mut rank) = (0usize, 0usize);
    for &(b, p) in &blocks {
        tp += p;
        rank += b;
        points.push((
            tp as f64 / positives.max(1) as f64,
            tp as f64 / rank as f64,
        ));
    }
    points
}

/// Mean silhouette coefficient over a binary labeling, with Euclidean
/// distance and exact O(N^2) pairwise computation.
pub fn silhouette(embeddings: &[Vec<f64>], labels: &[bool]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::UndefinedMetric(format!(
            "silhouette needs >= 2 members per class, got {pos} positive / {neg} negative"
        )));
    }

    let n = embeddings.len();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    let mut total = 0.0;
    for i in 0..n {
        let (mut same_sum, mut other_sum) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist(&embeddings[i], &embeddings[j]);
            if labels[i] == labels[j] {
                same_sum += d;
            } else {
                other_sum += d;
            }
        }
        let own = if labels[i] { pos } else { neg };
        let other = n - own;
        let a = same_sum / (own - 1) as f64;
        let b = other_sum / other as f64;
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    Ok(total / n as f64)
}
