//! Evaluation metrics for binary classifiers plus a paired bootstrap test.
//!
//! Conventions: `accuracy`, `macro_f1`, and `auc` are reported as
//! percentages in `[0, 100]` (matching how results are quoted throughout
//! the project), while `pearson` is the usual coefficient in `[-1, 1]`.
//! Labels and predictions are `u8` values restricted to `{0, 1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MwError, Result};

/// Which metric a paired bootstrap comparison resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMetric {
    Accuracy,
    MacroF1,
}

/// Sidedness of the bootstrap p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapSided {
    /// Improvement test of "A beats B": `p = P(metric(B) >= metric(A))`
    /// over resamples, small when the first system significantly beats
    /// the second.
    One,
    /// Difference test: twice the smaller tail (ties counted in both),
    /// capped at 1.
    Two,
}

/// Aggregate scores for one evaluation run.
///
/// `auc` is present only when real-valued scores were available and both
/// classes occur in the labels; hard-label systems leave it absent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
}

fn check_nonempty(name: &str, len: usize) -> Result<()> {
    if len == 0 {
        return Err(MwError::Data(format!("{name} requires at least one item")));
    }
    Ok(())
}

fn check_same_len(name: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(MwError::Data(format!(
            "{name}: length mismatch ({a} vs {b})"
        )));
    }
    Ok(())
}

fn check_binary(name: &str, vals: &[u8]) -> Result<()> {
    if let Some(v) = vals.iter().find(|&&v| v > 1) {
        return Err(MwError::Data(format!(
            "{name}: values must be 0 or 1, found {v}"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, vals: &[f64]) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(MwError::Data(format!("{name}: non-finite value")));
    }
    Ok(())
}

/// Fraction of agreeing positions, as a percentage.
pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_nonempty("accuracy", preds.len())?;
    check_same_len("accuracy", preds.len(), labels.len())?;
    check_binary("accuracy predictions", preds)?;
    check_binary("accuracy labels", labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Per-class F1 as a fraction, with every zero-denominator case (empty
/// precision, empty recall, or both zero) defined as exactly `0`.
fn class_f1(preds: &[u8], labels: &[u8], class: u8) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean of the two per-class F1 scores, as a percentage.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_nonempty("macro_f1", preds.len())?;
    check_same_len("macro_f1", preds.len(), labels.len())?;
    check_binary("macro_f1 predictions", preds)?;
    check_binary("macro_f1 labels", labels)?;
    Ok(100.0 * (class_f1(preds, labels, 0) + class_f1(preds, labels, 1)) / 2.0)
}

/// Area under the ROC curve via the Mann–Whitney statistic with midrank
/// tie handling (tied scores contribute one half), as a percentage.
/// Requires both classes.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_nonempty("auc", scores.len())?;
    check_same_len("auc", scores.len(), labels.len())?;
    check_binary("auc labels", labels)?;
    check_finite("auc scores", scores)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MwError::Data(
            "auc requires both classes in the labels".to_string(),
        ));
    }

    // Rank all scores ascending, averaging ranks across tie groups.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the midrank of 1-based ranks.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(l, _)| **l == 1)
        .map(|(_, r)| *r)
        .sum();
    let p = pos as f64;
    let n = neg as f64;
    Ok(100.0 * (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Pearson correlation via a single-pass co-moment accumulation (Welford
/// style), clamped into `[-1, 1]`. Errors when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_same_len("pearson", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(MwError::Data(
            "pearson requires at least two points".to_string(),
        ));
    }
    check_finite("pearson x", x)?;
    check_finite("pearson y", y)?;

    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    let mut m2x = 0.0;
    let mut m2y = 0.0;
    let mut cxy = 0.0;
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = xi - mean_x;
        mean_x += dx / n;
        let dy = yi - mean_y;
        mean_y += dy / n;
        cxy += dx * (yi - mean_y);
        m2x += dx * (xi - mean_x);
        m2y += dy * (yi - mean_y);
    }
    if m2x == 0.0 || m2y == 0.0 {
        return Err(MwError::Data(
            "pearson is undefined for a constant input".to_string(),
        ));
    }
    Ok((cxy / (m2x.sqrt() * m2y.sqrt())).clamp(-1.0, 1.0))
}

/// Paired bootstrap comparison of two systems evaluated on the same items.
///
/// Each of `b` rounds draws `n` items with replacement (seeded) and scores
/// both prediction vectors on the resample. One-sided, the p-value tests
/// whether the first system (`preds_a`) improves on the second (`preds_b`):
/// the fraction of rounds where the second at least ties the first, so a
/// small value means the improvement is significant. Two-sided, both tails
/// are doubled with ties counted in each, so identical systems report
/// exactly 1.0 rather than a spurious 0.
pub fn paired_bootstrap(
    preds_a: &[u8],
    preds_b: &[u8],
    labels: &[u8],
    metric: BootstrapMetric,
    b: usize,
    seed: u64,
    sided: BootstrapSided,
) -> Result<f64> {
    check_nonempty("paired_bootstrap", labels.len())?;
    check_same_len("paired_bootstrap a", preds_a.len(), labels.len())?;
    check_same_len("paired_bootstrap b", preds_b.len(), labels.len())?;
    check_binary("paired_bootstrap predictions a", preds_a)?;
    check_binary("paired_bootstrap predictions b", preds_b)?;
    check_binary("paired_bootstrap labels", labels)?;
    if b == 0 {
        return Err(MwError::Config(
            "paired_bootstrap needs at least one resample".to_string(),
        ));
    }

    let n = labels.len();
    let eval = |preds: &[u8], idx: &[usize]| -> f64 {
        let p: Vec<u8> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        match metric {
            // Inputs were validated above, so these cannot fail.
            BootstrapMetric::Accuracy => accuracy(&p, &l).expect("validated"),
            BootstrapMetric::MacroF1 => macro_f1(&p, &l).expect("validated"),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b_ge_a = 0usize; // second system at least ties the first
    let mut b_le_a = 0usize; // second system at most ties the first
    let mut idx = vec![0usize; n];
    for _ in 0..b {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let (sa, sb) = (eval(preds_a, &idx), eval(preds_b, &idx));
        if sb >= sa {
            b_ge_a += 1;
        }
        if sb <= sa {
            b_le_a += 1;
        }
    }
    Ok(match sided {
        BootstrapSided::One => b_ge_a as f64 / b as f64,
        BootstrapSided::Two => {
            (2.0 * b_ge_a.min(b_le_a) as f64 / b as f64).min(1.0)
        }
    })
}

/// Search range for decision-threshold tuning.
pub const THRESHOLD_MIN: f64 = 0.010;
pub const THRESHOLD_MAX: f64 = 0.999;

/// Finds the decision threshold maximising macro-F1 on validation scores.
///
/// Candidates are the search-range endpoints plus the midpoints between
/// consecutive distinct sorted scores (clamped into the range), which
/// together cover every confusion matrix reachable inside the range. A
/// score equal to the threshold counts as positive. Ties in macro-F1 go to
/// the smallest threshold. Returns `(threshold, macro_f1_percent)`.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    check_nonempty("tune_threshold", scores.len())?;
    check_same_len("tune_threshold", scores.len(), labels.len())?;
    check_binary("tune_threshold labels", labels)?;
    check_finite("tune_threshold scores", scores)?;

    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut candidates = vec![THRESHOLD_MIN, THRESHOLD_MAX];
    for pair in sorted.windows(2) {
        candidates.push(((pair[0] + pair[1]) / 2.0).clamp(THRESHOLD_MIN, THRESHOLD_MAX));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for tau in candidates {
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= tau)).collect();
        let f1 = macro_f1(&preds, labels)?;
        if f1 > best.1 {
            best = (tau, f1);
        }
    }
    Ok(best)
}

/// Assembles the standard report; AUC is included only when scores are
/// given and both classes occur in the labels.
pub fn report(preds: &[u8], scores: Option<&[f64]>, labels: &[u8]) -> Result<MetricsReport> {
    let acc = accuracy(preds, labels)?;
    let f1 = macro_f1(preds, labels)?;
    let both_classes = labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1);
    let auc_val = match scores {
        Some(s) if both_classes => Some(auc(s, labels)?),
        _ => None,
    };
    Ok(MetricsReport {
        n: labels.len(),
        accuracy: acc,
        macro_f1: f1,
        auc: auc_val,
    })
}
