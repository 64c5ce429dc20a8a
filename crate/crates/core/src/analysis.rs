//! Representation diagnostics: affinity interpretability, sign-inversion
//! ablation, batch-size sensitivity, PCA, and linear probes.
//!
//! These tools ask *why* a trained model behaves as it does. The affinity
//! study correlates the learned pairwise affinities with cosine similarity
//! of the fused representations; the inversion ablation flips the sign of
//! the affinity matrix during message passing to show the graph is load-
//! bearing; the sweep measures how inference batch size perturbs metrics
//! (affinities couple records within a batch, so batch composition matters
//! exactly when the graph block is on); PCA and the linear probe quantify
//! how much label structure the representations carry.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::dataio::{make_batches, Dataset};
use crate::error::{MwError, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{
    evaluate, materialize, run_forward, ForwardOptions, ModelConfig, ModelParams,
};

/// Label agreement of a record pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    BothPositive,
    BothNegative,
    Mixed,
}

impl PairClass {
    pub fn of(a: u8, b: u8) -> Self {
        match (a, b) {
            (1, 1) => PairClass::BothPositive,
            (0, 0) => PairClass::BothNegative,
            _ => PairClass::Mixed,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PairClass::BothPositive => "both_positive",
            PairClass::BothNegative => "both_negative",
            PairClass::Mixed => "mixed",
        }
    }
}

/// One within-batch record pair with its similarity and learned affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityPair {
    pub id_i: String,
    pub id_j: String,
    pub label_i: u8,
    pub label_j: u8,
    /// Cosine similarity of the two fused (pre-graph) rows.
    pub cos_sim: f64,
    /// Learned affinity entry for the pair.
    pub affinity: f64,
}

impl AffinityPair {
    pub fn class(&self) -> PairClass {
        PairClass::of(self.label_i, self.label_j)
    }
}

/// Outcome of the affinity interpretability study.
#[derive(Debug, Clone)]
pub struct AffinityStudy {
    /// All usable upper-triangle pairs across every inference batch.
    pub pairs: Vec<AffinityPair>,
    /// Pearson correlation between cosine similarity and affinity.
    pub pearson_r: f64,
    /// Pairs dropped because a fused row had zero norm (cosine undefined).
    pub skipped: usize,
    /// Mean affinity over same-label pairs, if any exist.
    pub mean_affinity_same: Option<f64>,
    /// Mean affinity over mixed-label pairs, if any exist.
    pub mean_affinity_mixed: Option<f64>,
}

/// Correlates learned affinities with cosine similarity of the fused rows,
/// pair by pair within each inference batch.
pub fn affinity_study(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &Dataset,
    batch_size: usize,
) -> Result<AffinityStudy> {
    if !cfg.imgr {
        return Err(MwError::Config(
            "the affinity study needs a model with the graph block enabled".to_string(),
        ));
    }
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for batch in &make_batches(ds, batch_size, None)? {
        let (g, pass) = run_forward(batch, params, cfg, ForwardOptions::default())?;
        let out = materialize(&g, &pass);
        let aff = out.affinity.as_ref().expect("graph block produces affinity");
        let m = batch.len();
        let norms: Vec<f64> = (0..m)
            .map(|i| out.fused.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        for i in 0..m {
            for j in (i + 1)..m {
                if norms[i] == 0.0 || norms[j] == 0.0 {
                    skipped += 1;
                    continue;
                }
                let dot: f64 = out
                    .fused
                    .row(i)
                    .iter()
                    .zip(out.fused.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let (ri, rj) = (batch.indices[i], batch.indices[j]);
                pairs.push(AffinityPair {
                    id_i: ds.records[ri].id.clone(),
                    id_j: ds.records[rj].id.clone(),
                    label_i: ds.records[ri].label,
                    label_j: ds.records[rj].label,
                    cos_sim: dot / (norms[i] * norms[j]),
                    affinity: aff.get(i, j),
                });
            }
        }
    }
    if pairs.len() < 2 {
        return Err(MwError::Data(format!(
            "affinity study needs at least 2 usable pairs, got {} ({} skipped)",
            pairs.len(),
            skipped
        )));
    }
    let cos: Vec<f64> = pairs.iter().map(|p| p.cos_sim).collect();
    let aff: Vec<f64> = pairs.iter().map(|p| p.affinity).collect();
    let pearson_r = metrics::pearson(&cos, &aff)?;

    let mean_of = |keep: &dyn Fn(&AffinityPair) -> bool| -> Option<f64> {
        let vals: Vec<f64> = pairs.iter().filter(|p| keep(p)).map(|p| p.affinity).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(AffinityStudy {
        pearson_r,
        skipped,
        mean_affinity_same: mean_of(&|p| p.class() != PairClass::Mixed),
        mean_affinity_mixed: mean_of(&|p| p.class() == PairClass::Mixed),
        pairs,
    })
}

/// Scores of the same model with and without the affinity sign flipped
/// during message passing.
#[derive(Debug, Clone)]
pub struct InversionAblation {
    pub normal: MetricsReport,
    pub inverted: MetricsReport,
    /// `normal.macro_f1 - inverted.macro_f1`, in points.
    pub f1_drop: f64,
}

/// Evaluates a graph-block model normally and with `-R` message passing.
pub fn sign_inversion_ablation(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &Dataset,
    tau: f64,
    batch_size: usize,
) -> Result<InversionAblation> {
    if !cfg.imgr {
        return Err(MwError::Config(
            "the sign-inversion ablation needs a model with the graph block enabled".to_string(),
        ));
    }
    let (normal, _) = evaluate(params, cfg, ds, tau, batch_size, ForwardOptions::default())?;
    let (inverted, _) = evaluate(
        params,
        cfg,
        ds,
        tau,
        batch_size,
        ForwardOptions {
            invert_affinity: true,
        },
    )?;
    Ok(InversionAblation {
        f1_drop: normal.macro_f1 - inverted.macro_f1,
        normal,
        inverted,
    })
}

/// Metrics of one sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub batch_size: usize,
    pub report: MetricsReport,
}

/// Batch-size sensitivity of a fixed model on a fixed split.
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// One row per distinct size, ascending. Size 1 is always included.
    pub rows: Vec<SweepRow>,
    /// Max minus min macro-F1 across the rows, in points.
    pub f1_spread: f64,
    /// Max minus min accuracy across the rows, in points.
    pub acc_spread: f64,
}

/// Evaluates the same model at several inference batch sizes. Size 1 is
/// always added: it is the degenerate graph (every affinity matrix is
/// `1 x 1`), the natural reference point for batch-coupling effects.
pub fn batch_size_sweep(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &Dataset,
    tau: f64,
    sizes: &[usize],
) -> Result<SweepResult> {
    let mut all: Vec<usize> = sizes.to_vec();
    all.push(1);
    all.sort_unstable();
    all.dedup();
    if all.iter().any(|&s| s == 0) {
        return Err(MwError::Config("batch size 0 is not valid".to_string()));
    }
    let mut rows = Vec::with_capacity(all.len());
    for size in all {
        let (report, _) = evaluate(params, cfg, ds, tau, size, ForwardOptions::default())?;
        rows.push(SweepRow {
            batch_size: size,
            report,
        });
    }
    let spread = |pick: &dyn Fn(&SweepRow) -> f64| {
        let lo = rows.iter().map(|r| pick(r)).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| pick(r)).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    Ok(SweepResult {
        f1_spread: spread(&|r| r.report.macro_f1),
        acc_spread: spread(&|r| r.report.accuracy),
        rows,
    })
}

/// Principal components of a row-major data matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `k x d`; each row is one unit-norm principal axis, eigenvalue order.
    pub components: Tensor,
    /// Descending covariance eigenvalues, one per component.
    pub eigenvalues: Vec<f64>,
    /// Column means the data was centered with.
    pub mean: Vec<f64>,
    /// Fraction of total variance captured per component.
    pub explained: Vec<f64>,
}

/// PCA of `x` (`n x d`) keeping `k` components, via a cyclic Jacobi
/// eigendecomposition of the column-centered covariance (divisor `n - 1`).
///
/// Sign convention: each component's largest-magnitude entry (earliest on
/// ties) is made positive, so results are deterministic.
pub fn pca(x: &Tensor, k: usize) -> Result<Pca> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(MwError::Data(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if k == 0 || k > n.min(d) {
        return Err(MwError::Config(format!(
            "PCA component count must lie in 1..={} for {n}x{d} data, got {k}",
            n.min(d)
        )));
    }
    if !x.all_finite() {
        return Err(MwError::Data("PCA input contains non-finite values".to_string()));
    }

    let mean: Vec<f64> = (0..d)
        .map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64)
        .collect();
    // Covariance S = Xcᵀ Xc / (n-1), built directly in d x d form.
    let mut cov = vec![vec![0.0; d]; d];
    for r in 0..n {
        let row = x.row(r);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[a][b] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= (n - 1) as f64;
            cov[b][a] = cov[a][b];
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i][i]).sum();

    let (eigenvalues, vectors) = jacobi_eigh(cov);

    // Sort descending by eigenvalue; tie order follows the index.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Tensor::zeros(k, d);
    let mut kept = Vec::with_capacity(k);
    for (row, &src) in order.iter().take(k).enumerate() {
        let col: Vec<f64> = (0..d).map(|i| vectors[i][src]).collect();
        // Fix the sign by the largest-magnitude entry.
        let lead = col
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.abs().total_cmp(&b.abs()).then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .expect("d >= 1");
        let flip = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for (c, v) in col.iter().enumerate() {
            components.set(row, c, v * flip);
        }
        kept.push(eigenvalues[src].max(0.0));
    }
    let explained = kept
        .iter()
        .map(|&l| if total_variance > 0.0 { l / total_variance } else { 0.0 })
        .collect();
    Ok(Pca {
        components,
        eigenvalues: kept,
        mean,
        explained,
    })
}

/// Projects rows of `x` onto the principal axes: `(x - mean) Cᵀ`, `n x k`.
pub fn pca_project(p: &Pca, x: &Tensor) -> Result<Tensor> {
    let (k, d) = p.components.shape();
    if x.cols() != d {
        return Err(MwError::dim(
            "pca_project",
            format!("data has {} columns, components expect {d}", x.cols()),
        ));
    }
    let n = x.rows();
    let mut out = Tensor::zeros(n, k);
    for r in 0..n {
        let row = x.row(r);
        for c in 0..k {
            let axis = p.components.row(c);
            let dot: f64 = (0..d).map(|i| (row[i] - p.mean[i]) * axis[i]).sum();
            out.set(r, c, dot);
        }
    }
    Ok(out)
}

/// Reconstructs from projection coordinates: `z C + mean`, `n x d`.
pub fn pca_reconstruct(p: &Pca, z: &Tensor) -> Result<Tensor> {
    let (k, d) = p.components.shape();
    if z.cols() != k {
        return Err(MwError::dim(
            "pca_reconstruct",
            format!("projection has {} columns, expected {k}", z.cols()),
        ));
    }
    let n = z.rows();
    let mut out = Tensor::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            let mut v = p.mean[c];
            for i in 0..k {
                v += z.get(r, i) * p.components.get(i, c);
            }
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvector matrix (eigenvectors in columns).
fn jacobi_eigh(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    if d < 2 {
        return (a.iter().enumerate().map(|(i, r)| r[i]).collect(), v);
    }
    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..d - 1 {
            for q in p + 1..d {
                if a[p][q] == 0.0 {
                    continue;
                }
                // Classic two-sided rotation zeroing a[p][q].
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for i in 0..d {
                    let (api, aqi) = (a[p][i], a[q][i]);
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for row in v.iter_mut() {
                    let (vip, viq) = (row[p], row[q]);
                    row[p] = c * vip - s * viq;
                    row[q] = s * vip + c * viq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i][i]).collect(), v)
}

/// Which representation a probe or projection reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureStage {
    /// Fused representation before the graph block.
    Fused,
    /// Representation after the graph block (equals fused when it is off).
    Refined,
}

impl FeatureStage {
    pub fn name(self) -> &'static str {
        match self {
            FeatureStage::Fused => "fused",
            FeatureStage::Refined => "refined",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(FeatureStage::Fused),
            "refined" => Ok(FeatureStage::Refined),
            other => Err(MwError::Config(format!(
                "unknown feature stage {other:?} (expected fused or refined)"
            ))),
        }
    }
}

/// Runs the model over a split and collects one feature row per record,
/// in dataset order.
pub fn extract_features(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &Dataset,
    batch_size: usize,
    stage: FeatureStage,
) -> Result<Tensor> {
    let mut out = Tensor::zeros(ds.len(), cfg.d());
    for batch in &make_batches(ds, batch_size, None)? {
        let (g, pass) = run_forward(batch, params, cfg, ForwardOptions::default())?;
        let o = materialize(&g, &pass);
        let src = match stage {
            FeatureStage::Fused => &o.fused,
            FeatureStage::Refined => &o.refined,
        };
        for (k, &idx) in batch.indices.iter().enumerate() {
            for c in 0..src.cols() {
                out.set(idx, c, src.get(k, c));
            }
        }
    }
    Ok(out)
}

/// One cross-validation fold's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFold {
    /// 1-based fold index.
    pub fold: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Cross-validated linear-probe result.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub folds: Vec<ProbeFold>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

/// Seeded stratified k-fold assignment: each class is shuffled separately
/// and dealt round-robin, so every fold sees both classes.
fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(MwError::Config(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    for (name, class) in [("positive", &pos), ("negative", &neg)] {
        if class.len() < k {
            return Err(MwError::Data(format!(
                "the {name} class has {} examples, too few for {k} folds",
                class.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (j, &i) in pos.iter().chain(neg.iter()).enumerate() {
        folds[j % k].push(i);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Full-batch gradient descent on the logistic loss over standardized
/// features with an appended bias column. Fixed budget, no early stopping.
fn fit_logistic(x: &[Vec<f64>], y: &[u8], iters: usize, lr: f64) -> Vec<f64> {
    let n = x.len();
    let dim = x[0].len();
    let mut w = vec![0.0; dim];
    for _ in 0..iters {
        let mut grad = vec![0.0; dim];
        for (row, &label) in x.iter().zip(y) {
            let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - label as f64;
            for (gslot, &xi) in grad.iter_mut().zip(row) {
                *gslot += err * xi;
            }
        }
        for (wslot, g) in w.iter_mut().zip(&grad) {
            *wslot -= lr * g / n as f64;
        }
    }
    w
}

/// Column means and standard deviations (constant columns get std 1, so
/// they standardize to zero instead of exploding).
fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut std = vec![0.0; d];
    for row in rows {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mean, std)
}

/// How well a plain logistic regression separates the classes from the
/// given features: seeded stratified k-fold, fold-local standardization,
/// fixed-budget full-batch gradient descent, scores averaged over folds.
pub fn linear_probe(
    x: &Tensor,
    labels: &[u8],
    k_folds: usize,
    seed: u64,
) -> Result<ProbeResult> {
    let n = x.rows();
    if labels.len() != n {
        return Err(MwError::dim(
            "linear_probe",
            format!("{} labels for {n} feature rows", labels.len()),
        ));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(MwError::Data("probe labels must be 0 or 1".to_string()));
    }
    let folds = stratified_folds(labels, k_folds, seed)?;

    let mut out_folds = Vec::with_capacity(k_folds);
    for (f, test_idx) in folds.iter().enumerate() {
        let in_test = {
            let mut mask = vec![false; n];
            for &i in test_idx {
                mask[i] = true;
            }
            mask
        };
        let train_idx: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();

        let raw = |idx: &[usize]| -> Vec<Vec<f64>> {
            idx.iter().map(|&i| x.row(i).to_vec()).collect()
        };
        let train_raw = raw(&train_idx);
        let (mean, std) = column_stats(&train_raw);
        let prep = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            rows.into_iter()
                .map(|row| {
                    let mut z: Vec<f64> = row
                        .iter()
                        .zip(&mean)
                        .zip(&std)
                        .map(|((v, m), s)| (v - m) / s)
                        .collect();
                    z.push(1.0); // bias feature
                    z
                })
                .collect()
        };
        let train_x = prep(train_raw);
        let test_x = prep(raw(test_idx));
        let train_y: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
        let test_y: Vec<u8> = test_idx.iter().map(|&i| labels[i]).collect();

        let w = fit_logistic(&train_x, &train_y, 400, 0.5);
        let preds: Vec<u8> = test_x
            .iter()
            .map(|row| {
                let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                u8::from(z >= 0.0)
            })
            .collect();
        out_folds.push(ProbeFold {
            fold: f + 1,
            accuracy: metrics::accuracy(&preds, &test_y)?,
            macro_f1: metrics::macro_f1(&preds, &test_y)?,
        });
    }
    let mean_of = |pick: &dyn Fn(&ProbeFold) -> f64| {
        out_folds.iter().map(|f| pick(f)).sum::<f64>() / out_folds.len() as f64
    };
    Ok(ProbeResult {
        mean_accuracy: mean_of(&|f| f.accuracy),
        mean_macro_f1: mean_of(&|f| f.macro_f1),
        folds: out_folds,
    })
}

/// Test-split scores of the reference classifier (percent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineScores {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Logistic regression on the raw `[text | visual]` concatenation, the
/// reference every trained model is measured against: if the full stack
/// cannot beat a linear model that sees exactly the same bytes, the extra
/// machinery earned nothing. Features are standardized with train-split
/// statistics, a bias column is appended, and full-batch gradient descent
/// runs until the gradient's infinity norm drops below `1e-9` (with a
/// large fixed iteration cap as a backstop), so the result is the
/// converged linear optimum rather than an under-trained proxy.
/// Deterministic: no randomness anywhere in the procedure.
pub fn concat_logistic_baseline(train: &Dataset, test: &Dataset) -> Result<BaselineScores> {
    if train.h != test.h {
        return Err(MwError::dim(
            "concat_logistic_baseline",
            format!("train width {} vs test width {}", train.h, test.h),
        ));
    }
    if train.records.is_empty() || test.records.is_empty() {
        return Err(MwError::Data(
            "the baseline needs non-empty train and test splits".to_string(),
        ));
    }
    let rows = |ds: &Dataset| -> Vec<Vec<f64>> {
        ds.records
            .iter()
            .map(|r| r.text.iter().chain(&r.visual).copied().collect())
            .collect()
    };
    let train_raw = rows(train);
    let (mean, std) = column_stats(&train_raw);
    let prep = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|row| {
                let mut z: Vec<f64> = row
                    .iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect();
                z.push(1.0); // bias feature
                z
            })
            .collect()
    };
    let x_train = prep(train_raw);
    let x_test = prep(rows(test));
    let y_train = train.labels();
    let y_test = test.labels();

    let n = x_train.len() as f64;
    let dim = x_train[0].len();
    let mut w = vec![0.0; dim];
    for _ in 0..200_000 {
        let mut grad = vec![0.0; dim];
        for (row, &y) in x_train.iter().zip(&y_train) {
            let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - f64::from(y);
            for (g, v) in grad.iter_mut().zip(row) {
                *g += err * v;
            }
        }
        let mut max_abs: f64 = 0.0;
        for g in &mut grad {
            *g /= n;
            max_abs = max_abs.max(g.abs());
        }
        if max_abs < 1e-9 {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= 1.0 * g;
        }
    }

    let preds: Vec<u8> = x_test
        .iter()
        .map(|row| {
            let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            u8::from(z >= 0.0)
        })
        .collect();
    Ok(BaselineScores {
        accuracy: metrics::accuracy(&preds, &y_test)?,
        macro_f1: metrics::macro_f1(&preds, &y_test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, EmbeddingRecord, Split, SynthConfig};
    use crate::fusion::{FusionKind, FusionParams, GmuGate};
    use crate::imgr::ImgrParams;
    use nalgebra::DMatrix;
    use rand::Rng;

    /// Graph-block model whose affinity weights are exact identities, so
    /// the affinity of a pair is the plain dot product of the fused rows.
    fn identity_affinity_params(cfg: &ModelConfig) -> ModelParams {
        let mut params = ModelParams::init(cfg, 1).unwrap();
        let d = cfg.d();
        params.imgr = Some(ImgrParams {
            w_phi: Tensor::identity(d),
            w_gamma: Tensor::identity(d),
            w_g: Tensor::zeros(d, d),
            w_r: Tensor::identity(d),
        });
        params
    }

    /// Dataset whose concatenated `[text | visual]` rows have unit norm,
    /// so dot products equal cosines exactly.
    fn unit_norm_dataset() -> Dataset {
        let invs = 1.0 / 2.0f64.sqrt();
        let rows: Vec<(Vec<f64>, Vec<f64>, u8)> = vec![
            (vec![invs, 0.0], vec![invs, 0.0], 1),
            (vec![0.0, invs], vec![invs, 0.0], 1),
            (vec![invs, 0.0], vec![0.0, -invs], 0),
            (vec![0.0, -invs], vec![0.0, invs], 0),
            (vec![0.5, 0.5], vec![0.5, -0.5], 1),
        ];
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, (t, v, label))| EmbeddingRecord {
                id: format!("r{i}"),
                label,
                text: t,
                visual: v,
            })
            .collect();
        Dataset::new(Split::Test, 2, records).unwrap()
    }

    #[test]
    fn identity_affinity_on_unit_rows_correlates_perfectly_with_cosine() {
        let cfg = ModelConfig {
            h: 2,
            fusion: FusionKind::Concat,
            imgr: true,
            adapter: false,
            gmu_gate: GmuGate::Visual,
        };
        let mut params = identity_affinity_params(&cfg);
        params.fusion = FusionParams::Concat;
        let ds = unit_norm_dataset();
        let study = affinity_study(&params, &cfg, &ds, ds.len()).unwrap();
        assert_eq!(study.pairs.len(), 10); // C(5,2)
        assert_eq!(study.skipped, 0);
        for p in &study.pairs {
            assert!(
                (p.cos_sim - p.affinity).abs() < 1e-12,
                "cos {} vs affinity {}",
                p.cos_sim,
                p.affinity
            );
        }
        assert!((study.pearson_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affinity_pairs_are_classed_by_label_agreement() {
        let cfg = ModelConfig {
            h: 2,
            fusion: FusionKind::Concat,
            imgr: true,
            adapter: false,
            gmu_gate: GmuGate::Visual,
        };
        let params = identity_affinity_params(&cfg);
        let ds = unit_norm_dataset(); // labels 1,1,0,0,1
        let study = affinity_study(&params, &cfg, &ds, ds.len()).unwrap();
        let count = |class: PairClass| study.pairs.iter().filter(|p| p.class() == class).count();
        assert_eq!(count(PairClass::BothPositive), 3); // pairs among {0,1,4}
        assert_eq!(count(PairClass::BothNegative), 1); // pair {2,3}
        assert_eq!(count(PairClass::Mixed), 6);
        assert!(study.mean_affinity_same.is_some());
        assert!(study.mean_affinity_mixed.is_some());
    }

    #[test]
    fn affinity_study_requires_the_graph_block() {
        let cfg = ModelConfig {
            h: 2,
            imgr: false,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let ds = unit_norm_dataset();
        let err = affinity_study(&params, &cfg, &ds, 5).unwrap_err();
        assert!(matches!(err, MwError::Config(_)));
    }

    #[test]
    fn zero_norm_fused_rows_are_skipped_and_counted() {
        // MFB with a fully blanked record: its fused row is exactly zero,
        // so every pair touching it has no defined cosine.
        let cfg = ModelConfig {
            h: 2,
            fusion: FusionKind::Mfb,
            imgr: true,
            adapter: false,
            gmu_gate: GmuGate::Visual,
        };
        let params = ModelParams::init(&cfg, 3).unwrap();
        let mut records = vec![
            EmbeddingRecord {
                id: "blank".into(),
                label: 0,
                text: vec![0.0, 0.0],
                visual: vec![0.0, 0.0],
            },
        ];
        for i in 0..3 {
            records.push(EmbeddingRecord {
                id: format!("live{i}"),
                label: u8::from(i % 2 == 0),
                text: vec![1.0 + i as f64, -0.5],
                visual: vec![0.3, 0.8 - i as f64],
            });
        }
        let ds = Dataset::new(Split::Test, 2, records).unwrap();
        let study = affinity_study(&params, &cfg, &ds, 4).unwrap();
        assert_eq!(study.skipped, 3); // all pairs touching the blank record
        assert_eq!(study.pairs.len(), 3); // C(3,2) among the live ones
    }

    #[test]
    fn too_few_pairs_is_a_data_error() {
        let cfg = ModelConfig {
            h: 2,
            fusion: FusionKind::Concat,
            imgr: true,
            adapter: false,
            gmu_gate: GmuGate::Visual,
        };
        let params = identity_affinity_params(&cfg);
        let ds = unit_norm_dataset();
        // Batch size 1: every affinity matrix is 1x1, no pairs anywhere.
        let err = affinity_study(&params, &cfg, &ds, 1).unwrap_err();
        assert!(matches!(err, MwError::Data(_)));
    }

    #[test]
    fn inversion_ablation_reports_both_directions_and_the_drop() {
        let (_, _, test) = generate_synthetic(&SynthConfig {
            h: 3,
            n_train: 1,
            n_val: 1,
            n_test: 40,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            h: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 5).unwrap();
        let ab = sign_inversion_ablation(&params, &cfg, &test, 0.5, 8).unwrap();
        assert_eq!(ab.normal.n, 40);
        assert_eq!(ab.inverted.n, 40);
        assert!(
            (ab.f1_drop - (ab.normal.macro_f1 - ab.inverted.macro_f1)).abs() < 1e-12
        );
        let no_graph = ModelConfig {
            imgr: false,
            ..cfg
        };
        let p2 = ModelParams::init(&no_graph, 5).unwrap();
        assert!(sign_inversion_ablation(&p2, &no_graph, &test, 0.5, 8).is_err());
    }

    #[test]
    fn sweep_includes_size_one_and_sorts_unique_sizes() {
        let (_, _, test) = generate_synthetic(&SynthConfig {
            h: 3,
            n_train: 1,
            n_val: 1,
            n_test: 25,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            h: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 2).unwrap();
        let sweep = batch_size_sweep(&params, &cfg, &test, 0.5, &[8, 4, 8, 25]).unwrap();
        let sizes: Vec<usize> = sweep.rows.iter().map(|r| r.batch_size).collect();
        assert_eq!(sizes, vec![1, 4, 8, 25]);
        assert!(sweep.f1_spread >= 0.0 && sweep.acc_spread >= 0.0);
    }

    #[test]
    fn without_the_graph_block_the_sweep_spread_is_exactly_zero() {
        // Every remaining stage is row-local, so batch partitioning cannot
        // change any score: the spread must be identically zero, not merely
        // small.
        let (_, _, test) = generate_synthetic(&SynthConfig {
            h: 3,
            n_train: 1,
            n_val: 1,
            n_test: 30,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            h: 3,
            imgr: false,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 9).unwrap();
        let sweep = batch_size_sweep(&params, &cfg, &test, 0.5, &[2, 7, 30]).unwrap();
        assert_eq!(sweep.f1_spread, 0.0);
        assert_eq!(sweep.acc_spread, 0.0);
    }

    fn random_tensor(seed: u64, n: usize, d: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn pca_matches_an_svd_oracle_on_random_data() {
        let x = random_tensor(11, 40, 6);
        let p = pca(&x, 6).unwrap();

        // Oracle: singular values / right singular vectors of the centered
        // matrix via nalgebra, with lambda_i = sigma_i^2 / (n-1).
        let n = x.rows();
        let mean: Vec<f64> = (0..6)
            .map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64)
            .collect();
        let centered = DMatrix::from_fn(n, 6, |r, c| x.get(r, c) - mean[c]);
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));

        for i in 0..6 {
            let lambda = sv[i] * sv[i] / (n as f64 - 1.0);
            assert!(
                (p.eigenvalues[i] - lambda).abs() < 1e-8,
                "eigenvalue {i}: {} vs {lambda}",
                p.eigenvalues[i]
            );
        }
        // Components agree up to sign: |<jacobi_i, svd_i>| = 1.
        for i in 0..6 {
            let mine = p.components.row(i);
            let dot: f64 = (0..6).map(|c| mine[c] * v_t[(i, c)]).sum();
            assert!(
                (dot.abs() - 1.0).abs() < 1e-6,
                "component {i} misaligned: |dot| = {}",
                dot.abs()
            );
        }
        // Descending eigenvalues and explained fractions summing to ~1.
        for w in p.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let total: f64 = p.explained.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn full_rank_pca_reconstructs_the_data() {
        let x = random_tensor(12, 25, 5);
        let p = pca(&x, 5).unwrap();
        let z = pca_project(&p, &x).unwrap();
        let back = pca_reconstruct(&p, &z).unwrap();
        for r in 0..25 {
            for c in 0..5 {
                assert!(
                    (x.get(r, c) - back.get(r, c)).abs() < 1e-10,
                    "({r},{c}): {} vs {}",
                    x.get(r, c),
                    back.get(r, c)
                );
            }
        }
    }

    #[test]
    fn pca_is_translation_invariant() {
        let x = random_tensor(13, 30, 4);
        let mut shifted = x.clone();
        for r in 0..30 {
            for c in 0..4 {
                shifted.set(r, c, x.get(r, c) + [10.0, -3.0, 7.5, 0.25][c]);
            }
        }
        let a = pca(&x, 3).unwrap();
        let b = pca(&shifted, 3).unwrap();
        for i in 0..3 {
            assert!((a.eigenvalues[i] - b.eigenvalues[i]).abs() < 1e-9);
            for c in 0..4 {
                assert!(
                    (a.components.get(i, c) - b.components.get(i, c)).abs() < 1e-7
                );
            }
        }
    }

    #[test]
    fn jacobi_solves_a_known_two_by_two() {
        let (vals, vecs) = jacobi_eigh(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert!((sorted[0] - 3.0).abs() < 1e-12);
        assert!((sorted[1] - 1.0).abs() < 1e-12);
        // Eigenvector for 3 is (1,1)/sqrt(2) up to sign.
        let hi = if vals[0] >= vals[1] { 0 } else { 1 };
        let ratio = vecs[0][hi] / vecs[1][hi];
        assert!((ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pca_rejects_bad_inputs() {
        let x = random_tensor(14, 10, 4);
        assert!(matches!(pca(&x, 0).unwrap_err(), MwError::Config(_)));
        assert!(matches!(pca(&x, 5).unwrap_err(), MwError::Config(_)));
        let one_row = random_tensor(15, 1, 4);
        assert!(matches!(pca(&one_row, 1).unwrap_err(), MwError::Data(_)));
        let tall_narrow = random_tensor(16, 3, 8);
        assert!(pca(&tall_narrow, 3).is_ok()); // k capped by n, not just d
        assert!(pca(&tall_narrow, 4).is_err());
    }

    #[test]
    fn probe_separates_clean_blobs_and_not_shuffled_labels() {
        // Two well-separated Gaussian blobs: near-perfect probe scores.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 120;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = u8::from(i % 2 == 0);
            let centre = if label == 1 { 3.0 } else { -3.0 };
            for _ in 0..4 {
                data.push(centre + rng.random_range(-0.5..0.5));
            }
            labels.push(label);
        }
        let x = Tensor::from_vec(n, 4, data).unwrap();
        let probe = linear_probe(&x, &labels, 5, 7).unwrap();
        assert!(
            probe.mean_accuracy >= 99.0,
            "separable blobs scored {}",
            probe.mean_accuracy
        );

        // Shuffling the labels destroys the signal: accuracy near chance.
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        let chance = linear_probe(&x, &shuffled, 5, 7).unwrap();
        assert!(
            chance.mean_accuracy < 65.0,
            "shuffled labels scored {}",
            chance.mean_accuracy
        );
    }

    #[test]
    fn stratified_folds_balance_classes_and_are_seeded() {
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i < 15)).collect();
        let folds = stratified_folds(&labels, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = vec![false; 40];
        for fold in &folds {
            let pos = fold.iter().filter(|&&i| labels[i] == 1).count();
            assert!(pos == 3, "fold holds {pos} positives, expected 3");
            for &i in fold {
                assert!(!seen[i], "index {i} dealt twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(folds, stratified_folds(&labels, 5, 3).unwrap());
        assert_ne!(folds, stratified_folds(&labels, 5, 4).unwrap());
    }

    #[test]
    fn probe_errors_when_a_class_is_too_small_for_the_folds() {
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 3)).collect();
        let x = random_tensor(17, 20, 3);
        let err = linear_probe(&x, &labels, 5, 0).unwrap_err();
        assert!(matches!(err, MwError::Data(_)));
        assert!(err.to_string().contains("positive"), "{err}");
    }

    #[test]
    fn extracted_features_follow_dataset_order_and_stage() {
        let (_, _, test) = generate_synthetic(&SynthConfig {
            h: 3,
            n_train: 1,
            n_val: 1,
            n_test: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            h: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 4).unwrap();
        let fused = extract_features(&params, &cfg, &test, 7, FeatureStage::Fused).unwrap();
        let refined = extract_features(&params, &cfg, &test, 7, FeatureStage::Refined).unwrap();
        assert_eq!(fused.shape(), (20, 6));
        assert_eq!(refined.shape(), (20, 6));
        // The graph block actually changes the representation.
        assert_ne!(fused.data(), refined.data());

        // Batch size must not affect the row-to-record mapping.
        let fused_again = extract_features(&params, &cfg, &test, 20, FeatureStage::Fused).unwrap();
        for (a, b) in fused.data().iter().zip(fused_again.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn concat_baseline_tracks_class_separation() {
        // Well separated classes with both modalities intact: a linear
        // model on the raw concatenation should be near perfect.
        let clean = SynthConfig {
            h: 4,
            n_train: 40,
            n_val: 1,
            n_test: 60,
            mean_separation: 1.2,
            noise: 0.25,
            modality_dropout: 0.0,
            seed: 5,
            ..SynthConfig::default()
        };
        let (train, _, test) = generate_synthetic(&clean).unwrap();
        let strong = concat_logistic_baseline(&train, &test).unwrap();
        assert!(strong.accuracy >= 95.0, "clean recipe scored {}", strong.accuracy);

        // Zero separation: nothing to learn, scores must hover at chance.
        let hopeless = SynthConfig {
            mean_separation: 0.0,
            ..clean
        };
        let (train, _, test) = generate_synthetic(&hopeless).unwrap();
        let chance = concat_logistic_baseline(&train, &test).unwrap();
        assert!(
            (35.0..=65.0).contains(&chance.accuracy),
            "classless recipe scored {}",
            chance.accuracy
        );
        assert!(strong.accuracy > chance.accuracy + 20.0);

        // The whole procedure is deterministic, bit for bit.
        let again = concat_logistic_baseline(&train, &test).unwrap();
        assert_eq!(chance.accuracy.to_bits(), again.accuracy.to_bits());
        assert_eq!(chance.macro_f1.to_bits(), again.macro_f1.to_bits());
    }

    #[test]
    fn concat_baseline_rejects_mismatched_or_empty_splits() {
        let (train, _, test) = generate_synthetic(&SynthConfig {
            h: 3,
            n_train: 8,
            n_val: 1,
            n_test: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let (wide_train, _, _) = generate_synthetic(&SynthConfig {
            h: 5,
            n_train: 8,
            n_val: 1,
            n_test: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(matches!(
            concat_logistic_baseline(&wide_train, &test).unwrap_err(),
            MwError::Dimension { .. }
        ));
        // `Dataset::new` refuses empty splits, so reach the defensive
        // check through a hand-built value.
        let empty = Dataset {
            split: Split::Train,
            h: 3,
            records: Vec::new(),
        };
        assert!(matches!(
            concat_logistic_baseline(&empty, &test).unwrap_err(),
            MwError::Data(_)
        ));
        let _ = train;
    }
}
