//! Central finite-difference oracle for validating backward rules.
//!
//! The harness rebuilds the caller's forward graph from scratch for every
//! probe, so it is independent of the tape's backward pass: agreement
//! between the two is evidence that the analytic gradients are right.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, TensorId};
use super::tensor::Tensor;
use crate::error::{MwError, Result};

/// Above this many total parameter entries the harness checks a seeded
/// random subset of exactly this size instead of every entry.
pub const GRAD_CHECK_SUBSAMPLE_CAP: usize = 500;

/// Relative-error denominator floor. Gradient entries that are genuinely
/// tiny compare against finite-difference noise of order `1e-10`; the floor
/// keeps such entries from reporting spurious relative errors while still
/// exposing any real mistake of one percent or more.
const REL_ERROR_FLOOR: f64 = 1e-3;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all checked entries.
    pub max_rel_error: f64,
    /// Name and flat entry index of the worst entry, if any were checked.
    pub worst_entry: Option<(String, usize)>,
    /// How many entries were actually probed.
    pub entries_checked: usize,
    /// Tolerance the check was run against.
    pub tol: f64,
    /// `max_rel_error <= tol`.
    pub passed: bool,
}

/// Builds the forward graph once and returns `(loss value, analytic grads)`.
///
/// The closure must register the given parameters on the graph in order
/// and return the scalar loss id together with the parameter ids in the
/// same order.
fn eval_once<F>(params: &[(String, Tensor)], build: &F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Graph, &[(String, Tensor)]) -> Result<(TensorId, Vec<TensorId>)>,
{
    let mut g = Graph::new();
    let (loss, ids) = build(&mut g, params)?;
    if ids.len() != params.len() {
        return Err(MwError::Usage(format!(
            "graph builder returned {} parameter ids for {} parameters",
            ids.len(),
            params.len()
        )));
    }
    let shape = g.value(loss).shape();
    if shape != (1, 1) {
        return Err(MwError::Usage(format!(
            "gradient check needs a 1x1 scalar loss, got {}x{}",
            shape.0, shape.1
        )));
    }
    let loss_val = g.value(loss).get(0, 0);
    if !loss_val.is_finite() {
        return Err(MwError::Training(
            "non-finite loss during gradient check".to_string(),
        ));
    }
    g.backward(loss)?;
    let grads = ids
        .iter()
        .zip(params)
        .map(|(id, (_, p))| match g.grad(*id) {
            Some(s) => s.to_vec(),
            None => vec![0.0; p.len()],
        })
        .collect();
    Ok((loss_val, grads))
}

fn eval_loss<F>(params: &[(String, Tensor)], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[(String, Tensor)]) -> Result<(TensorId, Vec<TensorId>)>,
{
    Ok(eval_once(params, build)?.0)
}

/// Full central-difference gradient of the loss with respect to every
/// parameter entry: `(loss(x+h) - loss(x-h)) / 2h` per entry. Exposed so
/// tests can compare the numeric gradient against arbitrary candidates.
pub fn fd_gradients<F>(
    params: &[(String, Tensor)],
    build: &F,
    step: f64,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[(String, Tensor)]) -> Result<(TensorId, Vec<TensorId>)>,
{
    check_step(step)?;
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let n = work[p].1.len();
        let mut grad = vec![0.0; n];
        for e in 0..n {
            grad[e] = fd_entry(&mut work, build, p, e, step)?;
        }
        out.push(grad);
    }
    Ok(out)
}

fn fd_entry<F>(
    work: &mut [(String, Tensor)],
    build: &F,
    p: usize,
    e: usize,
    step: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[(String, Tensor)]) -> Result<(TensorId, Vec<TensorId>)>,
{
    let orig = work[p].1.data()[e];
    work[p].1.data_mut()[e] = orig + step;
    let plus = eval_loss(work, build);
    work[p].1.data_mut()[e] = orig - step;
    let minus = eval_loss(work, build);
    work[p].1.data_mut()[e] = orig;
    Ok((plus? - minus?) / (2.0 * step))
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(MwError::Config(format!(
            "finite-difference step must be positive and finite, got {step}"
        )));
    }
    Ok(())
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(REL_ERROR_FLOOR)
}

/// Checks the tape's analytic gradients against central finite differences.
///
/// Every parameter entry is probed with `±step` unless the total entry
/// count exceeds [`GRAD_CHECK_SUBSAMPLE_CAP`], in which case a seeded
/// random subset of exactly that many entries is probed instead. The check
/// passes when the worst relative error stays within `tol`.
pub fn grad_check<F>(
    params: &[(String, Tensor)],
    build: &F,
    step: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[(String, Tensor)]) -> Result<(TensorId, Vec<TensorId>)>,
{
    check_step(step)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(MwError::Config(format!(
            "gradient tolerance must be positive and finite, got {tol}"
        )));
    }

    let (_, analytic) = eval_once(params, build)?;

    // Flat enumeration of (parameter, entry) pairs, subsampled when large.
    let sizes: Vec<usize> = params.iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut picks: Vec<usize> = if total > GRAD_CHECK_SUBSAMPLE_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, total, GRAD_CHECK_SUBSAMPLE_CAP).into_vec()
    } else {
        (0..total).collect()
    };
    picks.sort_unstable();

    let mut work = params.to_vec();
    let mut max_rel = 0.0;
    let mut worst = None;
    for flat in picks.iter().copied() {
        let (p, e) = locate(&sizes, flat);
        let fd = fd_entry(&mut work, build, p, e, step)?;
        let rel = rel_error(analytic[p][e], fd);
        if rel > max_rel || worst.is_none() {
            max_rel = rel;
            worst = Some((params[p].0.clone(), e));
        }
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_entry: worst,
        entries_checked: picks.len(),
        tol,
        passed: max_rel <= tol,
    })
}

/// Maps a flat entry index back to `(parameter, entry)` coordinates.
fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (p, &n) in sizes.iter().enumerate() {
        if flat < n {
            return (p, flat);
        }
        flat -= n;
    }
    unreachable!("flat index out of range");
}
