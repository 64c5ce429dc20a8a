//! Inter-meme graph reasoning (IMGR).
//!
//! Within a batch of fused representations `F` (`m x d`), every pair of
//! records gets a learned affinity `R = (F W_phi)(F W_gamma)ᵀ` (`m x m`,
//! self-loops kept, no softmax). One round of message passing then refines
//! each record through its batch peers with a residual:
//! `F' = (R_hat F W_g) W_r + F`, where `R_hat = R / m` is scaled by the
//! runtime batch size. Exactly one round is applied; the mechanism has no
//! depth knob.
//!
//! For the sign-inversion diagnostic, message passing can run with `-R`
//! instead of `R` at inference time, which turns helpful neighbours into
//! misleading ones without touching any trained weight.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, TensorId};
use crate::error::{MwError, Result};

/// Trainable state of the graph-reasoning block; all four matrices are
/// `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImgrParams {
    /// Left projection of the affinity bilinear form.
    pub w_phi: Tensor,
    /// Right projection of the affinity bilinear form.
    pub w_gamma: Tensor,
    /// Message projection applied to the fused features.
    pub w_g: Tensor,
    /// Output projection applied to the aggregated messages.
    pub w_r: Tensor,
}

impl ImgrParams {
    /// Glorot-initialised parameters; draw order is fixed
    /// (`w_phi, w_gamma, w_g, w_r`) so a seed pins the values.
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        ImgrParams {
            w_phi: Tensor::glorot_uniform(d, d, rng),
            w_gamma: Tensor::glorot_uniform(d, d, rng),
            w_g: Tensor::glorot_uniform(d, d, rng),
            w_r: Tensor::glorot_uniform(d, d, rng),
        }
    }

    /// Tensors in stable enumeration order, with their local names.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_phi", &self.w_phi),
            ("w_gamma", &self.w_gamma),
            ("w_g", &self.w_g),
            ("w_r", &self.w_r),
        ]
    }

    /// Mutable variant of [`ImgrParams::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_phi", &mut self.w_phi),
            ("w_gamma", &mut self.w_gamma),
            ("w_g", &mut self.w_g),
            ("w_r", &mut self.w_r),
        ]
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for (name, t) in self.named_tensors() {
            if t.shape() != (d, d) {
                return Err(MwError::dim(
                    "imgr",
                    format!(
                        "{name} has shape {}x{}, expected {d}x{d}",
                        t.rows(),
                        t.cols()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Graph ids of the IMGR parameters once registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundImgr {
    pub w_phi: TensorId,
    pub w_gamma: TensorId,
    pub w_g: TensorId,
    pub w_r: TensorId,
}

/// Records the pairwise affinity matrix `R = (F W_phi)(F W_gamma)ᵀ`.
pub fn affinity(
    g: &mut Graph,
    f: TensorId,
    w_phi: TensorId,
    w_gamma: TensorId,
) -> Result<TensorId> {
    let left = g.matmul(f, w_phi)?;
    let right = g.matmul(f, w_gamma)?;
    let right_t = g.transpose(right);
    g.matmul(left, right_t)
}

/// Records one round of message passing with a residual:
/// `F' = (R_hat F W_g) W_r + F` with `R_hat = R / m` (batch size at
/// runtime). With `invert` set the affinities enter negated (`-R_hat`),
/// the inference-time ablation that flips every neighbour's influence.
pub fn message_pass(
    g: &mut Graph,
    f: TensorId,
    r: TensorId,
    w_g: TensorId,
    w_r: TensorId,
    invert: bool,
) -> Result<TensorId> {
    let m = g.value(f).rows();
    let (rr, rc) = g.value(r).shape();
    if rr != m || rc != m {
        return Err(MwError::dim(
            "imgr",
            format!("affinity is {rr}x{rc} but the batch has {m} records"),
        ));
    }
    let sign = if invert { -1.0 } else { 1.0 };
    let r_hat = g.scale(r, sign / m as f64);
    let msg = g.matmul(f, w_g)?;
    let agg = g.matmul(r_hat, msg)?;
    let proj = g.matmul(agg, w_r)?;
    g.add(proj, f)
}
