//! Text/visual fusion mechanisms.
//!
//! All three fusers map a pair of embedding matrices `(E_t, E_v)`, each
//! `m x h`, to a fused matrix `F` of shape `m x d` where `d = 2h`:
//!
//! * **concat** — `F = [E_t | E_v]`, parameter free;
//! * **mfb** — multimodal factorised bilinear: `F = (E_t U) ∘ (E_v V)`
//!   with projections `U, V` of shape `h x d` (no pooling or
//!   normalisation stages);
//! * **gmu** — gated multimodal unit: a sigmoid gate
//!   `Z = σ([E_t | E_v] U_z)` blends the two tanh-squashed modality
//!   projections, `F = Z ∘ tanh(E_v U_v) + (1 - Z) ∘ tanh(E_t U_t)`.
//!
//! For GMU the gate multiplies the **visual** branch by default; a config
//! switch flips it onto the text branch instead.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, TensorId};
use crate::error::{MwError, Result};

/// Which fusion mechanism a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    Concat,
    Mfb,
    Gmu,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Concat => "concat",
            FusionKind::Mfb => "mfb",
            FusionKind::Gmu => "gmu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionKind::Concat),
            "mfb" => Ok(FusionKind::Mfb),
            "gmu" => Ok(FusionKind::Gmu),
            other => Err(MwError::Config(format!(
                "unknown fusion kind {other:?} (expected concat, mfb, or gmu)"
            ))),
        }
    }
}

/// Which branch the GMU gate `Z` multiplies directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmuGate {
    Visual,
    Text,
}

impl GmuGate {
    pub fn name(self) -> &'static str {
        match self {
            GmuGate::Visual => "visual",
            GmuGate::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(GmuGate::Visual),
            "text" => Ok(GmuGate::Text),
            other => Err(MwError::Config(format!(
                "unknown gmu gate side {other:?} (expected visual or text)"
            ))),
        }
    }
}

/// Trainable state of one fusion mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionParams {
    Concat,
    Mfb { u: Tensor, v: Tensor },
    Gmu { u_t: Tensor, u_v: Tensor, u_z: Tensor },
}

impl FusionParams {
    /// Glorot-initialised parameters for the given widths. Draw order is
    /// fixed (`u, v` for MFB; `u_t, u_v, u_z` for GMU) so a seed pins the
    /// values.
    pub fn init<R: Rng>(kind: FusionKind, h: usize, d: usize, rng: &mut R) -> Self {
        match kind {
            FusionKind::Concat => FusionParams::Concat,
            FusionKind::Mfb => FusionParams::Mfb {
                u: Tensor::glorot_uniform(h, d, rng),
                v: Tensor::glorot_uniform(h, d, rng),
            },
            FusionKind::Gmu => FusionParams::Gmu {
                u_t: Tensor::glorot_uniform(h, d, rng),
                u_v: Tensor::glorot_uniform(h, d, rng),
                u_z: Tensor::glorot_uniform(2 * h, d, rng),
            },
        }
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            FusionParams::Concat => FusionKind::Concat,
            FusionParams::Mfb { .. } => FusionKind::Mfb,
            FusionParams::Gmu { .. } => FusionKind::Gmu,
        }
    }

    /// Tensors in stable enumeration order, with their local names.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            FusionParams::Concat => vec![],
            FusionParams::Mfb { u, v } => vec![("u", u), ("v", v)],
            FusionParams::Gmu { u_t, u_v, u_z } => {
                vec![("u_t", u_t), ("u_v", u_v), ("u_z", u_z)]
            }
        }
    }

    /// Mutable variant of [`FusionParams::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            FusionParams::Concat => vec![],
            FusionParams::Mfb { u, v } => vec![("u", u), ("v", v)],
            FusionParams::Gmu { u_t, u_v, u_z } => {
                vec![("u_t", u_t), ("u_v", u_v), ("u_z", u_z)]
            }
        }
    }

    /// Checks every tensor against the widths the model expects.
    pub fn validate(&self, h: usize, d: usize) -> Result<()> {
        let expect = |name: &str, t: &Tensor, rows: usize, cols: usize| -> Result<()> {
            if t.shape() != (rows, cols) {
                return Err(MwError::dim(
                    "fusion",
                    format!(
                        "{name} has shape {}x{}, expected {rows}x{cols}",
                        t.rows(),
                        t.cols()
                    ),
                ));
            }
            Ok(())
        };
        match self {
            FusionParams::Concat => Ok(()),
            FusionParams::Mfb { u, v } => {
                expect("u", u, h, d)?;
                expect("v", v, h, d)
            }
            FusionParams::Gmu { u_t, u_v, u_z } => {
                expect("u_t", u_t, h, d)?;
                expect("u_v", u_v, h, d)?;
                expect("u_z", u_z, 2 * h, d)
            }
        }
    }
}

/// Ids of the fusion parameters after they have been registered on a
/// graph, in the same order as [`FusionParams::named_tensors`].
#[derive(Debug, Clone)]
pub enum BoundFusion {
    Concat,
    Mfb { u: TensorId, v: TensorId },
    Gmu { u_t: TensorId, u_v: TensorId, u_z: TensorId },
}

/// Records the fused representation `F` on the graph and returns its id.
/// `gate` only affects GMU.
pub fn fuse(
    g: &mut Graph,
    e_t: TensorId,
    e_v: TensorId,
    bound: &BoundFusion,
    gate: GmuGate,
) -> Result<TensorId> {
    match bound {
        BoundFusion::Concat => g.concat_cols(e_t, e_v),
        BoundFusion::Mfb { u, v } => {
            let pt = g.matmul(e_t, *u)?;
            let pv = g.matmul(e_v, *v)?;
            g.hadamard(pt, pv)
        }
        BoundFusion::Gmu { u_t, u_v, u_z } => {
            let both = g.concat_cols(e_t, e_v)?;
            let pre = g.matmul(both, *u_z)?;
            let z = g.sigmoid(pre);
            let ht = g.matmul(e_t, *u_t)?;
            let ht = g.tanh(ht);
            let hv = g.matmul(e_v, *u_v)?;
            let hv = g.tanh(hv);
            let (gated, other) = match gate {
                GmuGate::Visual => (hv, ht),
                GmuGate::Text => (ht, hv),
            };
            let (m, d) = g.value(z).shape();
            let ones = g.input(Tensor::filled(m, d, 1.0));
            let neg_z = g.scale(z, -1.0);
            let one_minus_z = g.add(ones, neg_z)?;
            let a = g.hadamard(z, gated)?;
            let b = g.hadamard(one_minus_z, other)?;
            g.add(a, b)
        }
    }
}
