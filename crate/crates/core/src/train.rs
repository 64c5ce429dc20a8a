//! AdamW training with a linear learning-rate decay and best-epoch
//! checkpoint retention.
//!
//! The schedule decays the base rate linearly to zero over the whole run
//! with no warmup: step `s` (0-based) of `T` total steps trains at
//! `base * (1 - s/T)`, so the first step uses the full base rate and the
//! rate after the final step would be exactly zero.
//!
//! AdamW applies *decoupled* weight decay: each weight is first shrunk by
//! `lr_t * weight_decay`, then moved by the bias-corrected adaptive update
//! computed from the raw gradient. Decay never enters the moment buffers.
//!
//! Training batches are cut from the train split in stream order, the same
//! way inference batches are. The graph-refinement stage reasons over
//! whichever records share a batch, so batch composition is part of the
//! model's input distribution: shuffling at train time would feed the graph
//! one kind of neighbourhood during training and another at inference.
//! Keeping stream order on both sides removes that mismatch and makes the
//! loop deterministic without any RNG.
//!
//! After every epoch the model is scored on the validation split at the
//! neutral threshold 0.5; the parameters with the best validation macro-F1
//! are retained (strictly greater wins, so ties keep the earliest epoch),
//! and the decision threshold is tuned on validation scores of that
//! retained model only after the loop completes.

use crate::dataio::{make_batches, Dataset};
use crate::error::{MwError, Result};
use crate::metrics;
use crate::model::{evaluate, run_forward, ForwardOptions, ModelConfig, ModelParams};

/// Learning rate at 0-based `step` of `total_steps`: linear decay from
/// `base` to zero, no warmup.
pub fn lr_at(step: usize, total_steps: usize, base: f64) -> f64 {
    base * (1.0 - step as f64 / total_steps as f64)
}

/// AdamW hyper-parameters (the learning rate arrives per step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamwConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        AdamwConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamwConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(MwError::Config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(MwError::Config(format!(
                "eps must be positive and finite, got {}",
                self.eps
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(MwError::Config(format!(
                "weight_decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// First and second moment buffers, one slot per parameter tensor in
/// enumeration order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    /// Completed optimizer steps (bias correction uses `t` after increment).
    pub t: u64,
    slots: Vec<MomentSlot>,
}

#[derive(Debug, Clone)]
struct MomentSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    /// Zeroed moments shaped after the model's parameter enumeration.
    pub fn new(params: &ModelParams) -> Self {
        let slots = params
            .named_tensors()
            .iter()
            .map(|(_, t)| MomentSlot {
                m: vec![0.0; t.len()],
                v: vec![0.0; t.len()],
            })
            .collect();
        OptimizerState { t: 0, slots }
    }
}

/// One AdamW update over every parameter tensor. `grads` must align with
/// the parameter enumeration order (as produced by a forward pass).
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr_t: f64,
    cfg: &AdamwConfig,
) -> Result<()> {
    cfg.validate()?;
    if !(lr_t.is_finite() && lr_t >= 0.0) {
        return Err(MwError::Config(format!(
            "per-step learning rate must be finite and non-negative, got {lr_t}"
        )));
    }
    let mut named = params.named_tensors_mut();
    if grads.len() != named.len() || state.slots.len() != named.len() {
        return Err(MwError::dim(
            "adamw",
            format!(
                "{} gradients and {} moment slots for {} parameter tensors",
                grads.len(),
                state.slots.len(),
                named.len()
            ),
        ));
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for ((name, tensor), (grad, slot)) in
        named.iter_mut().zip(grads.iter().zip(state.slots.iter_mut()))
    {
        if grad.len() != tensor.len() {
            return Err(MwError::dim(
                "adamw",
                format!(
                    "gradient for {name} has {} entries, tensor has {}",
                    grad.len(),
                    tensor.len()
                ),
            ));
        }
        for (i, (&g, w)) in grad.iter().zip(tensor.data_mut().iter_mut()).enumerate() {
            if !g.is_finite() {
                return Err(MwError::Training(format!(
                    "non-finite gradient in {name} (entry {i}) at optimizer step {}",
                    state.t
                )));
            }
            // Decoupled decay first, then the adaptive move.
            *w *= 1.0 - lr_t * cfg.weight_decay;
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            *w -= lr_t * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// The full training recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Base learning rate the schedule decays from.
    pub lr: f64,
    pub adamw: AdamwConfig,
    /// Batch size for gradient steps (batches cut in stream order).
    pub train_batch: usize,
    /// Batch size for validation scoring (also stream order).
    pub infer_batch: usize,
    /// Seeds parameter initialization at the call sites; the loop itself
    /// draws no random numbers.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            lr: 1e-3,
            adamw: AdamwConfig::default(),
            train_batch: 20,
            infer_batch: 41,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(MwError::Config("epochs must be at least 1".to_string()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MwError::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.train_batch == 0 || self.infer_batch == 0 {
            return Err(MwError::Config(
                "batch sizes must be at least 1".to_string(),
            ));
        }
        self.adamw.validate()
    }
}

/// One recorded training step.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// 1-based step index across the whole run.
    pub step: usize,
    /// Learning rate the step trained at.
    pub lr: f64,
    /// Batch loss before the update.
    pub loss: f64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    /// Validation macro-F1 (percent) at threshold 0.5 after each epoch.
    pub epoch_val_f1: Vec<f64>,
    /// 1-based epoch whose parameters were retained.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    /// Decision threshold tuned on validation scores of the retained model.
    pub tuned_tau: f64,
    /// Validation macro-F1 (percent) at the tuned threshold.
    pub tuned_val_f1: f64,
    /// The retained parameters.
    pub final_params: ModelParams,
}

/// Keeps the candidate only when it is strictly better, so equal scores
/// retain the earliest epoch.
fn retain_best(
    best: &mut Option<(f64, usize, ModelParams)>,
    f1: f64,
    epoch: usize,
    params: &ModelParams,
) {
    let improved = match best {
        Some((best_f1, _, _)) => f1 > *best_f1,
        None => true,
    };
    if improved {
        *best = Some((f1, epoch, params.clone()));
    }
}

/// Trains `params` on the train split and returns the retained model with
/// its tuned threshold. Deterministic for fixed inputs and seed.
pub fn train(
    mut params: ModelParams,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<TrainReport> {
    tcfg.validate()?;
    params.validate(cfg)?;
    let opts = ForwardOptions::default();

    let batches_per_epoch = train_ds.len().div_ceil(tcfg.train_batch);
    let total_steps = tcfg.epochs * batches_per_epoch;
    let mut state = OptimizerState::new(&params);
    let mut curve = Vec::with_capacity(total_steps);
    let mut epoch_val_f1 = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut step = 0usize;

    // Stream-order batches: the graph stage must train on the same kind of
    // neighbourhoods it will see at inference (see the module docs).
    let batches = make_batches(train_ds, tcfg.train_batch, None)?;
    for epoch in 0..tcfg.epochs {
        for batch in &batches {
            let (mut g, pass) = run_forward(batch, &params, cfg, opts)?;
            let (loss_id, _) = g.softmax_xent(pass.logits, &batch.labels)?;
            let loss = g.value(loss_id).get(0, 0);
            if !loss.is_finite() {
                return Err(MwError::Training(format!(
                    "training diverged at step {}: loss is {loss}",
                    step + 1
                )));
            }
            g.backward(loss_id)?;
            let grads: Vec<Vec<f64>> = pass
                .param_ids
                .iter()
                .map(|&id| {
                    g.grad(id)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; g.value(id).len()])
                })
                .collect();
            let lr_t = lr_at(step, total_steps, tcfg.lr);
            adamw_step(&mut params, &grads, &mut state, lr_t, &tcfg.adamw)?;
            curve.push(CurvePoint {
                step: step + 1,
                lr: lr_t,
                loss,
            });
            step += 1;
        }

        let (report, _) = evaluate(&params, cfg, val_ds, 0.5, tcfg.infer_batch, opts)?;
        epoch_val_f1.push(report.macro_f1);
        retain_best(&mut best, report.macro_f1, epoch + 1, &params);
    }

    let (best_val_f1, best_epoch, final_params) =
        best.expect("at least one epoch ran");

    // Tune the decision threshold on validation scores of the retained model.
    let (_, rows) = evaluate(&final_params, cfg, val_ds, 0.5, tcfg.infer_batch, opts)?;
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let (tuned_tau, tuned_val_f1) = metrics::tune_threshold(&scores, &labels)?;

    Ok(TrainReport {
        curve,
        epoch_val_f1,
        best_epoch,
        best_val_f1,
        tuned_tau,
        tuned_val_f1,
        final_params,
    })
}
