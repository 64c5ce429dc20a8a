//! Model assembly and checkpointing.
//!
//! A model is a straight pipeline over one batch: optional per-modality
//! linear adapters (identity-initialised), a fusion mechanism producing
//! `F` (`m x d`, `d = 2h`), optionally the IMGR block refining `F` into
//! `F'`, and a linear classifier `logits = F' W_c` with `W_c` of shape
//! `d x 2`. There are no bias terms anywhere.
//!
//! Checkpoints are a versioned container that echoes the model config and
//! stores every tensor under its enumeration name, in enumeration order,
//! either as 17-significant-digit decimal text or as raw little-endian
//! 64-bit payload.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_rows, Graph, Tensor, TensorId};
use crate::dataio::{format_f64, make_batches, Batch, Dataset};
use crate::error::{MwError, Result};
use crate::fusion::{fuse, BoundFusion, FusionKind, FusionParams, GmuGate};
use crate::imgr::{affinity, message_pass, ImgrParams};
use crate::metrics::{self, MetricsReport};

/// Magic tag opening every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "MWCP1";

/// Architecture switches; everything trainable hangs off these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Per-modality embedding width. The fused width is always `d = 2h`.
    pub h: usize,
    pub fusion: FusionKind,
    /// Whether the IMGR block refines the fused representation.
    pub imgr: bool,
    /// Whether identity-initialised `h x h` adapters precede fusion.
    pub adapter: bool,
    /// Which branch the GMU gate multiplies (GMU models only).
    pub gmu_gate: GmuGate,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            h: 8,
            fusion: FusionKind::Mfb,
            imgr: true,
            adapter: false,
            gmu_gate: GmuGate::Visual,
        }
    }
}

impl ModelConfig {
    /// Fused representation width.
    pub fn d(&self) -> usize {
        2 * self.h
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(MwError::Config("h must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// All trainable tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub adapter_t: Option<Tensor>,
    pub adapter_v: Option<Tensor>,
    pub fusion: FusionParams,
    pub imgr: Option<ImgrParams>,
    /// Classifier, `d x 2`.
    pub w_c: Tensor,
}

impl ModelParams {
    /// Fresh parameters for the given config. Adapters start as exact
    /// identities; everything else is Glorot-uniform from a ChaCha stream
    /// seeded with `seed`, drawn in enumeration order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, d) = (cfg.h, cfg.d());
        let (adapter_t, adapter_v) = if cfg.adapter {
            (Some(Tensor::identity(h)), Some(Tensor::identity(h)))
        } else {
            (None, None)
        };
        let fusion = FusionParams::init(cfg.fusion, h, d, &mut rng);
        let imgr = cfg.imgr.then(|| ImgrParams::init(d, &mut rng));
        let w_c = Tensor::glorot_uniform(d, 2, &mut rng);
        Ok(ModelParams {
            adapter_t,
            adapter_v,
            fusion,
            imgr,
            w_c,
        })
    }

    /// Every tensor with its qualified name, in the stable enumeration
    /// order used by the optimiser and the checkpoint format:
    /// adapters, fusion, imgr, classifier.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(t) = &self.adapter_t {
            out.push(("adapter_t".to_string(), t));
        }
        if let Some(t) = &self.adapter_v {
            out.push(("adapter_v".to_string(), t));
        }
        for (n, t) in self.fusion.named_tensors() {
            out.push((format!("fusion.{n}"), t));
        }
        if let Some(ip) = &self.imgr {
            for (n, t) in ip.named_tensors() {
                out.push((format!("imgr.{n}"), t));
            }
        }
        out.push(("classifier.w_c".to_string(), &self.w_c));
        out
    }

    /// Mutable variant of [`ModelParams::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        if let Some(t) = &mut self.adapter_t {
            out.push(("adapter_t".to_string(), t));
        }
        if let Some(t) = &mut self.adapter_v {
            out.push(("adapter_v".to_string(), t));
        }
        for (n, t) in self.fusion.named_tensors_mut() {
            out.push((format!("fusion.{n}"), t));
        }
        if let Some(ip) = &mut self.imgr {
            for (n, t) in ip.named_tensors_mut() {
                out.push((format!("imgr.{n}"), t));
            }
        }
        out.push(("classifier.w_c".to_string(), &mut self.w_c));
        out
    }

    /// Total number of scalar parameters.
    pub fn n_entries(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks that presence and shapes agree with the config.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let (h, d) = (cfg.h, cfg.d());
        match (cfg.adapter, &self.adapter_t, &self.adapter_v) {
            (true, Some(at), Some(av)) => {
                for (name, t) in [("adapter_t", at), ("adapter_v", av)] {
                    if t.shape() != (h, h) {
                        return Err(MwError::dim(
                            "adapter",
                            format!("{name} is {}x{}, expected {h}x{h}", t.rows(), t.cols()),
                        ));
                    }
                }
            }
            (false, None, None) => {}
            _ => {
                return Err(MwError::Config(
                    "adapter parameters do not match the adapter config flag".to_string(),
                ))
            }
        }
        if self.fusion.kind() != cfg.fusion {
            return Err(MwError::Config(format!(
                "fusion parameters are {} but the config says {}",
                self.fusion.kind().name(),
                cfg.fusion.name()
            )));
        }
        self.fusion.validate(h, d)?;
        match (cfg.imgr, &self.imgr) {
            (true, Some(ip)) => ip.validate(d)?,
            (false, None) => {}
            _ => {
                return Err(MwError::Config(
                    "imgr parameters do not match the imgr config flag".to_string(),
                ))
            }
        }
        if self.w_c.shape() != (d, 2) {
            return Err(MwError::dim(
                "classifier",
                format!(
                    "w_c is {}x{}, expected {d}x2",
                    self.w_c.rows(),
                    self.w_c.cols()
                ),
            ));
        }
        Ok(())
    }
}

/// Inference-time switches for a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Run message passing with `-R` (sign-inversion diagnostic).
    pub invert_affinity: bool,
}

/// Ids of the interesting tensors after a forward pass was recorded.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub fused: TensorId,
    /// Equals `fused` (same id) when the model has no IMGR block.
    pub refined: TensorId,
    pub affinity: Option<TensorId>,
    pub logits: TensorId,
    /// Parameter ids in enumeration order, for gradient collection.
    pub param_ids: Vec<TensorId>,
}

/// Materialised values of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    /// Row-softmax of the logits.
    pub probs: Tensor,
    pub fused: Tensor,
    pub refined: Tensor,
    pub affinity: Option<Tensor>,
}

/// Records the full forward pipeline for one batch on `g`.
pub fn forward(
    g: &mut Graph,
    batch: &Batch,
    params: &ModelParams,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<ForwardPass> {
    params.validate(cfg)?;
    if batch.e_t.cols() != cfg.h || batch.e_v.cols() != cfg.h {
        return Err(MwError::dim(
            "input",
            format!(
                "batch embeddings are {}-wide but the model expects h={}",
                batch.e_t.cols(),
                cfg.h
            ),
        ));
    }
    if batch.is_empty() {
        return Err(MwError::Data("cannot run a forward pass on an empty batch".to_string()));
    }

    let mut param_ids = Vec::new();
    let mut e_t = g.input(batch.e_t.clone());
    let mut e_v = g.input(batch.e_v.clone());

    if let (Some(at), Some(av)) = (&params.adapter_t, &params.adapter_v) {
        let at = g.param(at);
        param_ids.push(at);
        let av = g.param(av);
        param_ids.push(av);
        e_t = g.matmul(e_t, at)?;
        e_v = g.matmul(e_v, av)?;
    }

    let bound = match &params.fusion {
        FusionParams::Concat => BoundFusion::Concat,
        FusionParams::Mfb { u, v } => {
            let u = g.param(u);
            param_ids.push(u);
            let v = g.param(v);
            param_ids.push(v);
            BoundFusion::Mfb { u, v }
        }
        FusionParams::Gmu { u_t, u_v, u_z } => {
            let u_t = g.param(u_t);
            param_ids.push(u_t);
            let u_v = g.param(u_v);
            param_ids.push(u_v);
            let u_z = g.param(u_z);
            param_ids.push(u_z);
            BoundFusion::Gmu { u_t, u_v, u_z }
        }
    };
    let fused = fuse(g, e_t, e_v, &bound, cfg.gmu_gate)?;

    let (refined, affin) = match &params.imgr {
        Some(ip) => {
            let w_phi = g.param(&ip.w_phi);
            param_ids.push(w_phi);
            let w_gamma = g.param(&ip.w_gamma);
            param_ids.push(w_gamma);
            let w_g = g.param(&ip.w_g);
            param_ids.push(w_g);
            let w_r = g.param(&ip.w_r);
            param_ids.push(w_r);
            let r = affinity(g, fused, w_phi, w_gamma)?;
            let refined = message_pass(g, fused, r, w_g, w_r, opts.invert_affinity)?;
            (refined, Some(r))
        }
        None => (fused, None),
    };

    let w_c = g.param(&params.w_c);
    param_ids.push(w_c);
    let logits = g.matmul(refined, w_c)?;

    Ok(ForwardPass {
        fused,
        refined,
        affinity: affin,
        logits,
        param_ids,
    })
}

/// Builds a fresh graph and records a forward pass on it.
pub fn run_forward(
    batch: &Batch,
    params: &ModelParams,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<(Graph, ForwardPass)> {
    let mut g = Graph::new();
    let pass = forward(&mut g, batch, params, cfg, opts)?;
    Ok((g, pass))
}

/// Copies the values of a recorded pass out of the graph.
pub fn materialize(g: &Graph, pass: &ForwardPass) -> ForwardOutput {
    let logits = g.value(pass.logits).clone();
    ForwardOutput {
        probs: softmax_rows(&logits),
        logits,
        fused: g.value(pass.fused).clone(),
        refined: g.value(pass.refined).clone(),
        affinity: pass.affinity.map(|id| g.value(id).clone()),
    }
}

/// Mean cross-entropy `-(1/m) Σ log p[j, y_j]` recomputed from the
/// probability matrix (independent of the fused loss op on the tape).
pub fn loss_from_probs(probs: &Tensor, labels: &[u8]) -> Result<f64> {
    let (m, k) = probs.shape();
    if labels.len() != m {
        return Err(MwError::dim(
            "loss",
            format!("{} labels for {} probability rows", labels.len(), m),
        ));
    }
    if m == 0 {
        return Err(MwError::Data("loss of an empty batch is undefined".to_string()));
    }
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        if (y as usize) >= k {
            return Err(MwError::Data(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        total += probs.get(j, y as usize).ln();
    }
    Ok(-total / m as f64)
}

/// Thresholded positive-class decision: label 1 iff `p[:,1] >= tau`.
/// A score exactly at the threshold counts as positive.
pub fn predict(probs: &Tensor, tau: f64) -> Result<Vec<u8>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MwError::Config(format!(
            "decision threshold must lie strictly inside (0, 1), got {tau}"
        )));
    }
    if probs.cols() != 2 {
        return Err(MwError::dim(
            "predict",
            format!("expected two-class probabilities, got {} columns", probs.cols()),
        ));
    }
    Ok((0..probs.rows())
        .map(|r| u8::from(probs.get(r, 1) >= tau))
        .collect())
}

/// One scored test record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub label: u8,
    /// Positive-class probability.
    pub score: f64,
    pub pred: u8,
}

/// Runs inference over a whole split in deterministic (unshuffled) batch
/// order and scores it. Returns the metric report plus per-record
/// predictions in dataset order.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &Dataset,
    tau: f64,
    batch_size: usize,
    opts: ForwardOptions,
) -> Result<(MetricsReport, Vec<Prediction>)> {
    let batches = make_batches(ds, batch_size, None)?;
    let mut rows = Vec::with_capacity(ds.len());
    for batch in &batches {
        let (g, pass) = run_forward(batch, params, cfg, opts)?;
        let out = materialize(&g, &pass);
        let preds = predict(&out.probs, tau)?;
        for (k, &idx) in batch.indices.iter().enumerate() {
            rows.push(Prediction {
                id: ds.records[idx].id.clone(),
                label: ds.records[idx].label,
                score: out.probs.get(k, 1),
                pred: preds[k],
            });
        }
    }
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let preds: Vec<u8> = rows.iter().map(|r| r.pred).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let report = metrics::report(&preds, Some(&scores), &labels)?;
    Ok((report, rows))
}

/// On-disk payload encoding of a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    /// 17-significant-digit decimal text, one tensor row per line.
    Decimal,
    /// Raw little-endian `f64` payload after the text header.
    Raw64le,
}

impl CheckpointFormat {
    pub fn name(self) -> &'static str {
        match self {
            CheckpointFormat::Decimal => "decimal",
            CheckpointFormat::Raw64le => "raw64le",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decimal" => Ok(CheckpointFormat::Decimal),
            "raw64le" => Ok(CheckpointFormat::Raw64le),
            other => Err(MwError::Config(format!(
                "unknown checkpoint format {other:?} (expected decimal or raw64le)"
            ))),
        }
    }
}

fn cfg_header_lines(cfg: &ModelConfig) -> String {
    format!(
        "h={}\nfusion={}\nimgr={}\nadapter={}\ngmu_gate={}\n",
        cfg.h,
        cfg.fusion.name(),
        if cfg.imgr { "on" } else { "off" },
        if cfg.adapter { "on" } else { "off" },
        cfg.gmu_gate.name(),
    )
}

/// Writes a versioned checkpoint: magic + format tag, config echo, then
/// every tensor under its enumeration name in enumeration order.
pub fn save_checkpoint(
    params: &ModelParams,
    cfg: &ModelConfig,
    path: &Path,
    format: CheckpointFormat,
) -> Result<()> {
    params.validate(cfg)?;
    let file = std::fs::File::create(path).map_err(|e| MwError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| MwError::io(path, e);

    write!(w, "{CHECKPOINT_MAGIC},format={}\n{}", format.name(), cfg_header_lines(cfg))
        .map_err(io_err)?;
    match format {
        CheckpointFormat::Decimal => {
            for (name, t) in params.named_tensors() {
                writeln!(w, "tensor,{name},{},{}", t.rows(), t.cols()).map_err(io_err)?;
                for r in 0..t.rows() {
                    let line: Vec<String> = t.row(r).iter().map(|v| format_f64(*v)).collect();
                    writeln!(w, "{}", line.join(",")).map_err(io_err)?;
                }
            }
        }
        CheckpointFormat::Raw64le => {
            for (name, t) in params.named_tensors() {
                writeln!(w, "tensor,{name},{},{}", t.rows(), t.cols()).map_err(io_err)?;
            }
            writeln!(w, "payload").map_err(io_err)?;
            for (_, t) in params.named_tensors() {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes()).map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Expected `(name, rows, cols)` sequence for a config, mirroring
/// [`ModelParams::named_tensors`].
fn expected_tensors(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let (h, d) = (cfg.h, cfg.d());
    let mut out = Vec::new();
    if cfg.adapter {
        out.push(("adapter_t".to_string(), h, h));
        out.push(("adapter_v".to_string(), h, h));
    }
    match cfg.fusion {
        FusionKind::Concat => {}
        FusionKind::Mfb => {
            out.push(("fusion.u".to_string(), h, d));
            out.push(("fusion.v".to_string(), h, d));
        }
        FusionKind::Gmu => {
            out.push(("fusion.u_t".to_string(), h, d));
            out.push(("fusion.u_v".to_string(), h, d));
            out.push(("fusion.u_z".to_string(), 2 * h, d));
        }
    }
    if cfg.imgr {
        for n in ["w_phi", "w_gamma", "w_g", "w_r"] {
            out.push((format!("imgr.{n}"), d, d));
        }
    }
    out.push(("classifier.w_c".to_string(), d, 2));
    out
}

/// Rebuilds a parameter bundle from tensors listed in enumeration order —
/// the inverse of [`ModelParams::named_tensors`]. Checkpoint loading and
/// gradient checking both lean on it.
pub fn params_from_tensors(cfg: &ModelConfig, mut tensors: Vec<Tensor>) -> Result<ModelParams> {
    tensors.reverse(); // pop() now yields enumeration order
    let mut next = || {
        tensors
            .pop()
            .ok_or_else(|| MwError::Data("checkpoint is missing tensors".to_string()))
    };
    let (adapter_t, adapter_v) = if cfg.adapter {
        (Some(next()?), Some(next()?))
    } else {
        (None, None)
    };
    let fusion = match cfg.fusion {
        FusionKind::Concat => FusionParams::Concat,
        FusionKind::Mfb => FusionParams::Mfb {
            u: next()?,
            v: next()?,
        },
        FusionKind::Gmu => FusionParams::Gmu {
            u_t: next()?,
            u_v: next()?,
            u_z: next()?,
        },
    };
    let imgr = if cfg.imgr {
        Some(ImgrParams {
            w_phi: next()?,
            w_gamma: next()?,
            w_g: next()?,
            w_r: next()?,
        })
    } else {
        None
    };
    let w_c = next()?;
    let params = ModelParams {
        adapter_t,
        adapter_v,
        fusion,
        imgr,
        w_c,
    };
    params.validate(cfg)?;
    Ok(params)
}

/// Reads a checkpoint back, validating magic, format tag, config echo,
/// tensor names, order, shapes, and payload size.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bytes = std::fs::read(path).map_err(|e| MwError::io(path, e))?;
    let bad = |msg: String| MwError::Data(format!("{}: {msg}", path.display()));

    // Split off the raw payload first if one is present, since it is not
    // valid UTF-8. The text section always ends at the `payload` marker.
    let marker: &[u8] = b"\npayload\n";
    let (text, payload): (&[u8], Option<&[u8]>) =
        match bytes.windows(marker.len()).position(|w| w == marker) {
            Some(pos) => (&bytes[..pos + 1], Some(&bytes[pos + marker.len()..])),
            None => (&bytes[..], None),
        };
    let text = std::str::from_utf8(text)
        .map_err(|_| bad("checkpoint header is not valid UTF-8".to_string()))?;
    let mut lines = text.lines().peekable();

    // Magic and format tag.
    let first = lines
        .next()
        .ok_or_else(|| bad("empty checkpoint".to_string()))?;
    let format = first
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|r| r.strip_prefix(",format="))
        .ok_or_else(|| {
            bad(format!(
                "expected '{CHECKPOINT_MAGIC},format=<tag>' header, got {first:?}"
            ))
        })?;
    let format = CheckpointFormat::parse(format)
        .map_err(|e| bad(e.to_string()))?;
    if matches!(format, CheckpointFormat::Raw64le) && payload.is_none() {
        return Err(bad("raw64le checkpoint has no payload section".to_string()));
    }
    if matches!(format, CheckpointFormat::Decimal) && payload.is_some() {
        return Err(bad("decimal checkpoint has an unexpected payload section".to_string()));
    }

    // Config echo, fixed key order.
    let mut cfg_val = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing config line {key}")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected '{key}=<value>', got {line:?}")))
    };
    let h: usize = cfg_val("h")?
        .parse()
        .map_err(|_| bad("invalid h in config echo".to_string()))?;
    let fusion = FusionKind::parse(&cfg_val("fusion")?)?;
    let imgr = match cfg_val("imgr")?.as_str() {
        "on" => true,
        "off" => false,
        other => return Err(bad(format!("invalid imgr flag {other:?}"))),
    };
    let adapter = match cfg_val("adapter")?.as_str() {
        "on" => true,
        "off" => false,
        other => return Err(bad(format!("invalid adapter flag {other:?}"))),
    };
    let gmu_gate = GmuGate::parse(&cfg_val("gmu_gate")?)?;
    let cfg = ModelConfig {
        h,
        fusion,
        imgr,
        adapter,
        gmu_gate,
    };
    cfg.validate()?;

    // Tensor declarations (and, for decimal, the interleaved values).
    let expected = expected_tensors(&cfg);
    let mut tensors: Vec<Tensor> = Vec::with_capacity(expected.len());
    let mut shapes: Vec<(usize, usize)> = Vec::with_capacity(expected.len());
    for (name, rows, cols) in &expected {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing tensor declaration for {name}")))?;
        let want = format!("tensor,{name},{rows},{cols}");
        if line != want {
            return Err(bad(format!("expected {want:?}, got {line:?}")));
        }
        shapes.push((*rows, *cols));
        if matches!(format, CheckpointFormat::Decimal) {
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..*rows {
                let row = lines
                    .next()
                    .ok_or_else(|| bad(format!("{name}: missing row {r}")))?;
                let vals: Vec<&str> = row.split(',').collect();
                if vals.len() != *cols {
                    return Err(bad(format!(
                        "{name}: row {r} has {} values, expected {cols}",
                        vals.len()
                    )));
                }
                for v in vals {
                    let x: f64 = v
                        .parse()
                        .map_err(|_| bad(format!("{name}: invalid float {v:?}")))?;
                    data.push(x);
                }
            }
            tensors.push(Tensor::from_vec(*rows, *cols, data)?);
        }
    }
    if let Some(extra) = lines.next() {
        if !extra.is_empty() {
            return Err(bad(format!("unexpected trailing content {extra:?}")));
        }
    }

    if let Some(payload) = payload {
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if payload.len() != total * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                total * 8
            )));
        }
        let mut offset = 0;
        for (rows, cols) in &shapes {
            let n = rows * cols;
            let data: Vec<f64> = payload[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            offset += n * 8;
            tensors.push(Tensor::from_vec(*rows, *cols, data)?);
        }
    }

    let params = params_from_tensors(&cfg, tensors)?;
    Ok((params, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::dataio::{generate_synthetic, SynthConfig};
    use std::path::PathBuf;

    fn tmp_path(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mw-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn small_data(h: usize) -> Dataset {
        let (train, _, _) = generate_synthetic(&SynthConfig {
            h,
            n_train: 12,
            n_val: 1,
            n_test: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        train
    }

    fn all_cfgs(h: usize) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for fusion in [FusionKind::Concat, FusionKind::Mfb, FusionKind::Gmu] {
            for imgr in [false, true] {
                for adapter in [false, true] {
                    out.push(ModelConfig {
                        h,
                        fusion,
                        imgr,
                        adapter,
                        gmu_gate: GmuGate::Visual,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn forward_shapes_are_consistent_across_all_configs() {
        let ds = small_data(3);
        let batch = &make_batches(&ds, 5, None).unwrap()[0];
        for cfg in all_cfgs(3) {
            let params = ModelParams::init(&cfg, 1).unwrap();
            let (g, pass) = run_forward(batch, &params, &cfg, ForwardOptions::default()).unwrap();
            let out = materialize(&g, &pass);
            let (m, d) = (5, cfg.d());
            assert_eq!(out.fused.shape(), (m, d));
            assert_eq!(out.refined.shape(), (m, d));
            assert_eq!(out.logits.shape(), (m, 2));
            assert_eq!(out.probs.shape(), (m, 2));
            assert_eq!(out.affinity.is_some(), cfg.imgr);
            if let Some(aff) = &out.affinity {
                assert_eq!(aff.shape(), (m, m));
            }
            for r in 0..m {
                let s: f64 = out.probs.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn without_imgr_refined_is_the_same_tensor_as_fused() {
        let ds = small_data(3);
        let batch = &make_batches(&ds, 4, None).unwrap()[0];
        let cfg = ModelConfig {
            imgr: false,
            h: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 2).unwrap();
        let (g, pass) = run_forward(batch, &params, &cfg, ForwardOptions::default()).unwrap();
        assert_eq!(pass.fused, pass.refined);
        assert!(pass.affinity.is_none());
        let out = materialize(&g, &pass);
        assert_eq!(out.fused.data(), out.refined.data());
    }

    #[test]
    fn identity_adapters_do_not_change_the_forward_values() {
        let ds = small_data(4);
        let batch = &make_batches(&ds, 6, None).unwrap()[0];
        let with = ModelConfig {
            h: 4,
            adapter: true,
            ..ModelConfig::default()
        };
        let without = ModelConfig {
            h: 4,
            adapter: false,
            ..ModelConfig::default()
        };
        // Same seed: the adapter draws nothing from the stream, so the
        // remaining parameters coincide.
        let pw = ModelParams::init(&with, 3).unwrap();
        let po = ModelParams::init(&without, 3).unwrap();
        let (gw, passw) = run_forward(batch, &pw, &with, ForwardOptions::default()).unwrap();
        let (go, passo) = run_forward(batch, &po, &without, ForwardOptions::default()).unwrap();
        let a = materialize(&gw, &passw);
        let b = materialize(&go, &passo);
        for (x, y) in a.logits.data().iter().zip(b.logits.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn mismatched_batch_width_names_the_input_stage() {
        let ds = small_data(3);
        let batch = &make_batches(&ds, 4, None).unwrap()[0];
        let cfg = ModelConfig {
            h: 5,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let err = run_forward(batch, &params, &cfg, ForwardOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("input") && msg.contains("h=5"), "{msg}");
    }

    #[test]
    fn params_config_disagreement_is_a_config_error() {
        let cfg_imgr = ModelConfig::default();
        let cfg_plain = ModelConfig {
            imgr: false,
            ..cfg_imgr
        };
        let params_imgr = ModelParams::init(&cfg_imgr, 1).unwrap();
        assert!(matches!(
            params_imgr.validate(&cfg_plain).unwrap_err(),
            MwError::Config(_)
        ));
        let params_plain = ModelParams::init(&cfg_plain, 1).unwrap();
        assert!(matches!(
            params_plain.validate(&cfg_imgr).unwrap_err(),
            MwError::Config(_)
        ));
    }

    #[test]
    fn enumeration_order_is_stable_and_fully_qualified() {
        let cfg = ModelConfig {
            h: 2,
            fusion: FusionKind::Gmu,
            imgr: true,
            adapter: true,
            gmu_gate: GmuGate::Visual,
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let names: Vec<String> = params
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(
            names,
            vec![
                "adapter_t",
                "adapter_v",
                "fusion.u_t",
                "fusion.u_v",
                "fusion.u_z",
                "imgr.w_phi",
                "imgr.w_gamma",
                "imgr.w_g",
                "imgr.w_r",
                "classifier.w_c",
            ]
        );
        let mut params = params;
        let mut_names: Vec<String> = params
            .named_tensors_mut()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn scaling_the_classifier_preserves_argmax_decisions() {
        let ds = small_data(3);
        let batch = &make_batches(&ds, 8, None).unwrap()[0];
        let cfg = ModelConfig {
            h: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 7).unwrap();
        let argmax = |logits: &Tensor| -> Vec<usize> {
            (0..logits.rows())
                .map(|r| if logits.get(r, 1) > logits.get(r, 0) { 1 } else { 0 })
                .collect()
        };
        let (g, pass) = run_forward(batch, &params, &cfg, ForwardOptions::default()).unwrap();
        let base = argmax(&materialize(&g, &pass).logits);

        let mut scaled = params;
        for v in scaled.w_c.data_mut() {
            *v *= 3.7;
        }
        let (g2, pass2) = run_forward(batch, &scaled, &cfg, ForwardOptions::default()).unwrap();
        assert_eq!(base, argmax(&materialize(&g2, &pass2).logits));
    }

    #[test]
    fn loss_from_probs_agrees_with_the_fused_loss_op() {
        let ds = small_data(4);
        let batch = &make_batches(&ds, 7, None).unwrap()[0];
        let cfg = ModelConfig {
            h: 4,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 5).unwrap();
        let (mut g, pass) = run_forward(batch, &params, &cfg, ForwardOptions::default()).unwrap();
        let (loss_id, probs) = g.softmax_xent(pass.logits, &batch.labels).unwrap();
        let fused_loss = g.value(loss_id).get(0, 0);
        let recomputed = loss_from_probs(&probs, &batch.labels).unwrap();
        assert!(
            (fused_loss - recomputed).abs() < 1e-12,
            "{fused_loss} vs {recomputed}"
        );
    }

    #[test]
    fn predict_treats_a_tied_score_as_positive() {
        let probs = Tensor::from_rows(&[vec![0.343, 0.657], vec![0.6, 0.4]]).unwrap();
        let preds = predict(&probs, 0.657).unwrap();
        assert_eq!(preds, vec![1, 0]);
        assert!(predict(&probs, 0.0).is_err());
        assert!(predict(&probs, 1.0).is_err());
    }

    #[test]
    fn permuting_a_batch_permutes_the_outputs() {
        let ds = small_data(3);
        let cfg = ModelConfig {
            h: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 11).unwrap();
        let batches = make_batches(&ds, 6, None).unwrap();
        let batch = &batches[0];

        // Reverse the batch by hand.
        let m = batch.len();
        let perm: Vec<usize> = (0..m).rev().collect();
        let rows_t: Vec<Vec<f64>> = perm.iter().map(|&i| batch.e_t.row(i).to_vec()).collect();
        let rows_v: Vec<Vec<f64>> = perm.iter().map(|&i| batch.e_v.row(i).to_vec()).collect();
        let permuted = Batch {
            indices: perm.iter().map(|&i| batch.indices[i]).collect(),
            e_t: Tensor::from_rows(&rows_t).unwrap(),
            e_v: Tensor::from_rows(&rows_v).unwrap(),
            labels: perm.iter().map(|&i| batch.labels[i]).collect(),
        };

        let (g1, p1) = run_forward(batch, &params, &cfg, ForwardOptions::default()).unwrap();
        let (g2, p2) = run_forward(&permuted, &params, &cfg, ForwardOptions::default()).unwrap();
        let a = materialize(&g1, &p1);
        let b = materialize(&g2, &p2);
        for r in 0..m {
            for c in 0..2 {
                let dev = (a.logits.get(perm[r], c) - b.logits.get(r, c)).abs();
                assert!(dev <= 1e-10, "logit deviation {dev}");
            }
        }
    }

    #[test]
    fn assembled_models_pass_gradient_checks() {
        let ds = small_data(3);
        let batch = make_batches(&ds, 6, None).unwrap()[0].clone();
        for fusion in [FusionKind::Concat, FusionKind::Mfb, FusionKind::Gmu] {
            let cfg = ModelConfig {
                h: 3,
                fusion,
                imgr: true,
                adapter: true,
                gmu_gate: GmuGate::Visual,
            };
            let params = ModelParams::init(&cfg, 1).unwrap();
            let named: Vec<(String, Tensor)> = params
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect();
            let batch = batch.clone();
            let build = move |g: &mut Graph, ps: &[(String, Tensor)]| {
                // Rebuild a parameter bundle from the perturbed tensors.
                let tensors: Vec<Tensor> = ps.iter().map(|(_, t)| t.clone()).collect();
                let rebuilt = params_from_tensors(&cfg, tensors)?;
                let pass = forward(g, &batch, &rebuilt, &cfg, ForwardOptions::default())?;
                let (loss, _) = g.softmax_xent(pass.logits, &batch.labels)?;
                Ok((loss, pass.param_ids))
            };
            let report = grad_check(&named, &build, 1e-6, 1e-4, 42).unwrap();
            assert!(
                report.passed,
                "{fusion:?}: max rel {} at {:?}",
                report.max_rel_error, report.worst_entry
            );
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly_in_both_formats() {
        for (fmt, fname) in [
            (CheckpointFormat::Decimal, "ck-dec.mwcp"),
            (CheckpointFormat::Raw64le, "ck-raw.mwcp"),
        ] {
            let cfg = ModelConfig {
                h: 3,
                fusion: FusionKind::Gmu,
                imgr: true,
                adapter: true,
                gmu_gate: GmuGate::Text,
            };
            let params = ModelParams::init(&cfg, 9).unwrap();
            let path = tmp_path(fname);
            save_checkpoint(&params, &cfg, &path, fmt).unwrap();
            let (loaded, loaded_cfg) = load_checkpoint(&path).unwrap();
            assert_eq!(loaded_cfg, cfg);
            for ((_, a), (_, b)) in params.named_tensors().iter().zip(loaded.named_tensors()) {
                assert_eq!(a.shape(), b.shape());
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn checkpoint_header_echoes_the_config_in_readable_text() {
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let path = tmp_path("ck-head.mwcp");
        save_checkpoint(&params, &cfg, &path, CheckpointFormat::Decimal).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let head: Vec<&str> = content.lines().take(7).collect();
        assert_eq!(
            head,
            vec![
                "MWCP1,format=decimal",
                "h=8",
                "fusion=mfb",
                "imgr=on",
                "adapter=off",
                "gmu_gate=visual",
                "tensor,fusion.u,8,16",
            ]
        );
    }

    #[test]
    fn corrupted_checkpoints_are_rejected_with_data_errors() {
        let cfg = ModelConfig {
            h: 2,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let path = tmp_path("ck-ok.mwcp");
        save_checkpoint(&params, &cfg, &path, CheckpointFormat::Decimal).unwrap();
        let good = std::fs::read_to_string(&path).unwrap();

        let cases: Vec<(String, &str)> = vec![
            (good.replacen("MWCP1", "MWCP9", 1), "magic"),
            (good.replacen("format=decimal", "format=zip", 1), "format"),
            (good.replacen("fusion.u", "fusion.q", 1), "tensor name"),
            (good.replacen("tensor,fusion.u,2,4", "tensor,fusion.u,4,2", 1), "shape"),
            (
                good.lines().take(8).collect::<Vec<_>>().join("\n"),
                "truncation",
            ),
        ];
        for (content, what) in cases {
            let p = tmp_path("ck-bad.mwcp");
            std::fs::write(&p, content).unwrap();
            let err = load_checkpoint(&p).unwrap_err();
            assert!(
                err.exit_code() != 0,
                "corrupted checkpoint ({what}) was accepted"
            );
        }

        // Truncated raw payload.
        let praw = tmp_path("ck-raw-t.mwcp");
        save_checkpoint(&params, &cfg, &praw, CheckpointFormat::Raw64le).unwrap();
        let mut bytes = std::fs::read(&praw).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&praw, &bytes).unwrap();
        assert!(load_checkpoint(&praw).is_err());
    }

    #[test]
    fn evaluate_scores_a_split_in_dataset_order() {
        let ds = small_data(3);
        let cfg = ModelConfig {
            h: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 2).unwrap();
        let (report, rows) = evaluate(&params, &cfg, &ds, 0.5, 5, ForwardOptions::default()).unwrap();
        assert_eq!(report.n, ds.len());
        assert_eq!(rows.len(), ds.len());
        assert!(report.auc.is_some());
        for (row, rec) in rows.iter().zip(&ds.records) {
            assert_eq!(row.id, rec.id);
            assert_eq!(row.label, rec.label);
            assert_eq!(row.pred, u8::from(row.score >= 0.5));
            assert!((0.0..=1.0).contains(&row.score));
        }
    }
}
