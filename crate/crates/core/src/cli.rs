//! Command-line interface: verbs, artifact writers, exit-code mapping.
//!
//! Every verb writes a `manifest.txt` into the output directory before
//! doing anything else: the verb name, every resolved config key (sorted,
//! values verbatim), and the input paths. Artifacts never embed
//! timestamps or machine state, so rerunning a verb with identical inputs
//! reproduces every output byte for byte.
//!
//! Exit codes: 0 success; 1 data problems (malformed files, dimension
//! mismatches, failed gradient checks); 2 configuration or usage errors;
//! 3 training divergence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    affinity_study, batch_size_sweep, extract_features, linear_probe, pca,
    sign_inversion_ablation,
};
use crate::autodiff::{grad_check, Graph, Tensor, TensorId};
use crate::config::Config;
use crate::dataio::{format_f64, generate_synthetic, make_batches, Dataset, Split};
use crate::error::{MwError, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{
    evaluate, forward, load_checkpoint, params_from_tensors, save_checkpoint, ForwardOptions,
    ModelParams, Prediction,
};
use crate::train::train;

#[derive(Debug, Parser)]
#[command(
    name = "memeweaver",
    about = "Deterministic multimodal meme-classification workbench",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

/// Flags shared by every verb.
#[derive(Debug, Args)]
pub struct Common {
    /// Config file of key=value lines (# comments allowed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable; later wins).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Directory all artifacts are written into.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Shorthand for --set seed=N (applied last).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Generate a synthetic three-split benchmark as embedding files.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Report record counts and label balance of one embedding file.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Embedding file to inspect.
        #[arg(long)]
        data: PathBuf,
        /// Which split the file holds: train, validation, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train a model, retaining the best validation epoch.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training split embedding file.
        #[arg(long)]
        train: PathBuf,
        /// Validation split embedding file.
        #[arg(long)]
        val: PathBuf,
    },
    /// Score a checkpoint on a split at the configured threshold.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (architecture comes from the file).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embedding file to score.
        #[arg(long)]
        data: PathBuf,
    },
    /// Pick the decision threshold maximizing macro-F1 on a split.
    TuneThreshold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to tune on (normally validation).
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate one checkpoint at several inference batch sizes.
    SweepBatch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Correlate learned pair affinities with fused-row cosine similarity.
    AnalyzeAffinity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare normal and sign-inverted message passing on one split.
    InvertAblation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Cross-validated linear probe and PCA spectrum of representations.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Verify the assembled model's analytic gradients numerically.
    GradCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Paired-bootstrap significance between two prediction files.
    Significance {
        #[command(flatten)]
        common: Common,
        /// Baseline system's predictions.csv.
        #[arg(long)]
        baseline: PathBuf,
        /// Candidate system's predictions.csv.
        #[arg(long)]
        candidate: PathBuf,
    },
}

/// Parses arguments, runs the verb, and maps errors to exit codes.
/// (Usage errors from argument parsing exit with code 2 via clap.)
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli.verb) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(verb: &Verb) -> Result<()> {
    match verb {
        Verb::GenSynth { common } => gen_synth(common),
        Verb::Stats {
            common,
            data,
            split,
        } => stats(common, data, split),
        Verb::Train { common, train, val } => train_verb(common, train, val),
        Verb::Evaluate {
            common,
            checkpoint,
            data,
        } => evaluate_verb(common, checkpoint, data),
        Verb::TuneThreshold {
            common,
            checkpoint,
            data,
        } => tune_threshold_verb(common, checkpoint, data),
        Verb::SweepBatch {
            common,
            checkpoint,
            data,
        } => sweep_batch_verb(common, checkpoint, data),
        Verb::AnalyzeAffinity {
            common,
            checkpoint,
            data,
        } => analyze_affinity_verb(common, checkpoint, data),
        Verb::InvertAblation {
            common,
            checkpoint,
            data,
        } => invert_ablation_verb(common, checkpoint, data),
        Verb::Probe {
            common,
            checkpoint,
            data,
        } => probe_verb(common, checkpoint, data),
        Verb::GradCheck { common } => grad_check_verb(common),
        Verb::Significance {
            common,
            baseline,
            candidate,
        } => significance_verb(common, baseline, candidate),
    }
}

/// Resolves the layered config, creates the output directory, and writes
/// the manifest. Every verb goes through here first.
fn setup(common: &Common, verb: &str, inputs: &[(&str, &Path)]) -> Result<Config> {
    let mut sets = common.sets.clone();
    if let Some(seed) = common.seed {
        sets.push(format!("seed={seed}"));
    }
    let cfg = Config::resolve(common.config.as_deref(), &sets)?;
    std::fs::create_dir_all(&common.out).map_err(|e| MwError::io(&common.out, e))?;
    let mut manifest = format!("verb={verb}\n");
    manifest.push_str(&cfg.manifest_lines());
    for (name, path) in inputs {
        manifest.push_str(&format!("input.{name}={}\n", path.display()));
    }
    write_text(&common.out.join("manifest.txt"), &manifest)?;
    Ok(cfg)
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| MwError::io(path, e))
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(MwError::Usage(format!(
            "unknown split {other:?} (expected train, validation, or test)"
        ))),
    }
}

fn metrics_block(report: &MetricsReport) -> String {
    let auc = match report.auc {
        Some(a) => format_f64(a),
        None => "none".to_string(),
    };
    format!(
        "n={}\naccuracy={}\nmacro_f1={}\nauc={auc}\n",
        report.n,
        format_f64(report.accuracy),
        format_f64(report.macro_f1),
    )
}

fn write_predictions(path: &Path, rows: &[Prediction]) -> Result<()> {
    let mut out = String::from("id,label,score,pred\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.id,
            r.label,
            format_f64(r.score),
            r.pred
        ));
    }
    write_text(path, &out)
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| MwError::io(path, e))?;
    let bad = |lineno: usize, msg: String| {
        MwError::Data(format!("{}:{}: {msg}", path.display(), lineno))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "id,label,score,pred")) => {}
        Some((_, other)) => {
            return Err(bad(1, format!("expected header id,label,score,pred, got {other:?}")))
        }
        None => return Err(bad(1, "empty predictions file".to_string())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, got {}", parts.len())));
        }
        let label: u8 = parts[1]
            .parse()
            .ok()
            .filter(|l| *l <= 1)
            .ok_or_else(|| bad(i + 1, format!("invalid label {:?}", parts[1])))?;
        let score: f64 = parts[2]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| bad(i + 1, format!("invalid score {:?}", parts[2])))?;
        let pred: u8 = parts[3]
            .parse()
            .ok()
            .filter(|p| *p <= 1)
            .ok_or_else(|| bad(i + 1, format!("invalid prediction {:?}", parts[3])))?;
        rows.push(Prediction {
            id: parts[0].to_string(),
            label,
            score,
            pred,
        });
    }
    if rows.is_empty() {
        return Err(MwError::Data(format!(
            "{}: no prediction rows",
            path.display()
        )));
    }
    Ok(rows)
}

fn gen_synth(common: &Common) -> Result<()> {
    let cfg = setup(common, "gen-synth", &[])?;
    let (train, val, test) = generate_synthetic(&cfg.synth()?)?;
    for ds in [&train, &val, &test] {
        let path = common.out.join(format!("{}.mef", ds.split.name()));
        ds.save(&path)?;
        let s = ds.stats();
        println!(
            "{}: n={} positives={} ({:.2}%)",
            ds.split.name(),
            s.n,
            s.positives,
            s.positive_pct
        );
    }
    Ok(())
}

fn stats(common: &Common, data: &Path, split: &str) -> Result<()> {
    let cfg = setup(common, "stats", &[("data", data)])?;
    let _ = &cfg; // stats needs no config keys beyond the manifest echo
    let ds = Dataset::load(data, parse_split(split)?)?;
    let s = ds.stats();
    let block = format!(
        "split={}\nn={}\nh={}\npositives={}\npositive_pct={}\n",
        ds.split.name(),
        s.n,
        ds.h,
        s.positives,
        format_f64(s.positive_pct)
    );
    write_text(&common.out.join("stats.txt"), &block)?;
    println!(
        "{}: n={} h={} positives={} ({:.2}%)",
        ds.split.name(),
        s.n,
        ds.h,
        s.positives,
        s.positive_pct
    );
    Ok(())
}

fn train_verb(common: &Common, train_path: &Path, val_path: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "train",
        &[("train", train_path), ("val", val_path)],
    )?;
    let model_cfg = cfg.model()?;
    let tcfg = cfg.train()?;
    let train_ds = Dataset::load(train_path, Split::Train)?;
    let val_ds = Dataset::load(val_path, Split::Validation)?;
    let params = ModelParams::init(&model_cfg, tcfg.seed)?;
    let report = train(params, &model_cfg, &tcfg, &train_ds, &val_ds)?;

    save_checkpoint(
        &report.final_params,
        &model_cfg,
        &common.out.join("checkpoint.mwcp"),
        cfg.checkpoint_format()?,
    )?;

    let total_steps = report.curve.len();
    let mut curve = String::from("step,normalized_step,loss\n");
    for p in &report.curve {
        curve.push_str(&format!(
            "{},{},{}\n",
            p.step,
            format_f64(p.step as f64 / total_steps as f64),
            format_f64(p.loss)
        ));
    }
    write_text(&common.out.join("loss_curve.csv"), &curve)?;

    let mut summary = format!(
        "epochs={}\nsteps={}\nbest_epoch={}\nbest_val_macro_f1={}\ntuned_threshold={}\ntuned_val_macro_f1={}\n",
        tcfg.epochs,
        report.curve.len(),
        report.best_epoch,
        format_f64(report.best_val_f1),
        format_f64(report.tuned_tau),
        format_f64(report.tuned_val_f1),
    );
    for (i, f1) in report.epoch_val_f1.iter().enumerate() {
        summary.push_str(&format!("epoch_{}_val_macro_f1={}\n", i + 1, format_f64(*f1)));
    }
    write_text(&common.out.join("train_report.txt"), &summary)?;
    write_text(
        &common.out.join("threshold.txt"),
        &format!(
            "threshold={}\nval_macro_f1={}\n",
            format_f64(report.tuned_tau),
            format_f64(report.tuned_val_f1)
        ),
    )?;
    println!(
        "trained {} epochs; best epoch {} (val macro-F1 {:.2}); tuned threshold {:.4} (val macro-F1 {:.2})",
        tcfg.epochs, report.best_epoch, report.best_val_f1, report.tuned_tau, report.tuned_val_f1
    );
    Ok(())
}

fn evaluate_verb(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "evaluate",
        &[("checkpoint", checkpoint), ("data", data)],
    )?;
    // The checkpoint is authoritative for the architecture; the config
    // supplies runtime choices (threshold, inference batch size).
    let (params, model_cfg) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(data, Split::Test)?;
    let tau = cfg.threshold()?;
    let (report, rows) = evaluate(
        &params,
        &model_cfg,
        &ds,
        tau,
        cfg.usize_of("infer_batch")?,
        ForwardOptions::default(),
    )?;
    write_text(
        &common.out.join("metrics.txt"),
        &format!("{}threshold={}\n", metrics_block(&report), cfg.raw("threshold")),
    )?;
    write_predictions(&common.out.join("predictions.csv"), &rows)?;
    println!(
        "n={} accuracy={:.2} macro_f1={:.2} auc={}",
        report.n,
        report.accuracy,
        report.macro_f1,
        report
            .auc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "none".to_string())
    );
    Ok(())
}

fn tune_threshold_verb(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "tune-threshold",
        &[("checkpoint", checkpoint), ("data", data)],
    )?;
    let (params, model_cfg) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(data, Split::Validation)?;
    // Scores do not depend on the threshold; 0.5 is just a valid cut.
    let (_, rows) = evaluate(
        &params,
        &model_cfg,
        &ds,
        0.5,
        cfg.usize_of("infer_batch")?,
        ForwardOptions::default(),
    )?;
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let (tau, f1) = metrics::tune_threshold(&scores, &labels)?;
    write_text(
        &common.out.join("threshold.txt"),
        &format!(
            "threshold={}\nval_macro_f1={}\n",
            format_f64(tau),
            format_f64(f1)
        ),
    )?;
    println!("tuned threshold {tau:.4} (macro-F1 {f1:.2})");
    Ok(())
}

fn sweep_batch_verb(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "sweep-batch",
        &[("checkpoint", checkpoint), ("data", data)],
    )?;
    let (params, model_cfg) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(data, Split::Test)?;
    let sweep = batch_size_sweep(
        &params,
        &model_cfg,
        &ds,
        cfg.threshold()?,
        &cfg.usize_list("sweep_sizes")?,
    )?;
    let mut csv = String::from("batch_size,n,accuracy,macro_f1,auc\n");
    for row in &sweep.rows {
        let auc = row.report.auc.map(format_f64).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{auc}\n",
            row.batch_size,
            row.report.n,
            format_f64(row.report.accuracy),
            format_f64(row.report.macro_f1),
        ));
    }
    write_text(&common.out.join("sweep.csv"), &csv)?;
    write_text(
        &common.out.join("sweep_summary.txt"),
        &format!(
            "sizes={}\nf1_spread={}\nacc_spread={}\n",
            sweep
                .rows
                .iter()
                .map(|r| r.batch_size.to_string())
                .collect::<Vec<_>>()
                .join(","),
            format_f64(sweep.f1_spread),
            format_f64(sweep.acc_spread)
        ),
    )?;
    println!(
        "swept {} sizes: macro-F1 spread {:.4}, accuracy spread {:.4}",
        sweep.rows.len(),
        sweep.f1_spread,
        sweep.acc_spread
    );
    Ok(())
}

fn analyze_affinity_verb(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "analyze-affinity",
        &[("checkpoint", checkpoint), ("data", data)],
    )?;
    let (params, model_cfg) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(data, Split::Test)?;
    let study = affinity_study(&params, &model_cfg, &ds, cfg.usize_of("infer_batch")?)?;

    let mut csv = String::from("id_i,id_j,label_i,label_j,class,cos_sim,affinity\n");
    for p in &study.pairs {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.id_i,
            p.id_j,
            p.label_i,
            p.label_j,
            p.class().name(),
            format_f64(p.cos_sim),
            format_f64(p.affinity)
        ));
    }
    write_text(&common.out.join("affinity_pairs.csv"), &csv)?;

    let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_else(|| "none".to_string());
    write_text(
        &common.out.join("affinity_summary.txt"),
        &format!(
            "pairs={}\nskipped={}\npearson_r={}\nmean_affinity_same={}\nmean_affinity_mixed={}\n",
            study.pairs.len(),
            study.skipped,
            format_f64(study.pearson_r),
            opt(study.mean_affinity_same),
            opt(study.mean_affinity_mixed)
        ),
    )?;
    println!(
        "{} pairs ({} skipped): cosine-affinity Pearson r = {:.4}",
        study.pairs.len(),
        study.skipped,
        study.pearson_r
    );
    Ok(())
}

fn invert_ablation_verb(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "invert-ablation",
        &[("checkpoint", checkpoint), ("data", data)],
    )?;
    let (params, model_cfg) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(data, Split::Test)?;
    let ab = sign_inversion_ablation(
        &params,
        &model_cfg,
        &ds,
        cfg.threshold()?,
        cfg.usize_of("infer_batch")?,
    )?;
    write_text(
        &common.out.join("ablation.txt"),
        &format!(
            "normal_accuracy={}\nnormal_macro_f1={}\ninverted_accuracy={}\ninverted_macro_f1={}\nf1_drop={}\n",
            format_f64(ab.normal.accuracy),
            format_f64(ab.normal.macro_f1),
            format_f64(ab.inverted.accuracy),
            format_f64(ab.inverted.macro_f1),
            format_f64(ab.f1_drop)
        ),
    )?;
    println!(
        "macro-F1 {:.2} normal vs {:.2} inverted (drop {:.2} points)",
        ab.normal.macro_f1, ab.inverted.macro_f1, ab.f1_drop
    );
    Ok(())
}

fn probe_verb(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "probe",
        &[("checkpoint", checkpoint), ("data", data)],
    )?;
    let (params, model_cfg) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(data, Split::Test)?;
    let stage = cfg.probe_stage()?;
    let features = extract_features(
        &params,
        &model_cfg,
        &ds,
        cfg.usize_of("infer_batch")?,
        stage,
    )?;
    let labels = ds.labels();
    let probe = linear_probe(
        &features,
        &labels,
        cfg.usize_of("probe_folds")?,
        cfg.u64_of("seed")?,
    )?;
    let spectrum = pca(&features, cfg.usize_of("pca_k")?)?;

    let mut csv = String::from("fold,accuracy,macro_f1\n");
    for f in &probe.folds {
        csv.push_str(&format!(
            "{},{},{}\n",
            f.fold,
            format_f64(f.accuracy),
            format_f64(f.macro_f1)
        ));
    }
    write_text(&common.out.join("probe_folds.csv"), &csv)?;

    let explained: Vec<String> = spectrum.explained.iter().map(|e| format_f64(*e)).collect();
    write_text(
        &common.out.join("probe_summary.txt"),
        &format!(
            "stage={}\nfolds={}\nmean_accuracy={}\nmean_macro_f1={}\npca_k={}\npca_explained={}\n",
            stage.name(),
            probe.folds.len(),
            format_f64(probe.mean_accuracy),
            format_f64(probe.mean_macro_f1),
            spectrum.explained.len(),
            explained.join(",")
        ),
    )?;
    println!(
        "{} probe: mean accuracy {:.2}, mean macro-F1 {:.2}",
        stage.name(),
        probe.mean_accuracy,
        probe.mean_macro_f1
    );
    Ok(())
}

fn grad_check_verb(common: &Common) -> Result<()> {
    let cfg = setup(common, "grad-check", &[])?;
    let model_cfg = cfg.model()?;
    let seed = cfg.u64_of("seed")?;

    // A small but representative batch from the configured generator.
    let mut synth = cfg.synth()?;
    synth.n_train = 12;
    synth.n_val = 1;
    synth.n_test = 1;
    let (mini, _, _) = generate_synthetic(&synth)?;
    let batch = make_batches(&mini, mini.len(), None)?.remove(0);

    let params = ModelParams::init(&model_cfg, seed)?;
    let named: Vec<(String, Tensor)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let build = |g: &mut Graph, ps: &[(String, Tensor)]| -> Result<(TensorId, Vec<TensorId>)> {
        let tensors: Vec<Tensor> = ps.iter().map(|(_, t)| t.clone()).collect();
        let rebuilt = params_from_tensors(&model_cfg, tensors)?;
        let pass = forward(g, &batch, &rebuilt, &model_cfg, ForwardOptions::default())?;
        let (loss, _) = g.softmax_xent(pass.logits, &batch.labels)?;
        Ok((loss, pass.param_ids))
    };
    let report = grad_check(
        &named,
        &build,
        cfg.f64_of("grad_step")?,
        cfg.f64_of("grad_tol")?,
        seed,
    )?;

    let worst = report
        .worst_entry
        .as_ref()
        .map(|(name, idx)| format!("{name}[{idx}]"))
        .unwrap_or_else(|| "none".to_string());
    write_text(
        &common.out.join("grad_check.txt"),
        &format!(
            "entries_checked={}\nmax_rel_error={}\ntol={}\nworst={worst}\npassed={}\n",
            report.entries_checked,
            format_f64(report.max_rel_error),
            format_f64(report.tol),
            if report.passed { "yes" } else { "no" }
        ),
    )?;
    println!(
        "checked {} entries: max relative error {:.3e} (tol {:.1e})",
        report.entries_checked, report.max_rel_error, report.tol
    );
    if !report.passed {
        return Err(MwError::Data(format!(
            "gradient check failed: max relative error {} at {worst} exceeds tol {}",
            report.max_rel_error, report.tol
        )));
    }
    Ok(())
}

fn significance_verb(common: &Common, baseline: &Path, candidate: &Path) -> Result<()> {
    let cfg = setup(
        common,
        "significance",
        &[("baseline", baseline), ("candidate", candidate)],
    )?;
    let rows_a = read_predictions(baseline)?;
    let rows_b = read_predictions(candidate)?;
    if rows_a.len() != rows_b.len() {
        return Err(MwError::Data(format!(
            "prediction files cover {} vs {} records; a paired test needs identical records",
            rows_a.len(),
            rows_b.len()
        )));
    }
    for (i, (a, b)) in rows_a.iter().zip(&rows_b).enumerate() {
        if a.id != b.id || a.label != b.label {
            return Err(MwError::Data(format!(
                "prediction files disagree at row {}: {}/{} vs {}/{}",
                i + 1,
                a.id,
                a.label,
                b.id,
                b.label
            )));
        }
    }
    let labels: Vec<u8> = rows_a.iter().map(|r| r.label).collect();
    let preds_a: Vec<u8> = rows_a.iter().map(|r| r.pred).collect();
    let preds_b: Vec<u8> = rows_b.iter().map(|r| r.pred).collect();

    let metric = cfg.bootstrap_metric()?;
    let sided = cfg.bootstrap_sided()?;
    let b = cfg.usize_of("bootstrap_b")?;
    let seed = cfg.u64_of("seed")?;
    // The candidate goes first: one-sided, a small p means the candidate
    // significantly improves on the baseline.
    let p = metrics::paired_bootstrap(&preds_b, &preds_a, &labels, metric, b, seed, sided)?;

    let score = |preds: &[u8]| -> Result<f64> {
        match metric {
            metrics::BootstrapMetric::Accuracy => metrics::accuracy(preds, &labels),
            metrics::BootstrapMetric::MacroF1 => metrics::macro_f1(preds, &labels),
        }
    };
    let score_a = score(&preds_a)?;
    let score_b = score(&preds_b)?;
    write_text(
        &common.out.join("significance.txt"),
        &format!(
            "metric={}\nsided={}\nb={b}\nn={}\nbaseline_score={}\ncandidate_score={}\np_value={}\n",
            cfg.raw("bootstrap_metric"),
            cfg.raw("bootstrap_sided"),
            labels.len(),
            format_f64(score_a),
            format_f64(score_b),
            format_f64(p)
        ),
    )?;
    println!(
        "baseline {:.2} vs candidate {:.2} ({}): p = {:.4}",
        score_a,
        score_b,
        cfg.raw("bootstrap_metric"),
        p
    );
    Ok(())
}
