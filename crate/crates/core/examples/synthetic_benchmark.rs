//! Headline comparison on the synthetic benchmark.
//!
//! Trains the full model with and without the inter-record graph block
//! across five seeds on the default recipe and prints the numbers the
//! test suite pins: macro-F1 gain over the ablation and over a logistic
//! regression on the raw concatenated embeddings, early-training loss,
//! the sign-inversion ablation, the inference batch-size sweep, and the
//! linear-probe separability of fused versus refined features.
//!
//! Run with `cargo run --release --example synthetic_benchmark`.
//! Optional arguments override the study recipe:
//! `synthetic_benchmark [fusion] [lr] [epochs] [train_batch] [infer_batch]`.

use memeweaver::analysis::{affinity_study, batch_size_sweep, linear_probe, sign_inversion_ablation};
use memeweaver::analysis::{concat_logistic_baseline, extract_features, FeatureStage};
use memeweaver::dataio::{generate_synthetic, Dataset, SynthConfig};
use memeweaver::fusion::FusionKind;
use memeweaver::model::{evaluate, ForwardOptions, ModelConfig, ModelParams};
use memeweaver::train::{train, TrainConfig, TrainReport};

struct Run {
    report: TrainReport,
    test_f1: f64,
}

fn train_once(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    test_ds: &Dataset,
) -> Run {
    let params = ModelParams::init(cfg, tcfg.seed).unwrap();
    let report = train(params, cfg, tcfg, train_ds, val_ds).unwrap();
    let (m, _) = evaluate(
        &report.final_params,
        cfg,
        test_ds,
        report.tuned_tau,
        tcfg.infer_batch,
        ForwardOptions::default(),
    )
    .unwrap();
    Run { report, test_f1: m.macro_f1 }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let fusion = args
        .get(1)
        .map(|s| FusionKind::parse(s).expect("fusion must be concat, mfb, or gmu"))
        .unwrap_or(FusionKind::Mfb);
    let lr: f64 = args.get(2).map(|s| s.parse().expect("lr")).unwrap_or(0.05);
    let epochs: usize = args.get(3).map(|s| s.parse().expect("epochs")).unwrap_or(3);
    let train_batch: usize =
        args.get(4).map(|s| s.parse().expect("train_batch")).unwrap_or(20);
    let infer_batch: usize =
        args.get(5).map(|s| s.parse().expect("infer_batch")).unwrap_or(41);
    println!(
        "fusion={} lr={lr} epochs={epochs} train_batch={train_batch} infer_batch={infer_batch}",
        fusion.name()
    );

    // The benchmark data is fixed; the seeds below vary only the model
    // initialization and the epoch shuffles.
    let (train_ds, val_ds, test_ds) = generate_synthetic(&SynthConfig::default()).unwrap();
    let base = concat_logistic_baseline(&train_ds, &test_ds).unwrap();
    println!(
        "concat-logistic reference: accuracy {:.2}, macro-F1 {:.2}",
        base.accuracy, base.macro_f1
    );

    let sweep_sizes = [1usize, 2, 4, 8, 16, 32, 64];
    println!(
        "{:>4} {:>7} | {:>8} {:>8} | {:>9} {:>9} | {:>7} | {:>7} {:>7} {:>7} | {:>7} {:>7}",
        "seed", "gain",
        "imgr-f1", "flat-f1",
        "loss@.4g", "loss@.4f",
        "invdrop",
        "swp@1", "swp@16", "swp@64",
        "prb-fus", "prb-ref",
    );
    for seed in 42..=46u64 {
        let cfg_on = ModelConfig { fusion, ..ModelConfig::default() };
        let cfg_off = ModelConfig { fusion, imgr: false, ..ModelConfig::default() };
        let tcfg =
            TrainConfig { seed, lr, epochs, train_batch, infer_batch, ..TrainConfig::default() };
        let on = train_once(&cfg_on, &tcfg, &train_ds, &val_ds, &test_ds);
        let off = train_once(&cfg_off, &tcfg, &train_ds, &val_ds, &test_ds);

        // Training loss at normalized step 0.4 (same index for both runs).
        let total = on.report.curve.len();
        let idx = ((0.4 * total as f64).round() as usize).clamp(1, total) - 1;
        let loss_on = on.report.curve[idx].loss;
        let loss_off = off.report.curve[idx].loss;

        let tau = on.report.tuned_tau;
        let inv = sign_inversion_ablation(
            &on.report.final_params,
            &cfg_on,
            &test_ds,
            tau,
            infer_batch,
        )
        .unwrap();
        let sweep =
            batch_size_sweep(&on.report.final_params, &cfg_on, &test_ds, tau, &sweep_sizes)
                .unwrap();
        let f1_at = |size: usize| {
            sweep
                .rows
                .iter()
                .find(|r| r.batch_size == size)
                .map(|r| r.report.macro_f1)
                .unwrap()
        };
        let off_sweep =
            batch_size_sweep(&off.report.final_params, &cfg_off, &test_ds, off.report.tuned_tau, &sweep_sizes)
                .unwrap();

        let labels = test_ds.labels();
        let fused =
            extract_features(&on.report.final_params, &cfg_on, &test_ds, infer_batch, FeatureStage::Fused)
                .unwrap();
        let refined =
            extract_features(&on.report.final_params, &cfg_on, &test_ds, infer_batch, FeatureStage::Refined)
                .unwrap();
        let probe_fused = linear_probe(&fused, &labels, 5, seed).unwrap();
        let probe_refined = linear_probe(&refined, &labels, 5, seed).unwrap();

        // Engagement diagnostics: how class-aligned the learned affinity
        // ended up, and how far the refinement weights moved.
        let study = affinity_study(&on.report.final_params, &cfg_on, &test_ds, infer_batch)
            .unwrap();
        let aff_gap = study.mean_affinity_same.unwrap_or(0.0)
            - study.mean_affinity_mixed.unwrap_or(0.0);
        let wg_norm = {
            let wg = &on.report.final_params.imgr.as_ref().unwrap().w_g;
            wg.data().iter().map(|v| v * v).sum::<f64>().sqrt()
        };

        println!(
            "{:>4} {:>7.2} | {:>8.2} {:>8.2} | {:>9.4} {:>9.4} | {:>7.2} | {:>7.2} {:>7.2} {:>7.2} | {:>7.2} {:>7.2} | {:>6.3} {:>5.2} e{}/{}  off-spread {:.2e}",
            seed,
            on.test_f1 - off.test_f1,
            on.test_f1,
            off.test_f1,
            loss_on,
            loss_off,
            inv.f1_drop,
            f1_at(1),
            f1_at(16),
            f1_at(64),
            probe_fused.mean_accuracy,
            probe_refined.mean_accuracy,
            aff_gap,
            wg_norm,
            on.report.best_epoch,
            off.report.best_epoch,
            off_sweep.f1_spread,
        );
    }
}
