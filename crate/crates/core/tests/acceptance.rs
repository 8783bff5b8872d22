//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use mmae::autoencoder::{train_autoencoder, TiedAutoencoder, TrainConfig};
use mmae::codec::{self, ModelArtifact};
use mmae::data::{
    export_deap, load_deap, segment_normalize, synth_multimodal, synth_trials, ChannelSelection,
    Criterion, SynthSpec,
};
use mmae::dwt::{dwt_codec_eval, dwt_forward, dwt_inverse, WaveletConfig};
use mmae::experiment::{compare_classifiers, missing_modality, multimodal_point, REFERENCE_ROWS};
use mmae::metrics::{compression_ratio, distortion_prd, EvalReport};
use mmae::multimodal::{
    augment_modality_dropout, train_pipeline, Architecture, MultimodalBatch, PipelineConfig,
};
use mmae::nn::{self, ActivationKind, LossKind, RealMatrix};
use mmae::{gradcheck, seed, Error};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, budget_s: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(budget_s),
        format!("took {:.1}s, budget {budget_s}s", elapsed.as_secs_f64()),
    )
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn gaussian(rng: &mut seed::Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let report = gradcheck::run_suite(1e-6, 0.0).map_err(e2s)?;
    within(t.elapsed(), 60)?;
    ensure(
        report.cases.len() == 20,
        format!("{} cases", report.cases.len()),
    )?;
    if let Some(bad) = report.cases.iter().find(|c| !c.passed) {
        return Err(format!("{} rel err {:e}", bad.name, bad.max_rel_error));
    }
    Ok(format!(
        "20 cases, worst rel err {:.2e}, {:.1}s",
        report.worst(),
        t.elapsed().as_secs_f64()
    ))
}

fn pca_bound() -> Outcome {
    let t = Instant::now();
    let (d, n) = (8, 400);
    let mut rng = seed::rng(2024);
    let basis: Vec<f64> = (0..d * 2)
        .map(|_| gaussian(&mut rng) / (d as f64).sqrt())
        .collect();
    let mut data = vec![0.0; d * n];
    for j in 0..n {
        let s = [2.0 * gaussian(&mut rng), gaussian(&mut rng)];
        for i in 0..d {
            data[i * n + j] =
                0.5 + basis[i * 2] * s[0] + basis[i * 2 + 1] * s[1] + 0.05 * gaussian(&mut rng);
        }
    }
    let x = RealMatrix::new(d, n, data).map_err(e2s)?;

    let centered = {
        let m = DMatrix::from_row_slice(d, n, x.as_slice());
        let mean = m.column_mean();
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        c
    };
    let cov = &centered * centered.transpose() / n as f64;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let optimum: f64 = eig[2..].iter().sum();

    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 2000,
        batch_size: n,
        weight_decay: 0.0,
        seed: 7,
    };
    let init = TiedAutoencoder::initialized(d, 2, ActivationKind::Identity, &cfg);
    let (ae, _) = train_autoencoder(init, &x, &cfg).map_err(e2s)?;
    let (_, r) = ae.forward(&x).map_err(e2s)?;
    let err = nn::loss(LossKind::SquaredError, &x, &r).map_err(e2s)?;
    let ratio = err / optimum;
    within(t.elapsed(), 30)?;
    ensure(
        ratio <= 1.05,
        format!("error {err:.6} vs optimum {optimum:.6} (ratio {ratio:.4})"),
    )?;
    Ok(format!(
        "error {err:.6}, PCA optimum {optimum:.6}, ratio {ratio:.4}, 2000 steps"
    ))
}

fn dwt_codec() -> Outcome {
    let t = Instant::now();
    let mut rng = seed::rng(33);
    let (len, count) = (256, 12);
    let columns: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let f = rng.random_range(1.0..8.0);
            (0..len)
                .map(|i| {
                    (f * i as f64 / len as f64 * std::f64::consts::TAU).sin()
                        + 0.3 * gaussian(&mut rng)
                })
                .collect()
        })
        .collect();
    let cfg = WaveletConfig::default();
    let (mut worst_round, mut worst_energy) = (0.0f64, 0.0f64);
    for col in &columns {
        let c = dwt_forward(col, &cfg).map_err(e2s)?;
        let back = dwt_inverse(&c, &cfg).map_err(e2s)?;
        for (a, b) in col.iter().zip(&back) {
            worst_round = worst_round.max((a - b).abs());
        }
        let energy: f64 = col.iter().map(|v| v * v).sum();
        worst_energy = worst_energy.max((c.energy() - energy).abs() / energy);
    }
    ensure(
        worst_round <= 1e-10,
        format!("round-trip error {worst_round:e}"),
    )?;
    ensure(
        worst_energy <= 1e-9,
        format!("energy error {worst_energy:e}"),
    )?;

    let signals = RealMatrix::from_columns(&columns).map_err(e2s)?;
    let mut last = (-1.0, -1.0);
    for k in 0..=30 {
        let thr = 0.05 * k as f64;
        let ev = dwt_codec_eval(&signals, &cfg.with_threshold(thr))
            .map_err(e2s)?
            .eval;
        ensure(
            ev.cr_percent >= last.0 && ev.prd >= last.1,
            format!(
                "not monotone at threshold {thr}: ({}, {}) after {last:?}",
                ev.cr_percent, ev.prd
            ),
        )?;
        last = (ev.cr_percent, ev.prd);
    }
    within(t.elapsed(), 10)?;
    Ok(format!(
        "round trip {worst_round:.1e}, energy {worst_energy:.1e}, monotone over 31 thresholds"
    ))
}

fn arithmetic() -> Outcome {
    let cr = compression_ratio(179, 896).map_err(e2s)?;
    ensure((cr - 80.02).abs() <= 0.01, format!("CR(179, 896) = {cr}"))?;
    let x = RealMatrix::from_rows(&[&[3.0], &[4.0]]).map_err(e2s)?;
    let r = RealMatrix::from_rows(&[&[3.0], &[0.0]]).map_err(e2s)?;
    let prd = distortion_prd(&x, &r).map_err(e2s)?;
    ensure((prd - 80.0).abs() <= 1e-12, format!("PRD = {prd}"))?;
    let zero = distortion_prd(&x, &x).map_err(e2s)?;
    ensure(zero == 0.0, format!("PRD(x, x) = {zero}"))?;
    Ok(format!(
        "CR(179, 896) = {cr:.4}, PRD([3,4] vs [3,0]) = {prd}"
    ))
}

fn advantage_pipeline() -> PipelineConfig {
    let base = TrainConfig {
        lr: 0.05,
        epochs: 30,
        batch_size: 32,
        weight_decay: 1e-4,
        seed: 0,
    };
    PipelineConfig {
        pretrain: base,
        joint: base,
        finetune: Some(base),
        ..PipelineConfig::default()
    }
}

fn multimodal_advantage() -> Outcome {
    let t = Instant::now();
    let row = REFERENCE_ROWS[7].scaled(64);
    let arch = row.architecture(64);
    let pipeline = advantage_pipeline();
    let (mut mm, mut eeg, mut emg) = (Vec::new(), Vec::new(), Vec::new());
    let mut missing = Vec::new();
    for s in 0..5u64 {
        let spec = SynthSpec {
            samples: 2000,
            noise: 0.3,
            seed: s,
            segment_dim: 64,
            latent_dim: 4,
        };
        let data = synth_multimodal(&spec).map_err(e2s)?;
        let rep = compare_classifiers(&arch, &pipeline, &data, Criterion::Arousal, 0.75, true, s)
            .map_err(e2s)?;
        mm.push(rep.multimodal_accuracy);
        eeg.push(rep.eeg_only_accuracy.ok_or("no EEG baseline")?);
        emg.push(rep.emg_only_accuracy.ok_or("no EMG baseline")?);

        let (train, test) = mmae::data::train_test_split(&data, 0.75, s).map_err(e2s)?;
        let recon = PipelineConfig {
            finetune: None,
            ..pipeline
        };
        let (model, report) =
            multimodal_point(&arch, &recon, &train, &test, 0.75, s).map_err(e2s)?;
        ensure(
            (report.cr_percent - 79.6875).abs() < 1e-9,
            format!("CR {}", report.cr_percent),
        )?;
        missing.push(missing_modality(&model, &test.batch().map_err(e2s)?).map_err(e2s)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m, e, g) = (mean(&mm), mean(&eeg), mean(&emg));
    ensure(
        m > e && m > g,
        format!("multimodal {m:.2}% vs EEG {e:.2}%, EMG {g:.2}%"),
    )?;
    for (s, r) in missing.iter().enumerate() {
        ensure(
            r.eeg_from_emg_prd < r.constant_eeg_prd && r.emg_from_eeg_prd < r.constant_emg_prd,
            format!("seed {s}: missing-modality PRD {r:?}"),
        )?;
    }
    within(t.elapsed(), 600)?;
    let worst_e = missing
        .iter()
        .map(|r| r.eeg_from_emg_prd / r.constant_eeg_prd)
        .fold(0.0, f64::max);
    let worst_m = missing
        .iter()
        .map(|r| r.emg_from_eeg_prd / r.constant_emg_prd)
        .fold(0.0, f64::max);
    Ok(format!(
        "accuracy multimodal {m:.1}% > EEG {e:.1}%, EMG {g:.1}%; missing-modality PRD at most {:.0}% / {:.0}% of constant; {:.0}s",
        worst_e * 100.0,
        worst_m * 100.0,
        t.elapsed().as_secs_f64()
    ))
}

fn small_training(seed_value: u64) -> Result<ModelArtifact, String> {
    let data = synth_multimodal(&SynthSpec {
        samples: 120,
        segment_dim: 16,
        seed: 5,
        ..SynthSpec::default()
    })
    .map_err(e2s)?;
    let arch = Architecture::from_row(16, 16, 10, 6);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let pipeline = PipelineConfig {
        pretrain: cfg,
        joint: cfg,
        ..PipelineConfig::default()
    };
    let (model, _) = train_pipeline(
        &arch,
        &pipeline,
        &data.batch().map_err(e2s)?,
        None,
        seed_value,
    )
    .map_err(e2s)?;
    Ok(ModelArtifact::new(
        model,
        serde_json::json!({ "seed": seed_value }),
    ))
}

fn determinism() -> Outcome {
    let a = small_training(11)?;
    let b = small_training(11)?;
    ensure(
        a.to_bytes() == b.to_bytes(),
        "same seed gave different artifacts",
    )?;
    ensure(
        small_training(12)?.to_bytes() != a.to_bytes(),
        "different seeds gave identical artifacts",
    )?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.mmae");
    codec::save_model(&a, &path).map_err(e2s)?;
    let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
    ensure(
        on_disk == a.to_bytes(),
        "saved bytes differ from serialization",
    )?;
    let loaded = codec::load_model(&path).map_err(e2s)?;
    ensure(loaded.to_bytes() == on_disk, "load/save is not byte-exact")?;
    ensure(loaded.model == a.model, "loaded model differs")?;

    let mut flipped = on_disk.clone();
    *flipped.last_mut().expect("non-empty") ^= 0x01;
    let mut bad_magic = on_disk.clone();
    bad_magic[0] ^= 0x20;
    let corruptions = [
        ("flipped payload byte", flipped),
        ("truncated", on_disk[..on_disk.len() - 8].to_vec()),
        ("bad magic", bad_magic),
        ("empty", Vec::new()),
    ];
    for (name, bytes) in corruptions {
        ensure(
            ModelArtifact::from_bytes(&bytes).is_err(),
            format!("{name} file accepted"),
        )?;
    }
    Ok(
        "identical artifacts for identical seeds; byte-exact round trip; 4 corruptions rejected"
            .into(),
    )
}

fn report_keys(r: &EvalReport) -> Vec<String> {
    fn walk(v: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
        if let serde_json::Value::Object(map) = v {
            for (k, child) in map {
                let key = format!("{prefix}{k}");
                out.push(key.clone());
                if prefix.is_empty() && k == "config" {
                    continue;
                }
                walk(child, &format!("{key}."), out);
            }
        }
    }
    let mut out = Vec::new();
    walk(&serde_json::to_value(r).expect("report"), "", &mut out);
    out.sort();
    out
}

fn deap_shaped() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        segment_dim: 64,
        seed: 3,
        ..SynthSpec::default()
    };
    let sel = ChannelSelection {
        segment_dim: 64,
        ..ChannelSelection::default()
    };
    let records = synth_trials(&spec, 2, 4, 40, &sel).map_err(e2s)?;
    export_deap(&records, dir.path(), false).map_err(e2s)?;
    let loaded = load_deap(dir.path()).map_err(e2s)?;
    ensure(
        loaded == records,
        "DEAP layout round trip changed the records",
    )?;
    let seg = segment_normalize(&loaded, &sel).map_err(e2s)?;
    ensure(
        seg.dataset.len() == 8 * 120,
        format!("{} segments", seg.dataset.len()),
    )?;

    let row = REFERENCE_ROWS[7].scaled(64);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 32,
        lr: 0.05,
        ..TrainConfig::default()
    };
    let pipeline = PipelineConfig {
        pretrain: cfg,
        joint: cfg,
        ..PipelineConfig::default()
    };
    let (train, test) = mmae::data::train_test_split(&seg.dataset, 0.75, 1).map_err(e2s)?;
    let (_, deap_report) =
        multimodal_point(&row.architecture(64), &pipeline, &train, &test, 0.75, 1).map_err(e2s)?;
    let parsed = EvalReport::from_json(&deap_report.to_json()).map_err(e2s)?;
    ensure(parsed == deap_report, "report JSON does not round trip")?;

    let synth = synth_multimodal(&SynthSpec {
        samples: 200,
        segment_dim: 64,
        ..SynthSpec::default()
    })
    .map_err(e2s)?;
    let (strain, stest) = mmae::data::train_test_split(&synth, 0.75, 1).map_err(e2s)?;
    let (_, synth_report) =
        multimodal_point(&row.architecture(64), &pipeline, &strain, &stest, 0.75, 1)
            .map_err(e2s)?;
    ensure(
        report_keys(&deap_report) == report_keys(&synth_report),
        "report schemas differ",
    )?;

    // full-size participant/trial grid in single precision, two channels
    let big = tempfile::tempdir().map_err(|e| e.to_string())?;
    let two = ChannelSelection {
        eeg_channel: 0,
        emg_channel: 1,
        segment_dim: 896,
        ..ChannelSelection::default()
    };
    let grid = synth_trials(
        &SynthSpec {
            segment_dim: 896,
            ..SynthSpec::default()
        },
        32,
        40,
        2,
        &two,
    )
    .map_err(e2s)?;
    export_deap(&grid, big.path(), true).map_err(e2s)?;
    drop(grid);
    let all = load_deap(big.path()).map_err(e2s)?;
    ensure(all.len() == 1280, format!("{} records", all.len()))?;
    let full = segment_normalize(&all, &two).map_err(e2s)?;
    ensure(
        full.dataset.len() == 1280 * 8,
        format!("{} segments", full.dataset.len()),
    )?;
    Ok(format!(
        "DEAP layout round trip, {} segments, report schema matches; 1280-trial f4 load gives {} segments",
        seg.dataset.len(),
        full.dataset.len()
    ))
}

fn augmentation() -> Outcome {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let strategy = (1usize..40, 1usize..6, 1usize..6, any::<u64>());
    runner
        .run(&strategy, |(n, de, dm, s)| {
            let mut rng = seed::rng(s);
            let mut fill = |rows: usize| {
                let v = (0..rows * n).map(|_| rng.random_range(0.01..1.0)).collect();
                RealMatrix::new(rows, n, v).unwrap()
            };
            let clean = MultimodalBatch::complete(fill(de), fill(dm)).unwrap();
            let aug = augment_modality_dropout(&clean).unwrap();
            prop_assert_eq!(aug.inputs.len(), 3 * n);
            for (b, expect) in [(true, true), (true, false), (false, true)]
                .into_iter()
                .enumerate()
            {
                for j in 0..n {
                    let k = b * n + j;
                    prop_assert_eq!(aug.inputs.presence[k], expect);
                    for i in 0..de {
                        let want = if expect.0 { clean.eeg.get(i, j) } else { 0.0 };
                        prop_assert_eq!(aug.inputs.eeg.get(i, k).to_bits(), want.to_bits());
                        prop_assert_eq!(aug.target_eeg.get(i, k), clean.eeg.get(i, j));
                    }
                    for i in 0..dm {
                        let want = if expect.1 { clean.emg.get(i, j) } else { 0.0 };
                        prop_assert_eq!(aug.inputs.emg.get(i, k).to_bits(), want.to_bits());
                        prop_assert_eq!(aug.target_emg.get(i, k), clean.emg.get(i, j));
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(
        "64 random batches: 3n samples, [both | EEG only | EMG only], exact zeros, clean targets"
            .into(),
    )
}

fn main() {
    let criteria: [Check; 8] = [
        ("1 gradient correctness", gradients),
        ("2 PCA lower bound", pca_bound),
        ("3 DWT codec", dwt_codec),
        ("4 CR/PRD arithmetic", arithmetic),
        ("5 multimodal advantage", multimodal_advantage),
        ("6 determinism and serialization", determinism),
        ("7 DEAP-shaped pipeline", deap_shaped),
        ("8 augmentation contract", augmentation),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
