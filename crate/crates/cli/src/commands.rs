use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use mmae::codec::{self, ModelArtifact, Reconstruction};
use mmae::data::{self, SegmentedDataset};
use mmae::experiment::{self, DwtPoint};
use mmae::metrics::{self, compression_ratio, curves_to_tsv, distortion_prd};
use mmae::multimodal::{default_class_names, train_pipeline};
use mmae::seed::derive_seed;
use mmae::{gradcheck, Error};

use crate::config::{DwtMode, RunConfig, SourceKind};

/// Check failures (gradient check, for now) exit with their own code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

/// Exclusive claim on an output directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(".lock");
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    dir.display(),
                    path.display()
                )
            })?;
        writeln!(file, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config")
}

pub fn load_data(cfg: &RunConfig) -> Result<SegmentedDataset> {
    let ds = match cfg.data.source {
        SourceKind::Synth => {
            let spec = data::SynthSpec {
                seed: derive_seed(cfg.seed(), "synth"),
                ..cfg.data.synth
            };
            data::synth_multimodal(&spec)?
        }
        SourceKind::Deap => {
            let dir = cfg.data.deap_dir.as_deref().expect("validated");
            let records = data::load_deap(dir)?;
            let seg = data::segment_normalize(&records, &cfg.data.channels)?;
            log::info!(
                "{} trials -> {} segments ({} zero-variance segments skipped)",
                records.len(),
                seg.dataset.len(),
                seg.skipped
            );
            seg.dataset
        }
        SourceKind::Dataset => {
            codec::load_dataset(cfg.data.dataset.as_deref().expect("validated"))?
        }
    };
    if let Some(d) = cfg.expected_segment_dim() {
        if ds.segment_dim() != d {
            bail!(Error::InvalidConfig(format!(
                "data has segment length {}, config says {d}",
                ds.segment_dim()
            )));
        }
    }
    Ok(ds)
}

fn split(cfg: &RunConfig, ds: &SegmentedDataset) -> Result<(SegmentedDataset, SegmentedDataset)> {
    Ok(data::train_test_split(
        ds,
        cfg.train_fraction,
        derive_seed(cfg.seed(), "split"),
    )?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    codec::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn warn_expansion(cfg: &RunConfig, segment_dim: usize) {
    let arch = cfg.architecture(segment_dim);
    let top = arch
        .eeg_dims
        .last()
        .copied()
        .unwrap_or(0)
        .min(arch.emg_dims.last().copied().unwrap_or(0));
    if arch.joint_dim > top {
        log::warn!(
            "joint dim {} exceeds pathway output {top}: the joint layer expands rather than compresses",
            arch.joint_dim
        );
    }
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let _lock = RunLock::acquire(out)?;
    let ds = load_data(cfg)?;
    warn_expansion(cfg, ds.segment_dim());
    let (train, test) = split(cfg, &ds)?;
    let arch = cfg.architecture(ds.segment_dim());
    let names = default_class_names(2);
    let criterion = cfg.classify.criteria.first().copied();
    let labels = match (cfg.train.finetune, criterion) {
        (Some(_), Some(c)) => Some((train.labels_for(c)?, names.as_slice())),
        (Some(_), None) => bail!(Error::InvalidConfig(
            "fine-tuning needs classify.criteria".into()
        )),
        _ => None,
    };
    let (model, log) = train_pipeline(&arch, &cfg.train, &train.batch()?, labels, cfg.seed())?;
    let artifact = ModelArtifact::new(model, cfg.provenance());
    let fp = codec::save_model(&artifact, &out.join("model.mmae"))?;
    write_text(&out.join("training.tsv"), &log.to_tsv())?;
    codec::save_dataset(&test, &out.join("test.mmds"))?;

    let test_labels = match (&artifact.model.head, criterion) {
        (Some(_), Some(c)) => Some(test.labels_for(c)?),
        _ => None,
    };
    let mut report = metrics::evaluate_model(
        &artifact.model,
        &test.batch()?,
        test_labels,
        &arch_label(&arch),
        cfg.train_fraction,
        cfg.provenance(),
    )?;
    report.seed = Some(cfg.seed());
    write_text(&out.join("report.json"), &report.to_json())?;
    println!("model {fp} -> {}", out.join("model.mmae").display());
    println!(
        "test: CR {:.2}%  PRD eeg {:.3}%  emg {:.3}%{}",
        report.cr_percent,
        report.eeg.prd,
        report.emg.prd,
        report
            .accuracy
            .map(|a| format!("  accuracy {a:.2}%"))
            .unwrap_or_default()
    );
    Ok(())
}

fn arch_label(arch: &mmae::multimodal::Architecture) -> String {
    let hidden: Vec<String> = arch.eeg_dims[1..].iter().map(|d| d.to_string()).collect();
    format!("{}-{}", hidden.join("-"), arch.joint_dim)
}

pub fn compress(model: &Path, dataset: &Path, out: &Path) -> Result<()> {
    let artifact = codec::load_model(model)?;
    let ds = codec::load_dataset(dataset)?;
    let code = codec::encode(&artifact, &ds.batch()?)?;
    codec::save_codes(&code, out)?;
    let (xe, xm) = code.source_dims;
    println!(
        "{} samples -> {} ({} values each)\nCR eeg {:.4}%  emg {:.4}%",
        code.len(),
        out.display(),
        code.code_dim(),
        compression_ratio(code.code_dim(), xe)?,
        compression_ratio(code.code_dim(), xm)?
    );
    Ok(())
}

pub fn decompress(model: &Path, codes: &Path, out: &Path, reference: Option<&Path>) -> Result<()> {
    let artifact = codec::load_model(model)?;
    let code = codec::load_codes(codes)?;
    let (eeg, emg) = codec::decode(&artifact, &code)?;
    let recon = Reconstruction {
        eeg,
        emg,
        model_fingerprint: code.model_fingerprint,
    };
    codec::save_reconstruction(&recon, out)?;
    println!("{} samples -> {}", code.len(), out.display());
    if let Some(path) = reference {
        let ds = codec::load_dataset(path)?;
        println!(
            "PRD eeg {:.4}%  emg {:.4}%",
            distortion_prd(&ds.eeg, &recon.eeg)?,
            distortion_prd(&ds.emg, &recon.emg)?
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let _lock = RunLock::acquire(out)?;
    let ds = load_data(cfg)?;
    let d = ds.segment_dim();
    let (train, test) = split(cfg, &ds)?;
    let rows = &cfg.eval.rows;
    let ae = experiment::multimodal_curve(
        rows,
        &cfg.train,
        &train,
        &test,
        cfg.train_fraction,
        cfg.seed(),
    )?;
    let points: Vec<DwtPoint> = rows
        .iter()
        .map(|r| match cfg.eval.dwt {
            DwtMode::Table => DwtPoint::Fixed {
                eeg: r.dwt_eeg,
                emg: r.dwt_emg,
            },
            DwtMode::TargetCr => DwtPoint::TargetCr { cr: r.cr },
        })
        .collect();
    let dwt = experiment::dwt_curve(&points, &cfg.eval.wavelet, &test)?;

    let curves = [
        ae.eeg.clone(),
        ae.emg.clone(),
        dwt.eeg.clone(),
        dwt.emg.clone(),
    ];
    write_text(&out.join("curves.tsv"), &curves_to_tsv(&curves))?;
    let reports: Vec<_> = ae.reports.iter().chain(&dwt.reports).collect();
    write_text(
        &out.join("reports.json"),
        &serde_json::to_string_pretty(&reports)?,
    )?;
    for c in &curves {
        for p in &c.points {
            println!(
                "{}\t{}\tCR {:.2}%\tPRD {:.3}%",
                c.method, c.modality, p.cr, p.prd
            );
        }
    }

    if !cfg.eval.partitions.is_empty() {
        let arch = rows[cfg.eval.partition_row].scaled(d).architecture(d);
        let sweep = experiment::multimodal_partition_sweep(
            &cfg.eval.partitions,
            &arch,
            &cfg.train,
            &ds,
            cfg.seed(),
        )?;
        let mut tsv =
            String::from("train_fraction\tmodality\tmin\tq1\tmedian\tq3\tmax\tmean\tcount\n");
        for p in &sweep {
            for (m, w) in [("eeg", &p.eeg), ("emg", &p.emg)] {
                tsv.push_str(&format!(
                    "{:?}\t{m}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\n",
                    p.train_fraction, w.min, w.q1, w.median, w.q3, w.max, w.mean, w.count
                ));
            }
            println!(
                "partition {:.2}: median PRD eeg {:.3}%  emg {:.3}%",
                p.train_fraction, p.eeg.median, p.emg.median
            );
        }
        write_text(&out.join("partitions.tsv"), &tsv)?;
        write_text(
            &out.join("partitions.json"),
            &serde_json::to_string_pretty(&sweep)?,
        )?;
    }
    Ok(())
}

pub fn classify(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.train.finetune.is_none() {
        bail!(Error::InvalidConfig(
            "classify needs a [train.finetune] stage".into()
        ));
    }
    if cfg.classify.criteria.is_empty() {
        bail!(Error::InvalidConfig("classify.criteria is empty".into()));
    }
    let _lock = RunLock::acquire(out)?;
    let ds = load_data(cfg)?;
    warn_expansion(cfg, ds.segment_dim());
    let arch = cfg.architecture(ds.segment_dim());
    let mut reports = Vec::new();
    for &c in &cfg.classify.criteria {
        let mut r = experiment::compare_classifiers(
            &arch,
            &cfg.train,
            &ds,
            c,
            cfg.train_fraction,
            cfg.classify.baselines,
            cfg.seed(),
        )?;
        r.config = cfg.provenance();
        let base = |a: Option<f64>| a.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "-".into());
        println!(
            "{c}: multimodal {:.2}%  eeg-only {}  emg-only {}",
            r.multimodal_accuracy,
            base(r.eeg_only_accuracy),
            base(r.emg_only_accuracy)
        );
        reports.push(r);
    }
    write_text(
        &out.join("classification.json"),
        &serde_json::to_string_pretty(&reports)?,
    )?;
    Ok(())
}

pub fn gradcheck(tolerance: f64, perturb: f64, json: Option<&Path>) -> Result<()> {
    let t = std::time::Instant::now();
    let report = gradcheck::run_suite(tolerance, perturb)?;
    for c in &report.cases {
        println!(
            "{}\t{:<14}\tparams {:>3}\tmax rel err {:.3e}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.params,
            c.max_rel_error
        );
    }
    println!(
        "{} cases, worst {:.3e}, tolerance {:e}, {:.2}s",
        report.cases.len(),
        report.worst(),
        tolerance,
        t.elapsed().as_secs_f64()
    );
    if let Some(path) = json {
        let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    if !report.passed() {
        let failed = report.cases.iter().filter(|c| !c.passed).count();
        bail!(CheckFailed(format!(
            "{failed} gradient checks exceed tolerance {tolerance:e}"
        )));
    }
    Ok(())
}

pub struct DeapExport {
    pub dir: PathBuf,
    pub participants: usize,
    pub trials: usize,
    pub channels: usize,
    pub single_precision: bool,
}

pub fn synth(cfg: &RunConfig, out: Option<&Path>, deap: Option<DeapExport>) -> Result<()> {
    if cfg.data.source != SourceKind::Synth {
        bail!(Error::InvalidConfig(
            "synth needs data.source = \"synth\"".into()
        ));
    }
    if out.is_none() && deap.is_none() {
        bail!(Error::InvalidConfig(
            "synth needs --out and/or --deap-dir".into()
        ));
    }
    if let Some(path) = out {
        let ds = load_data(cfg)?;
        codec::save_dataset(&ds, path)?;
        println!(
            "{} samples of {} values -> {}",
            ds.len(),
            ds.segment_dim(),
            path.display()
        );
    }
    if let Some(x) = deap {
        let spec = data::SynthSpec {
            seed: derive_seed(cfg.seed(), "synth-trials"),
            ..cfg.data.synth
        };
        let sel = data::ChannelSelection {
            segment_dim: spec.segment_dim,
            ..cfg.data.channels
        };
        let records = data::synth_trials(&spec, x.participants, x.trials, x.channels, &sel)?;
        fs::create_dir_all(&x.dir).with_context(|| format!("creating {}", x.dir.display()))?;
        data::export_deap(&records, &x.dir, x.single_precision)?;
        println!(
            "{} participants x {} trials x {} channels -> {}",
            x.participants,
            x.trials,
            x.channels,
            x.dir.display()
        );
    }
    Ok(())
}
