//! Evaluation protocols shared by the CLI and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::data::{train_test_split, Criterion, SegmentedDataset};
use crate::dwt::{self, WaveletConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, build_curve, CurveSet, EvalReport, PartitionPoint};
use crate::multimodal::{
    default_class_names, train_pipeline, train_unimodal_pipeline, Architecture, MultimodalBatch,
    MultimodalModel, PipelineConfig,
};
use crate::nn::RealMatrix;
use crate::seed::derive_seed;

/// One architecture/threshold row for 896-sample segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub pathway_dim: usize,
    pub joint_dim: usize,
    pub dwt_eeg: f64,
    pub dwt_emg: f64,
    /// Nominal CR in percent.
    pub cr: f64,
}

const fn row(
    pathway_dim: usize,
    joint_dim: usize,
    dwt_eeg: f64,
    dwt_emg: f64,
    cr: f64,
) -> TableRow {
    TableRow {
        pathway_dim,
        joint_dim,
        dwt_eeg,
        dwt_emg,
        cr,
    }
}

pub const REFERENCE_SEGMENT_DIM: usize = 896;

/// The nine reference configurations, from 10% to 90% nominal CR.
pub const REFERENCE_ROWS: [TableRow; 9] = [
    row(896, 806, 0.025, 0.019, 10.0),
    row(896, 716, 0.05, 0.04, 20.0),
    row(896, 627, 0.085, 0.06, 30.0),
    row(896, 537, 0.13, 0.10, 40.0),
    row(896, 448, 0.29, 0.51, 50.0),
    row(440, 358, 0.66, 0.64, 60.0),
    row(440, 268, 0.75, 0.69, 70.0),
    row(440, 179, 0.83, 0.74, 80.0),
    row(380, 89, 0.92, 0.78, 90.0),
];

impl TableRow {
    pub fn label(&self) -> String {
        format!("{}-{}", self.pathway_dim, self.joint_dim)
    }

    /// Dimensions scaled proportionally to a different segment length.
    pub fn scaled(&self, segment_dim: usize) -> Self {
        if segment_dim == REFERENCE_SEGMENT_DIM {
            return *self;
        }
        let f = segment_dim as f64 / REFERENCE_SEGMENT_DIM as f64;
        let pathway_dim = ((self.pathway_dim as f64 * f).round() as usize).clamp(1, segment_dim);
        let joint_dim = ((self.joint_dim as f64 * f).round() as usize).clamp(1, pathway_dim);
        Self {
            pathway_dim,
            joint_dim,
            ..*self
        }
    }

    pub fn architecture(&self, segment_dim: usize) -> Architecture {
        Architecture::from_row(segment_dim, segment_dim, self.pathway_dim, self.joint_dim)
    }
}

/// Trains the multimodal pipeline on `train` and evaluates on `test`.
pub fn multimodal_point(
    arch: &Architecture,
    pipeline: &PipelineConfig,
    train: &SegmentedDataset,
    test: &SegmentedDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(MultimodalModel, EvalReport)> {
    let (model, _) = train_pipeline(arch, pipeline, &train.batch()?, None, seed)?;
    let label = format!(
        "{}-{}",
        arch.eeg_dims[1..]
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("-"),
        arch.joint_dim
    );
    let config = serde_json::json!({ "architecture": arch, "pipeline": pipeline });
    let mut report =
        metrics::evaluate_model(&model, &test.batch()?, None, &label, train_fraction, config)?;
    report.seed = Some(seed);
    Ok((model, report))
}

/// AE distortion curve over the given rows, scaled to the data's segment
/// length, with seed `seed + row index` per row.
pub fn multimodal_curve(
    rows: &[TableRow],
    pipeline: &PipelineConfig,
    train: &SegmentedDataset,
    test: &SegmentedDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<CurveSet> {
    let d = train.segment_dim();
    let rows: Vec<TableRow> = rows.iter().map(|r| r.scaled(d)).collect();
    build_curve("multimodal-ae", &rows, TableRow::label, |i, r| {
        let arch = r.architecture(d);
        multimodal_point(
            &arch,
            pipeline,
            train,
            test,
            train_fraction,
            seed.wrapping_add(i as u64),
        )
        .map(|(_, rep)| rep)
    })
}

/// How a DWT curve point chooses its thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum DwtPoint {
    Fixed {
        eeg: f64,
        emg: f64,
    },
    /// Bisect each modality's threshold to this mean CR.
    TargetCr {
        cr: f64,
    },
}

impl DwtPoint {
    pub fn label(&self) -> String {
        match self {
            Self::Fixed { eeg, emg } => format!("eeg {eeg} / emg {emg}"),
            Self::TargetCr { cr } => format!("target cr {cr}"),
        }
    }
}

/// Threshold-codes both modalities of `test`.
pub fn dwt_report(
    point: &DwtPoint,
    wavelet: &WaveletConfig,
    test: &SegmentedDataset,
) -> Result<EvalReport> {
    let (te, tm) = match *point {
        DwtPoint::Fixed { eeg, emg } => (eeg, emg),
        DwtPoint::TargetCr { cr } => (
            dwt::threshold_for_cr(&test.eeg, wavelet, cr, 0.25)?,
            dwt::threshold_for_cr(&test.emg, wavelet, cr, 0.25)?,
        ),
    };
    let e = dwt::dwt_codec_eval(&test.eeg, &wavelet.with_threshold(te))?;
    let m = dwt::dwt_codec_eval(&test.emg, &wavelet.with_threshold(tm))?;
    Ok(EvalReport {
        method: "dwt".into(),
        label: point.label(),
        cr_percent: 0.5 * (e.eval.cr_percent + m.eval.cr_percent),
        eeg: e.eval,
        emg: m.eval,
        accuracy: None,
        train_fraction: 0.0,
        seed: None,
        config: serde_json::json!({ "wavelet": wavelet, "eeg_threshold": te, "emg_threshold": tm, "point": point }),
    })
}

pub fn dwt_curve(
    points: &[DwtPoint],
    wavelet: &WaveletConfig,
    test: &SegmentedDataset,
) -> Result<CurveSet> {
    build_curve("dwt", points, DwtPoint::label, |_, p| {
        dwt_report(p, wavelet, test)
    })
}

/// One multimodal model per training fraction, evaluated on the held-out rest.
pub fn multimodal_partition_sweep(
    fractions: &[f64],
    arch: &Architecture,
    pipeline: &PipelineConfig,
    data: &SegmentedDataset,
    seed: u64,
) -> Result<Vec<PartitionPoint>> {
    metrics::partition_sweep(fractions, |f| {
        let (train, test) = train_test_split(data, f, derive_seed(seed, "partition"))?;
        multimodal_point(arch, pipeline, &train, &test, f, seed).map(|(_, r)| r)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub criterion: Criterion,
    pub multimodal_accuracy: f64,
    pub eeg_only_accuracy: Option<f64>,
    pub emg_only_accuracy: Option<f64>,
    pub train_fraction: f64,
    pub seed: u64,
    pub config: serde_json::Value,
}

/// Fine-tuned multimodal classifier against single-modality stacks with the
/// same depth, code size, and training budget, all on one split.
pub fn compare_classifiers(
    arch: &Architecture,
    pipeline: &PipelineConfig,
    data: &SegmentedDataset,
    criterion: Criterion,
    train_fraction: f64,
    baselines: bool,
    seed: u64,
) -> Result<ClassificationReport> {
    let finetune = pipeline
        .finetune
        .ok_or_else(|| Error::InvalidConfig("classification needs a finetune stage".into()))?;
    let (train, test) = train_test_split(data, train_fraction, derive_seed(seed, "split"))?;
    let names = default_class_names(2);
    let (y_train, y_test) = (train.labels_for(criterion)?, test.labels_for(criterion)?);
    let (model, _) = train_pipeline(
        arch,
        pipeline,
        &train.batch()?,
        Some((y_train, &names)),
        seed,
    )?;
    let multimodal_accuracy = metrics::accuracy(&model.classify(&test.batch()?)?.labels, y_test)?;

    let unimodal = |dims: &[usize], x: &RealMatrix, xt: &RealMatrix, label: &str| -> Result<f64> {
        let mut dims = dims.to_vec();
        dims.push(arch.joint_dim);
        let pretrain = pipeline.pretrain.with_seed(derive_seed(seed, "pretrain"));
        let clf = train_unimodal_pipeline(
            &dims,
            arch.activation,
            x,
            y_train,
            &names,
            &pretrain,
            &finetune,
            derive_seed(seed, label),
        )?;
        metrics::accuracy(&clf.classify(xt)?.labels, y_test)
    };
    let (eeg_only_accuracy, emg_only_accuracy) = if baselines {
        (
            Some(unimodal(
                &arch.eeg_dims,
                &train.eeg,
                &test.eeg,
                "unimodal-eeg",
            )?),
            Some(unimodal(
                &arch.emg_dims,
                &train.emg,
                &test.emg,
                "unimodal-emg",
            )?),
        )
    } else {
        (None, None)
    };
    Ok(ClassificationReport {
        criterion,
        multimodal_accuracy,
        eeg_only_accuracy,
        emg_only_accuracy,
        train_fraction,
        seed,
        config: serde_json::json!({ "architecture": arch, "pipeline": pipeline }),
    })
}

/// Cross-modal reconstruction: each modality rebuilt from the other alone,
/// against a predictor that outputs 0.5 everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingModalityReport {
    pub eeg_from_emg_prd: f64,
    pub emg_from_eeg_prd: f64,
    pub constant_eeg_prd: f64,
    pub constant_emg_prd: f64,
}

pub fn missing_modality(
    model: &MultimodalModel,
    test: &MultimodalBatch,
) -> Result<MissingModalityReport> {
    let (eeg_from_emg, _) = model.reconstruct(&test.emg_only())?;
    let (_, emg_from_eeg) = model.reconstruct(&test.eeg_only())?;
    let half = |m: &RealMatrix| RealMatrix::filled(m.rows(), m.cols(), 0.5);
    Ok(MissingModalityReport {
        eeg_from_emg_prd: metrics::distortion_prd(&test.eeg, &eeg_from_emg)?,
        emg_from_eeg_prd: metrics::distortion_prd(&test.emg, &emg_from_eeg)?,
        constant_eeg_prd: metrics::distortion_prd(&test.eeg, &half(&test.eeg))?,
        constant_emg_prd: metrics::distortion_prd(&test.emg, &half(&test.emg))?,
    })
}
