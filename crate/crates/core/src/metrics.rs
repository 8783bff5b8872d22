//! Compression ratio, PRD distortion, accuracy, and curve assembly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multimodal::{MultimodalBatch, MultimodalModel};
use crate::nn::RealMatrix;

/// `(1 - m/n) * 100` for a code of `m` values standing in for `n`.
pub fn compression_ratio(m: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("compression ratio of an empty signal".into()));
    }
    if m > n {
        return Err(Error::Domain(format!(
            "compressed length {m} exceeds original length {n}"
        )));
    }
    Ok((1.0 - m as f64 / n as f64) * 100.0)
}

/// Percentage root-mean-square difference, `||r - x|| / ||x|| * 100`, with
/// Frobenius norms over the whole batch.
pub fn distortion_prd(x: &RealMatrix, r: &RealMatrix) -> Result<f64> {
    let diff = r.sub(x)?;
    let norm = x.frobenius();
    if norm == 0.0 {
        return Err(Error::Domain("PRD of a zero-norm signal".into()));
    }
    Ok(diff.frobenius() / norm * 100.0)
}

/// PRD of each column separately.
pub fn per_sample_prd(x: &RealMatrix, r: &RealMatrix) -> Result<Vec<f64>> {
    if x.shape() != r.shape() {
        return Err(Error::shape("per_sample_prd", x.shape(), r.shape()));
    }
    (0..x.cols())
        .map(|j| {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..x.rows() {
                let (a, b) = (x.get(i, j), r.get(i, j));
                num += (b - a) * (b - a);
                den += a * a;
            }
            if den == 0.0 {
                return Err(Error::Domain(format!("PRD of zero-norm sample {j}")));
            }
            Ok((num / den).sqrt() * 100.0)
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if predicted.len() != truth.len() {
        return Err(Error::shape(
            "accuracy",
            (predicted.len(), 1),
            (truth.len(), 1),
        ));
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / predicted.len() as f64)
}

/// Compression and distortion for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEval {
    pub cr_percent: f64,
    pub prd: f64,
    pub per_sample_prd: Vec<f64>,
}

impl ModalityEval {
    pub fn measure(x: &RealMatrix, r: &RealMatrix, cr_percent: f64) -> Result<Self> {
        Ok(Self {
            cr_percent,
            prd: distortion_prd(x, r)?,
            per_sample_prd: per_sample_prd(x, r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Free-form identifier of the configuration, e.g. `"440-179"`.
    pub label: String,
    pub cr_percent: f64,
    pub eeg: ModalityEval,
    pub emg: ModalityEval,
    pub accuracy: Option<f64>,
    /// Fraction of the data used for training.
    pub train_fraction: f64,
    pub seed: Option<u64>,
    /// Settings that produced this report.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Domain(format!("bad report JSON: {e}")))
    }
}

/// Evaluates a trained model on `test`: CR from its code size, PRD of both
/// reconstructions, and accuracy when labels are given and the model has a head.
pub fn evaluate_model(
    model: &MultimodalModel,
    test: &MultimodalBatch,
    labels: Option<&[usize]>,
    label: &str,
    train_fraction: f64,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let (re, rm) = model.reconstruct(test)?;
    let (xe, xm) = model.source_dims();
    let j = model.code_dim();
    let accuracy = match (labels, &model.head) {
        (Some(labels), Some(_)) => Some(accuracy(&model.classify(test)?.labels, labels)?),
        _ => None,
    };
    Ok(EvalReport {
        method: "multimodal-ae".into(),
        label: label.into(),
        cr_percent: compression_ratio(j, xe)?,
        eeg: ModalityEval::measure(&test.eeg, &re, compression_ratio(j, xe)?)?,
        emg: ModalityEval::measure(&test.emg, &rm, compression_ratio(j, xm)?)?,
        accuracy,
        train_fraction,
        seed: None,
        config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cr: f64,
    pub prd: f64,
}

/// Distortion against compression ratio for one method and modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub method: String,
    pub modality: String,
    /// Strictly increasing in `cr`.
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn new(method: &str, modality: &str, mut points: Vec<CurvePoint>) -> Result<Self> {
        points.sort_by(|a, b| a.cr.total_cmp(&b.cr));
        if let Some(w) = points.windows(2).find(|w| w[0].cr >= w[1].cr) {
            return Err(Error::Domain(format!(
                "{method}/{modality}: two configurations share CR {}",
                w[1].cr
            )));
        }
        Ok(Self {
            method: method.into(),
            modality: modality.into(),
            points,
        })
    }

    /// Counts adjacent pairs where PRD drops as CR rises.
    pub fn inversions(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| w[1].prd < w[0].prd)
            .count()
    }
}

/// The per-point reports and the EEG and EMG curves built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub reports: Vec<EvalReport>,
    pub eeg: Curve,
    pub emg: Curve,
}

/// Evaluates every configuration and assembles the curves. Failures are
/// tagged with the configuration's label.
pub fn build_curve<C>(
    method: &str,
    configs: &[C],
    label: impl Fn(&C) -> String,
    mut evaluate: impl FnMut(usize, &C) -> Result<EvalReport>,
) -> Result<CurveSet> {
    let mut reports = Vec::with_capacity(configs.len());
    for (i, c) in configs.iter().enumerate() {
        let report = evaluate(i, c).map_err(|e| Error::Point {
            label: format!("{method} {}", label(c)),
            source: Box::new(e),
        })?;
        reports.push(report);
    }
    let points = |f: fn(&EvalReport) -> &ModalityEval| {
        reports
            .iter()
            .map(|r| CurvePoint {
                cr: f(r).cr_percent,
                prd: f(r).prd,
            })
            .collect::<Vec<_>>()
    };
    let eeg = Curve::new(method, "eeg", points(|r| &r.eeg))?;
    let emg = Curve::new(method, "emg", points(|r| &r.emg))?;
    reports.sort_by(|a, b| a.cr_percent.total_cmp(&b.cr_percent));
    Ok(CurveSet { reports, eeg, emg })
}

pub const CURVE_HEADER: &str = "method\tmodality\tcr\tprd";

/// Tab-separated `method, modality, cr, prd` rows. Floats use shortest
/// round-trip formatting so parsing gives back identical values.
pub fn curves_to_tsv(curves: &[Curve]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for c in curves {
        for p in &c.points {
            writeln!(out, "{}\t{}\t{:?}\t{:?}", c.method, c.modality, p.cr, p.prd)
                .expect("write to string");
        }
    }
    out
}

pub fn parse_curves_tsv(text: &str) -> Result<Vec<Curve>> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::Domain("curve file lacks the expected header".into()));
    }
    let mut curves: Vec<Curve> = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Domain(format!("curve line {}: {line:?}", n + 2));
        let [method, modality, cr, prd] = fields[..] else {
            return Err(bad());
        };
        let point = CurvePoint {
            cr: cr.parse().map_err(|_| bad())?,
            prd: prd.parse().map_err(|_| bad())?,
        };
        match curves
            .iter_mut()
            .find(|c| c.method == method && c.modality == modality)
        {
            Some(c) => c.points.push(point),
            None => curves.push(Curve {
                method: method.into(),
                modality: modality.into(),
                points: vec![point],
            }),
        }
    }
    curves
        .into_iter()
        .map(|c| Curve::new(&c.method, &c.modality, c.points))
        .collect()
}

/// Five-number summary plus mean, for box-and-whisker plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Whisker {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl Whisker {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        // linear interpolation between closest ranks
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPoint {
    pub train_fraction: f64,
    pub eeg: Whisker,
    pub emg: Whisker,
    pub report: EvalReport,
}

/// Runs `evaluate` once per training fraction and summarizes the per-sample PRDs.
pub fn partition_sweep(
    fractions: &[f64],
    mut evaluate: impl FnMut(f64) -> Result<EvalReport>,
) -> Result<Vec<PartitionPoint>> {
    fractions
        .iter()
        .map(|&f| {
            let report = evaluate(f).map_err(|e| Error::Point {
                label: format!("partition {f}"),
                source: Box::new(e),
            })?;
            Ok(PartitionPoint {
                train_fraction: f,
                eeg: Whisker::from_samples(&report.eeg.per_sample_prd)?,
                emg: Whisker::from_samples(&report.emg.per_sample_prd)?,
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compression_ratio_examples() {
        assert!((compression_ratio(179, 896).unwrap() - 80.022).abs() < 1e-3);
        assert_eq!(compression_ratio(896, 896).unwrap(), 0.0);
        assert_eq!(compression_ratio(0, 896).unwrap(), 100.0);
        assert!(compression_ratio(5, 4).is_err());
        assert!(compression_ratio(0, 0).is_err());
    }

    #[test]
    fn prd_examples() {
        let x = RealMatrix::from_rows(&[&[3.0, 4.0]]).unwrap();
        let r = RealMatrix::from_rows(&[&[3.0, 0.0]]).unwrap();
        assert!((distortion_prd(&x, &r).unwrap() - 80.0).abs() < 1e-12);
        assert_eq!(distortion_prd(&x, &x).unwrap(), 0.0);
        assert!(distortion_prd(&RealMatrix::zeros(1, 2), &r).is_err());
        let per = per_sample_prd(&x, &r).unwrap();
        assert_eq!(per, vec![0.0, 100.0]);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap(), 100.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 75.0);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn whisker_quartiles() {
        let w = Whisker::from_samples(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(
            (w.min, w.q1, w.median, w.q3, w.max, w.mean),
            (1.0, 2.0, 3.0, 4.0, 5.0, 3.0)
        );
        let w = Whisker::from_samples(&[1.0, 2.0]).unwrap();
        assert_eq!(w.median, 1.5);
    }

    fn report(cr: f64, prd: f64) -> EvalReport {
        let m = ModalityEval {
            cr_percent: cr,
            prd,
            per_sample_prd: vec![prd],
        };
        EvalReport {
            method: "m".into(),
            label: format!("{cr}"),
            cr_percent: cr,
            eeg: m.clone(),
            emg: m,
            accuracy: None,
            train_fraction: 0.5,
            seed: Some(1),
            config: serde_json::json!({ "cr": cr }),
        }
    }

    #[test]
    fn curve_sorted_and_duplicates_rejected() {
        let set = build_curve(
            "m",
            &[50.0, 10.0, 90.0],
            |c| c.to_string(),
            |_, &c| Ok(report(c, c / 10.0)),
        )
        .unwrap();
        let crs: Vec<f64> = set.eeg.points.iter().map(|p| p.cr).collect();
        assert_eq!(crs, vec![10.0, 50.0, 90.0]);
        assert_eq!(set.eeg.inversions(), 0);
        assert!(build_curve(
            "m",
            &[50.0, 50.0],
            |c| c.to_string(),
            |_, &c| Ok(report(c, 1.0))
        )
        .is_err());
    }

    #[test]
    fn curve_errors_are_tagged() {
        let err = build_curve(
            "ae",
            &["440-179"],
            |c| c.to_string(),
            |_, _| Err(Error::EmptyBatch),
        )
        .unwrap_err();
        assert!(err.to_string().contains("ae 440-179"), "{err}");
    }

    #[test]
    fn report_json_round_trip() {
        let r = report(80.02232142857143, 12.5);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn partition_sweep_emits_one_point_per_fraction() {
        let pts = partition_sweep(&[0.5, 0.6, 0.75, 0.9], |f| Ok(report(80.0, f))).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[2].eeg.median, 0.75);
    }

    proptest! {
        #[test]
        fn tsv_round_trips(points in proptest::collection::btree_map(0u32..10_000, -1e6f64..1e6, 1..20)) {
            let pts: Vec<CurvePoint> = points.iter().map(|(&c, &p)| CurvePoint { cr: c as f64 / 100.0 + 1e-7, prd: p }).collect();
            let curves = vec![Curve::new("dwt", "eeg", pts.clone()).unwrap(), Curve::new("ae", "emg", pts).unwrap()];
            prop_assert_eq!(parse_curves_tsv(&curves_to_tsv(&curves)).unwrap(), curves);
        }

        #[test]
        fn cr_strictly_decreasing_in_m(n in 1usize..5000, m in 0usize..5000) {
            prop_assume!(m < n);
            prop_assert!(compression_ratio(m, n).unwrap() > compression_ratio(m + 1, n).unwrap());
        }

        #[test]
        fn prd_scale_and_permutation_invariant(
            vals in proptest::collection::vec((0.1f64..1.0, 0.0f64..1.0), 6),
            alpha in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        ) {
            let x = RealMatrix::new(2, 3, vals.iter().map(|v| v.0).collect()).unwrap();
            let r = RealMatrix::new(2, 3, vals.iter().map(|v| v.1).collect()).unwrap();
            let base = distortion_prd(&x, &r).unwrap();
            let scaled = distortion_prd(&x.scale(alpha), &r.scale(alpha)).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
            let perm = [2, 0, 1];
            let permuted = distortion_prd(&x.select_columns(&perm), &r.select_columns(&perm)).unwrap();
            prop_assert!((base - permuted).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn accuracy_invariant_under_relabeling(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..50)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let flip = |v: &[usize]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
            prop_assert_eq!(accuracy(&p, &t).unwrap(), accuracy(&flip(&p), &flip(&t)).unwrap());
        }
    }
}
