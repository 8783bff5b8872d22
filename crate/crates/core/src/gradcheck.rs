//! Finite-difference gradient suite over seeded miniature models.

use rand::Rng as _;
use serde::Serialize;

use crate::autoencoder::{StackedEncoder, TiedAutoencoder};
use crate::error::Result;
use crate::multimodal::{
    augment_modality_dropout, default_class_names, MultimodalBatch, MultimodalModel,
    ObjectiveInputs, SoftmaxHead, UnimodalClassifier,
};
use crate::nn::{self, ActivationKind, RealMatrix};
use crate::seed;

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    /// Single tied autoencoder.
    Autoencoder,
    /// Stacked encoder with a softmax head.
    Stacked,
    /// Multimodal reconstruction objective on modality-dropout data.
    Multimodal,
    /// Multimodal reconstruction plus cross-entropy.
    FineTune,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub kind: CaseKind,
    pub params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut seed::Rng) -> RealMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    RealMatrix::new(rows, cols, data).expect("finite values")
}

fn randomize_biases(params: Vec<&mut RealMatrix>, rng: &mut seed::Rng) {
    for p in params {
        if p.cols() == 1 {
            for v in p.as_mut_slice() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
}

fn compare(
    analytic: &mut [RealMatrix],
    params: &[RealMatrix],
    perturbation: f64,
    f: impl FnMut(&[RealMatrix]) -> f64,
) -> Result<f64> {
    if perturbation != 0.0 {
        analytic[0].as_mut_slice()[0] += perturbation;
    }
    let numeric = nn::finite_difference_grad(f, params, nn::DEFAULT_FD_STEP)?;
    nn::max_relative_error(analytic, &numeric)
}

fn activation_for(i: u64) -> ActivationKind {
    if i.is_multiple_of(2) {
        ActivationKind::Sigmoid
    } else {
        ActivationKind::Identity
    }
}

fn autoencoder_case(i: u64, perturbation: f64) -> Result<(usize, f64)> {
    let mut rng = seed::rng_for(i, "gradcheck-ae");
    let (input, hidden) = (4 + i as usize % 3, 2 + i as usize % 2);
    let mut ae =
        TiedAutoencoder::glorot(input, hidden, activation_for(i), 0.01 * i as f64, &mut rng);
    randomize_biases(ae.params_mut(), &mut rng);
    let x = uniform(input, 5, &mut rng);
    let mut analytic = ae.gradient(&x)?;
    let params = ae.params();
    let err = compare(&mut analytic, &params, perturbation, |p| {
        ae.with_params(p)
            .and_then(|m| m.objective(&x))
            .unwrap_or(f64::NAN)
    })?;
    Ok((params.iter().map(RealMatrix::len).sum(), err))
}

fn stacked_case(i: u64, perturbation: f64) -> Result<(usize, f64)> {
    let mut rng = seed::rng_for(i, "gradcheck-stacked");
    let dims = [6, 5, 4, 2 + i as usize % 2];
    let stack = StackedEncoder::glorot(
        &dims[..3 + i as usize % 2],
        ActivationKind::Sigmoid,
        0.0,
        &mut rng,
    )?;
    let mut model = UnimodalClassifier::new(stack, default_class_names(2 + i as usize % 2), i)?;
    randomize_biases(model.params_mut(), &mut rng);
    let x = uniform(6, 5, &mut rng);
    let labels: Vec<usize> = (0..5)
        .map(|j| (j + i as usize) % model.head.classes())
        .collect();
    let decay = 0.02 * i as f64;
    let (_, mut analytic) = model.objective_and_gradient(&x, &labels, decay)?;
    let params = model.params();
    let err = compare(&mut analytic, &params, perturbation, |p| {
        model
            .with_params(p)
            .and_then(|m| m.objective(&x, &labels, decay))
            .unwrap_or(f64::NAN)
    })?;
    Ok((params.iter().map(RealMatrix::len).sum(), err))
}

fn multimodal_model(
    i: u64,
    classes: Option<usize>,
    rng: &mut seed::Rng,
) -> Result<MultimodalModel> {
    let deep = i % 2 == 1;
    let eeg_dims: &[usize] = if deep { &[5, 4, 3] } else { &[5, 3] };
    let emg_dims: &[usize] = if deep { &[4, 4, 3] } else { &[4, 3] };
    let eeg = StackedEncoder::glorot(eeg_dims, ActivationKind::Sigmoid, 0.0, rng)?;
    let emg = StackedEncoder::glorot(emg_dims, ActivationKind::Sigmoid, 0.0, rng)?;
    let mut model = MultimodalModel::from_pretrained(eeg, emg, 2 + i as usize % 2, i)?;
    randomize_biases(model.params_mut(), rng);
    if let Some(c) = classes {
        let mut head = SoftmaxHead::glorot(model.code_dim(), default_class_names(c), rng)?;
        for v in head.bias.as_mut_slice() {
            *v = rng.random_range(-0.5..0.5);
        }
        model.head = Some(head);
    }
    Ok(model)
}

fn multimodal_case(i: u64, fine_tune: bool, perturbation: f64) -> Result<(usize, f64)> {
    let mut rng = seed::rng_for(
        i,
        if fine_tune {
            "gradcheck-finetune"
        } else {
            "gradcheck-multimodal"
        },
    );
    let classes = fine_tune.then_some(2 + i as usize % 2);
    let model = multimodal_model(i, classes, &mut rng)?;
    let clean = MultimodalBatch::complete(uniform(5, 3, &mut rng), uniform(4, 3, &mut rng))?;
    let labels: Vec<usize>;
    let (inputs, target_eeg, target_emg) = if fine_tune {
        labels = (0..3)
            .map(|j| (j + i as usize) % classes.unwrap_or(2))
            .collect();
        (clean.clone(), clean.eeg.clone(), clean.emg.clone())
    } else {
        labels = Vec::new();
        let aug = augment_modality_dropout(&clean)?;
        (aug.inputs, aug.target_eeg, aug.target_emg)
    };
    let obj = ObjectiveInputs {
        inputs: &inputs,
        target_eeg: &target_eeg,
        target_emg: &target_emg,
        labels: fine_tune.then_some(labels.as_slice()),
        weight_decay: 0.01 * i as f64,
    };
    let (_, mut analytic) = model.objective_and_gradient(&obj)?;
    let params = model.params();
    let err = compare(&mut analytic, &params, perturbation, |p| {
        model
            .with_params(p)
            .and_then(|m| m.objective(&obj))
            .unwrap_or(f64::NAN)
    })?;
    Ok((params.iter().map(RealMatrix::len).sum(), err))
}

/// Runs the 20 seeded cases, five per kind. A nonzero `perturbation` is added
/// to the first analytic gradient entry of every case.
pub fn run_suite(tolerance: f64, perturbation: f64) -> Result<SuiteReport> {
    let mut cases = Vec::with_capacity(20);
    for kind in [
        CaseKind::Autoencoder,
        CaseKind::Stacked,
        CaseKind::Multimodal,
        CaseKind::FineTune,
    ] {
        for i in 0..5u64 {
            let (params, err) = match kind {
                CaseKind::Autoencoder => autoencoder_case(i, perturbation)?,
                CaseKind::Stacked => stacked_case(i, perturbation)?,
                CaseKind::Multimodal => multimodal_case(i, false, perturbation)?,
                CaseKind::FineTune => multimodal_case(i, true, perturbation)?,
            };
            let name = format!(
                "{}-{i}",
                serde_json::to_value(kind)
                    .expect("kind")
                    .as_str()
                    .unwrap_or("case")
            );
            cases.push(CaseResult {
                name,
                kind,
                params,
                max_rel_error: err,
                passed: err <= tolerance,
            });
        }
    }
    Ok(SuiteReport { tolerance, cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_perturbation_fails() {
        let report = run_suite(DEFAULT_TOLERANCE, 0.0).unwrap();
        assert_eq!(report.cases.len(), 20);
        assert!(report.passed(), "worst {}", report.worst());
        let broken = run_suite(DEFAULT_TOLERANCE, 1e-3).unwrap();
        assert!(broken.cases.iter().all(|c| !c.passed));
    }
}
