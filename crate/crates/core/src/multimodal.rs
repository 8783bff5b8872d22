//! Two-pathway multimodal autoencoder.
//!
//! Each modality runs through its own stacked encoder. A joint layer maps
//! each pathway's top representation through its own sigmoid projection and
//! sums the two, giving one shared code `z` with entries in (0, 2):
//!
//! ```text
//! z = sigmoid(J_e t_e + b_e) + sigmoid(J_m t_m + b_m)
//! ```
//!
//! Decoding mirrors this with the joint weights transposed, then unwinds each
//! pathway's tied decoders. An optional softmax head classifies from `z`.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    glorot_fill, greedy_pretrain, minibatch_loop, StackedEncoder, TrainConfig,
};
use crate::error::{Error, Result};
use crate::nn::{self, ActivationKind, LossKind, RealMatrix};
use crate::seed::{self, derive_seed};

/// One pathway's projection into (and back out of) the joint code.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBranch {
    /// Shape `(J, top_dim)`.
    pub weight: RealMatrix,
    /// Shape `(J, 1)`.
    pub enc_bias: RealMatrix,
    /// Shape `(top_dim, 1)`, used on the decode path.
    pub dec_bias: RealMatrix,
}

impl JointBranch {
    pub fn zeros(top_dim: usize, joint_dim: usize) -> Self {
        Self {
            weight: RealMatrix::zeros(joint_dim, top_dim),
            enc_bias: RealMatrix::zeros(joint_dim, 1),
            dec_bias: RealMatrix::zeros(top_dim, 1),
        }
    }

    fn project(&self, top: &RealMatrix) -> Result<RealMatrix> {
        Ok(nn::activate(
            ActivationKind::Sigmoid,
            &nn::affine(&self.weight, top, self.enc_bias.as_slice())?,
        ))
    }

    fn unproject(&self, z: &RealMatrix) -> Result<RealMatrix> {
        Ok(nn::activate(
            ActivationKind::Sigmoid,
            &nn::affine_transposed(&self.weight, z, self.dec_bias.as_slice())?,
        ))
    }

    fn params(&self) -> [RealMatrix; 3] {
        [
            self.weight.clone(),
            self.enc_bias.clone(),
            self.dec_bias.clone(),
        ]
    }

    fn params_mut(&mut self) -> [&mut RealMatrix; 3] {
        [&mut self.weight, &mut self.enc_bias, &mut self.dec_bias]
    }

    fn zero_grads(&self) -> Vec<RealMatrix> {
        self.params()
            .iter()
            .map(|p| RealMatrix::zeros(p.rows(), p.cols()))
            .collect()
    }

    fn from_params(params: &[RealMatrix], like: &Self) -> Result<Self> {
        for (p, q) in params.iter().zip(like.params().iter()) {
            if p.shape() != q.shape() {
                return Err(Error::shape(
                    "JointBranch::from_params",
                    q.shape(),
                    p.shape(),
                ));
            }
        }
        Ok(Self {
            weight: params[0].clone(),
            enc_bias: params[1].clone(),
            dec_bias: params[2].clone(),
        })
    }
}

/// Softmax classifier over a code vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    /// Shape `(L, code_dim)`.
    pub weight: RealMatrix,
    /// Shape `(L, 1)`.
    pub bias: RealMatrix,
    pub labels: Vec<String>,
}

impl SoftmaxHead {
    pub fn zeros(code_dim: usize, labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a softmax head needs at least 2 classes, got {}",
                labels.len()
            )));
        }
        Ok(Self {
            weight: RealMatrix::zeros(labels.len(), code_dim),
            bias: RealMatrix::zeros(labels.len(), 1),
            labels,
        })
    }

    pub fn glorot(code_dim: usize, labels: Vec<String>, rng: &mut seed::Rng) -> Result<Self> {
        let mut head = Self::zeros(code_dim, labels)?;
        glorot_fill(&mut head.weight, rng);
        Ok(head)
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn probabilities(&self, code: &RealMatrix) -> Result<RealMatrix> {
        Ok(nn::softmax(&nn::affine(
            &self.weight,
            code,
            self.bias.as_slice(),
        )?))
    }

    /// Cross-entropy `-(1/n) Σ log p[label]`, and `∂/∂logits`.
    fn loss_and_delta(&self, code: &RealMatrix, labels: &[usize]) -> Result<(f64, RealMatrix)> {
        let n = code.cols();
        check_labels(labels, n, self.classes())?;
        let mut p = self.probabilities(code)?;
        let mut total = 0.0;
        for (j, &label) in labels.iter().enumerate() {
            total -= p.get(label, j).ln();
            p.set(label, j, p.get(label, j) - 1.0);
        }
        Ok((total / n as f64, p.scale(1.0 / n as f64)))
    }

    fn params(&self) -> [RealMatrix; 2] {
        [self.weight.clone(), self.bias.clone()]
    }

    fn params_mut(&mut self) -> [&mut RealMatrix; 2] {
        [&mut self.weight, &mut self.bias]
    }

    fn with_params(&self, params: &[RealMatrix]) -> Result<Self> {
        if params[0].shape() != self.weight.shape() || params[1].shape() != self.bias.shape() {
            return Err(Error::shape(
                "SoftmaxHead::with_params",
                self.weight.shape(),
                params[0].shape(),
            ));
        }
        Ok(Self {
            weight: params[0].clone(),
            bias: params[1].clone(),
            labels: self.labels.clone(),
        })
    }
}

pub fn default_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| c.to_string()).collect()
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape("labels", (labels.len(), 1), (n, 1)));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Paired samples of both modalities; a missing modality is an all-zero column.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    pub eeg: RealMatrix,
    pub emg: RealMatrix,
    pub presence: Vec<(bool, bool)>,
}

impl MultimodalBatch {
    pub fn new(eeg: RealMatrix, emg: RealMatrix, presence: Vec<(bool, bool)>) -> Result<Self> {
        if eeg.cols() != emg.cols() || presence.len() != eeg.cols() {
            return Err(Error::shape("MultimodalBatch", eeg.shape(), emg.shape()));
        }
        for (j, &(e, m)) in presence.iter().enumerate() {
            if !e && (0..eeg.rows()).any(|i| eeg.get(i, j) != 0.0) {
                return Err(Error::Domain(format!(
                    "sample {j}: absent EEG column is not zero"
                )));
            }
            if !m && (0..emg.rows()).any(|i| emg.get(i, j) != 0.0) {
                return Err(Error::Domain(format!(
                    "sample {j}: absent EMG column is not zero"
                )));
            }
        }
        Ok(Self { eeg, emg, presence })
    }

    /// Both modalities present for every sample.
    pub fn complete(eeg: RealMatrix, emg: RealMatrix) -> Result<Self> {
        let n = eeg.cols();
        Self::new(eeg, emg, vec![(true, true); n])
    }

    pub fn len(&self) -> usize {
        self.presence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.presence.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            eeg: self.eeg.select_columns(idx),
            emg: self.emg.select_columns(idx),
            presence: idx.iter().map(|&i| self.presence[i]).collect(),
        }
    }

    /// Same samples with the EMG block zeroed.
    pub fn eeg_only(&self) -> Self {
        Self {
            eeg: self.eeg.clone(),
            emg: RealMatrix::zeros(self.emg.rows(), self.emg.cols()),
            presence: self.presence.iter().map(|&(e, _)| (e, false)).collect(),
        }
    }

    /// Same samples with the EEG block zeroed.
    pub fn emg_only(&self) -> Self {
        Self {
            eeg: RealMatrix::zeros(self.eeg.rows(), self.eeg.cols()),
            emg: self.emg.clone(),
            presence: self.presence.iter().map(|&(_, m)| (false, m)).collect(),
        }
    }
}

/// Augmented inputs paired with clean reconstruction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub inputs: MultimodalBatch,
    pub target_eeg: RealMatrix,
    pub target_emg: RealMatrix,
}

/// Triples a complete batch into `[both | EEG only | EMG only]` blocks, in that
/// order, with sample order preserved inside each block. Targets are the clean
/// batch tiled three times.
pub fn augment_modality_dropout(batch: &MultimodalBatch) -> Result<AugmentedBatch> {
    if batch.presence.iter().any(|&(e, m)| !(e && m)) {
        return Err(Error::Domain(
            "modality dropout needs both modalities on every sample".into(),
        ));
    }
    let eeg_only = batch.eeg_only();
    let emg_only = batch.emg_only();
    let inputs = MultimodalBatch {
        eeg: RealMatrix::hconcat(&[&batch.eeg, &eeg_only.eeg, &emg_only.eeg])?,
        emg: RealMatrix::hconcat(&[&batch.emg, &eeg_only.emg, &emg_only.emg])?,
        presence: [batch.presence.clone(), eeg_only.presence, emg_only.presence].concat(),
    };
    Ok(AugmentedBatch {
        inputs,
        target_eeg: RealMatrix::hconcat(&[&batch.eeg, &batch.eeg, &batch.eeg])?,
        target_emg: RealMatrix::hconcat(&[&batch.emg, &batch.emg, &batch.emg])?,
    })
}

/// Which parameters joint training updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateScope {
    /// Every pathway, joint, and head parameter.
    #[default]
    All,
    /// Joint branches only; pretrained pathways stay frozen.
    JointOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalModel {
    pub eeg: StackedEncoder,
    pub emg: StackedEncoder,
    pub joint_eeg: JointBranch,
    pub joint_emg: JointBranch,
    pub head: Option<SoftmaxHead>,
    /// Set once both pathways come out of greedy pretraining.
    pub pretrained: bool,
}

/// Per-sample classifier output.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<usize>,
    /// Shape `(L, n)`; each column sums to 1.
    pub probabilities: RealMatrix,
}

/// Column-wise argmax, ties toward the lower index.
pub fn argmax_columns(p: &RealMatrix) -> Vec<usize> {
    (0..p.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..p.rows() {
                if p.get(i, j) > p.get(best, j) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Everything one gradient evaluation needs besides the model.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub inputs: &'a MultimodalBatch,
    pub target_eeg: &'a RealMatrix,
    pub target_emg: &'a RealMatrix,
    pub labels: Option<&'a [usize]>,
    pub weight_decay: f64,
}

impl MultimodalModel {
    /// Joint layer on top of two pretrained pathways, Glorot-initialized from `seed`.
    pub fn from_pretrained(
        eeg: StackedEncoder,
        emg: StackedEncoder,
        joint_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::with_zero_joint(eeg, emg, joint_dim)?;
        let mut rng = seed::rng_for(seed, "joint-init");
        glorot_fill(&mut model.joint_eeg.weight, &mut rng);
        glorot_fill(&mut model.joint_emg.weight, &mut rng);
        model.pretrained = true;
        Ok(model)
    }

    /// Joint layer with zero weights and biases; `pretrained` is false.
    pub fn with_zero_joint(
        eeg: StackedEncoder,
        emg: StackedEncoder,
        joint_dim: usize,
    ) -> Result<Self> {
        if joint_dim == 0 {
            return Err(Error::InvalidConfig("joint dimension must be >= 1".into()));
        }
        if joint_dim > eeg.output_dim().min(emg.output_dim()) {
            log::warn!(
                "joint dimension {joint_dim} exceeds a pathway's top dimension ({}, {}): expansion, not compression",
                eeg.output_dim(),
                emg.output_dim()
            );
        }
        let joint_eeg = JointBranch::zeros(eeg.output_dim(), joint_dim);
        let joint_emg = JointBranch::zeros(emg.output_dim(), joint_dim);
        Ok(Self {
            eeg,
            emg,
            joint_eeg,
            joint_emg,
            head: None,
            pretrained: false,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.joint_eeg.weight.rows()
    }

    /// `(X_e, X_m)`.
    pub fn source_dims(&self) -> (usize, usize) {
        (self.eeg.input_dim(), self.emg.input_dim())
    }

    fn check_batch(&self, batch: &MultimodalBatch) -> Result<()> {
        if batch.eeg.rows() != self.eeg.input_dim() {
            return Err(Error::shape(
                "joint_forward eeg",
                (self.eeg.input_dim(), 0),
                batch.eeg.shape(),
            ));
        }
        if batch.emg.rows() != self.emg.input_dim() {
            return Err(Error::shape(
                "joint_forward emg",
                (self.emg.input_dim(), 0),
                batch.emg.shape(),
            ));
        }
        Ok(())
    }

    /// Shared code `z`, shape `(J, n)`.
    pub fn joint_forward(&self, batch: &MultimodalBatch) -> Result<RealMatrix> {
        self.check_batch(batch)?;
        let u_e = self.joint_eeg.project(&self.eeg.forward(&batch.eeg)?)?;
        let u_m = self.joint_emg.project(&self.emg.forward(&batch.emg)?)?;
        u_e.add(&u_m)
    }

    /// Reconstructions `(eeg, emg)` from a code.
    pub fn decode(&self, z: &RealMatrix) -> Result<(RealMatrix, RealMatrix)> {
        if z.rows() != self.code_dim() {
            return Err(Error::shape(
                "multimodal_decode",
                (self.code_dim(), 0),
                z.shape(),
            ));
        }
        let eeg = self.eeg.decode(&self.joint_eeg.unproject(z)?)?;
        let emg = self.emg.decode(&self.joint_emg.unproject(z)?)?;
        Ok((eeg, emg))
    }

    pub fn reconstruct(&self, batch: &MultimodalBatch) -> Result<(RealMatrix, RealMatrix)> {
        self.decode(&self.joint_forward(batch)?)
    }

    pub fn classify(&self, batch: &MultimodalBatch) -> Result<Classification> {
        let head = self.head.as_ref().ok_or(Error::MissingHead)?;
        let probabilities = head.probabilities(&self.joint_forward(batch)?)?;
        Ok(Classification {
            labels: argmax_columns(&probabilities),
            probabilities,
        })
    }

    /// Parameters in canonical order: EEG stack, EMG stack, EEG joint branch,
    /// EMG joint branch, then the head if present.
    pub fn params(&self) -> Vec<RealMatrix> {
        let mut p = self.eeg.params();
        p.extend(self.emg.params());
        p.extend(self.joint_eeg.params());
        p.extend(self.joint_emg.params());
        if let Some(head) = &self.head {
            p.extend(head.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealMatrix> {
        let mut p = self.eeg.params_mut();
        p.extend(self.emg.params_mut());
        p.extend(self.joint_eeg.params_mut());
        p.extend(self.joint_emg.params_mut());
        if let Some(head) = &mut self.head {
            p.extend(head.params_mut());
        }
        p
    }

    /// Index range of the joint-branch parameters in [`params`](Self::params).
    pub fn joint_param_range(&self) -> std::ops::Range<usize> {
        let start = self.eeg.param_count() + self.emg.param_count();
        start..start + 6
    }

    pub fn with_params(&self, params: &[RealMatrix]) -> Result<Self> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(Error::shape(
                "MultimodalModel::with_params",
                (expected, 1),
                (params.len(), 1),
            ));
        }
        let ne = self.eeg.param_count();
        let nm = self.emg.param_count();
        let j = ne + nm;
        let head = match &self.head {
            Some(h) => Some(h.with_params(&params[j + 6..])?),
            None => None,
        };
        Ok(Self {
            eeg: self.eeg.with_params(&params[..ne])?,
            emg: self.emg.with_params(&params[ne..j])?,
            joint_eeg: JointBranch::from_params(&params[j..j + 3], &self.joint_eeg)?,
            joint_emg: JointBranch::from_params(&params[j + 3..j + 6], &self.joint_emg)?,
            head,
            pretrained: self.pretrained,
        })
    }

    fn weight_norm_sq(&self) -> f64 {
        self.eeg.weight_norm_sq()
            + self.emg.weight_norm_sq()
            + self.joint_eeg.weight.frobenius_sq()
            + self.joint_emg.weight.frobenius_sq()
            + self.head.as_ref().map_or(0.0, |h| h.weight.frobenius_sq())
    }

    /// Summed squared reconstruction error of both modalities, plus
    /// cross-entropy when labels are given, plus `λ Σ ||W||²` over every weight matrix.
    pub fn objective(&self, obj: &ObjectiveInputs<'_>) -> Result<f64> {
        self.check_batch(obj.inputs)?;
        let z = self.joint_forward(obj.inputs)?;
        let (re, rm) = self.decode(&z)?;
        let mut total = nn::loss(LossKind::SquaredError, obj.target_eeg, &re)?
            + nn::loss(LossKind::SquaredError, obj.target_emg, &rm)?
            + obj.weight_decay * self.weight_norm_sq();
        if let Some(labels) = obj.labels {
            let head = self.head.as_ref().ok_or(Error::MissingHead)?;
            total += head.loss_and_delta(&z, labels)?.0;
        }
        Ok(total)
    }

    /// Objective and its gradient, aligned with [`params`](Self::params).
    pub fn objective_and_gradient(
        &self,
        obj: &ObjectiveInputs<'_>,
    ) -> Result<(f64, Vec<RealMatrix>)> {
        let batch = obj.inputs;
        self.check_batch(batch)?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let lambda = obj.weight_decay;

        // forward
        let trace_e = self.eeg.encode_trace(&batch.eeg)?;
        let trace_m = self.emg.encode_trace(&batch.emg)?;
        let top_e = trace_e.last().expect("non-empty stack");
        let top_m = trace_m.last().expect("non-empty stack");
        let u_e = self.joint_eeg.project(top_e)?;
        let u_m = self.joint_emg.project(top_m)?;
        let z = u_e.add(&u_m)?;
        let d_e = self.joint_eeg.unproject(&z)?;
        let d_m = self.joint_emg.unproject(&z)?;
        let outs_e = self.eeg.decode_trace(&d_e)?;
        let outs_m = self.emg.decode_trace(&d_m)?;

        let mut objective = nn::loss(LossKind::SquaredError, obj.target_eeg, &outs_e[0])?
            + nn::loss(LossKind::SquaredError, obj.target_emg, &outs_m[0])?
            + lambda * self.weight_norm_sq();

        let mut g_eeg = self.eeg.zero_grads();
        let mut g_emg = self.emg.zero_grads();
        let mut g_je = self.joint_eeg.zero_grads();
        let mut g_jm = self.joint_emg.zero_grads();
        let scale = 2.0 / n as f64;

        // decode paths back to z
        let mut g_z = RealMatrix::zeros(z.rows(), n);
        for (stack, branch, outs, d, target, grads, g_branch) in [
            (
                &self.eeg,
                &self.joint_eeg,
                &outs_e,
                &d_e,
                obj.target_eeg,
                &mut g_eeg,
                &mut g_je,
            ),
            (
                &self.emg,
                &self.joint_emg,
                &outs_m,
                &d_m,
                obj.target_emg,
                &mut g_emg,
                &mut g_jm,
            ),
        ] {
            let g_recon = outs[0].sub(target)?.scale(scale);
            let g_d = stack.decoder_backward(d, outs, g_recon, grads)?;
            let delta = g_d.hadamard(&d.map(|v| v * (1.0 - v)))?;
            g_branch[0].add_assign(&z.matmul_nt(&delta)?)?;
            g_branch[2].add_assign(&delta.row_sums())?;
            g_z.add_assign(&branch.weight.matmul(&delta)?)?;
        }

        // classifier
        let mut g_head = Vec::new();
        if let Some(head) = &self.head {
            match obj.labels {
                Some(labels) => {
                    let (ce, delta) = head.loss_and_delta(&z, labels)?;
                    objective += ce;
                    g_head.push(delta.matmul_nt(&z)?);
                    g_head.push(delta.row_sums());
                    g_z.add_assign(&head.weight.matmul_tn(&delta)?)?;
                }
                None => {
                    g_head.push(RealMatrix::zeros(head.weight.rows(), head.weight.cols()));
                    g_head.push(RealMatrix::zeros(head.bias.rows(), 1));
                }
            }
        } else if obj.labels.is_some() {
            return Err(Error::MissingHead);
        }

        // joint projections back into each pathway's encoder
        for (stack, branch, u, top, trace, x, grads, g_branch) in [
            (
                &self.eeg,
                &self.joint_eeg,
                &u_e,
                top_e,
                &trace_e,
                &batch.eeg,
                &mut g_eeg,
                &mut g_je,
            ),
            (
                &self.emg,
                &self.joint_emg,
                &u_m,
                top_m,
                &trace_m,
                &batch.emg,
                &mut g_emg,
                &mut g_jm,
            ),
        ] {
            let delta = g_z.hadamard(&u.map(|v| v * (1.0 - v)))?;
            g_branch[0].add_assign(&delta.matmul_nt(top)?)?;
            g_branch[1].add_assign(&delta.row_sums())?;
            let g_top = branch.weight.matmul_tn(&delta)?;
            stack.encoder_backward(x, trace, g_top, grads)?;
        }

        // weight decay on every weight matrix
        if lambda != 0.0 {
            for (stack, grads) in [(&self.eeg, &mut g_eeg), (&self.emg, &mut g_emg)] {
                for (l, layer) in stack.layers().iter().enumerate() {
                    grads[3 * l].add_assign(&layer.weight.scale(2.0 * lambda))?;
                }
            }
            g_je[0].add_assign(&self.joint_eeg.weight.scale(2.0 * lambda))?;
            g_jm[0].add_assign(&self.joint_emg.weight.scale(2.0 * lambda))?;
            if let (Some(head), Some(g)) = (&self.head, g_head.first_mut()) {
                g.add_assign(&head.weight.scale(2.0 * lambda))?;
            }
        }

        let mut grads = g_eeg;
        grads.extend(g_emg);
        grads.extend(g_je);
        grads.extend(g_jm);
        grads.extend(g_head);
        Ok((objective, grads))
    }

    fn apply_step(&mut self, grads: &[RealMatrix], lr: f64, scope: UpdateScope) -> Result<()> {
        let range = self.joint_param_range();
        let (params, grads): (Vec<&mut RealMatrix>, Vec<RealMatrix>) = self
            .params_mut()
            .into_iter()
            .zip(grads.iter())
            .enumerate()
            .filter(|(i, _)| scope == UpdateScope::All || range.contains(i))
            .map(|(_, (p, g))| (p, g.clone()))
            .unzip();
        nn::sgd_step(params, &grads, lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointTraining {
    pub scope: UpdateScope,
    /// Permit joint training on pathways that skipped greedy pretraining.
    pub allow_unpretrained: bool,
}

/// Trains the joint model on modality-dropout augmented data with clean targets.
/// `batch` must have both modalities on every sample.
pub fn train_multimodal(
    model: MultimodalModel,
    batch: &MultimodalBatch,
    cfg: &TrainConfig,
    opts: JointTraining,
) -> Result<(MultimodalModel, Vec<f64>)> {
    cfg.validate()?;
    if !model.pretrained && !opts.allow_unpretrained {
        return Err(Error::Untrained);
    }
    model.check_batch(batch)?;
    let aug = augment_modality_dropout(batch)?;
    let mut model = model;
    let full = cfg.batch_size >= aug.inputs.len();
    let history = minibatch_loop(aug.inputs.len(), cfg, "multimodal", |idx| {
        let (inputs, te, tm);
        let obj = if full {
            ObjectiveInputs {
                inputs: &aug.inputs,
                target_eeg: &aug.target_eeg,
                target_emg: &aug.target_emg,
                labels: None,
                weight_decay: cfg.weight_decay,
            }
        } else {
            inputs = aug.inputs.select(idx);
            te = aug.target_eeg.select_columns(idx);
            tm = aug.target_emg.select_columns(idx);
            ObjectiveInputs {
                inputs: &inputs,
                target_eeg: &te,
                target_emg: &tm,
                labels: None,
                weight_decay: cfg.weight_decay,
            }
        };
        let (value, grads) = model.objective_and_gradient(&obj)?;
        if value.is_finite() {
            model.apply_step(&grads, cfg.lr, opts.scope)?;
        }
        Ok(value)
    })?;
    Ok((model, history))
}

/// Attaches (if needed) a softmax head on the joint code and trains every
/// layer on reconstruction plus cross-entropy.
pub fn fine_tune(
    model: MultimodalModel,
    batch: &MultimodalBatch,
    labels: &[usize],
    class_names: &[String],
    cfg: &TrainConfig,
) -> Result<(MultimodalModel, Vec<f64>)> {
    cfg.validate()?;
    model.check_batch(batch)?;
    let mut model = model;
    if model.head.as_ref().is_none_or(|h| h.labels != class_names) {
        let mut rng = seed::rng_for(cfg.seed, "head-init");
        model.head = Some(SoftmaxHead::glorot(
            model.code_dim(),
            class_names.to_vec(),
            &mut rng,
        )?);
    }
    check_labels(labels, batch.len(), class_names.len())?;
    let full = cfg.batch_size >= batch.len();
    let history = minibatch_loop(batch.len(), cfg, "fine-tune", |idx| {
        let (sub, sub_labels);
        let (inputs, labels): (&MultimodalBatch, &[usize]) = if full {
            (batch, labels)
        } else {
            sub = batch.select(idx);
            sub_labels = idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
            (&sub, &sub_labels)
        };
        let obj = ObjectiveInputs {
            inputs,
            target_eeg: &inputs.eeg,
            target_emg: &inputs.emg,
            labels: Some(labels),
            weight_decay: cfg.weight_decay,
        };
        let (value, grads) = model.objective_and_gradient(&obj)?;
        if value.is_finite() {
            model.apply_step(&grads, cfg.lr, UpdateScope::All)?;
        }
        Ok(value)
    })?;
    Ok((model, history))
}

/// Single-modality stacked autoencoder with a softmax head on its top layer.
/// Serves as the unimodal baseline for classification comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalClassifier {
    pub stack: StackedEncoder,
    pub head: SoftmaxHead,
}

impl UnimodalClassifier {
    pub fn new(stack: StackedEncoder, class_names: Vec<String>, seed: u64) -> Result<Self> {
        let mut rng = seed::rng_for(seed, "head-init");
        let head = SoftmaxHead::glorot(stack.output_dim(), class_names, &mut rng)?;
        Ok(Self { stack, head })
    }

    pub fn classify(&self, x: &RealMatrix) -> Result<Classification> {
        let probabilities = self.head.probabilities(&self.stack.forward(x)?)?;
        Ok(Classification {
            labels: argmax_columns(&probabilities),
            probabilities,
        })
    }

    pub fn params(&self) -> Vec<RealMatrix> {
        let mut p = self.stack.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealMatrix> {
        let mut p = self.stack.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn with_params(&self, params: &[RealMatrix]) -> Result<Self> {
        let k = self.stack.param_count();
        if params.len() != k + 2 {
            return Err(Error::shape(
                "UnimodalClassifier::with_params",
                (k + 2, 1),
                (params.len(), 1),
            ));
        }
        Ok(Self {
            stack: self.stack.with_params(&params[..k])?,
            head: self.head.with_params(&params[k..])?,
        })
    }

    pub fn objective(&self, x: &RealMatrix, labels: &[usize], weight_decay: f64) -> Result<f64> {
        let code = self.stack.forward(x)?;
        let recon = self.stack.decode(&code)?;
        Ok(nn::loss(LossKind::SquaredError, x, &recon)?
            + self.head.loss_and_delta(&code, labels)?.0
            + weight_decay * (self.stack.weight_norm_sq() + self.head.weight.frobenius_sq()))
    }

    pub fn objective_and_gradient(
        &self,
        x: &RealMatrix,
        labels: &[usize],
        weight_decay: f64,
    ) -> Result<(f64, Vec<RealMatrix>)> {
        let n = x.cols();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let trace = self.stack.encode_trace(x)?;
        let code = trace.last().expect("non-empty stack");
        let outs = self.stack.decode_trace(code)?;
        let (ce, delta) = self.head.loss_and_delta(code, labels)?;
        let objective = nn::loss(LossKind::SquaredError, x, &outs[0])?
            + ce
            + weight_decay * (self.stack.weight_norm_sq() + self.head.weight.frobenius_sq());

        let mut grads = self.stack.zero_grads();
        let g_recon = outs[0].sub(x)?.scale(2.0 / n as f64);
        let mut g_code = self
            .stack
            .decoder_backward(code, &outs, g_recon, &mut grads)?;
        let mut g_head_w = delta.matmul_nt(code)?;
        let g_head_b = delta.row_sums();
        g_code.add_assign(&self.head.weight.matmul_tn(&delta)?)?;
        self.stack.encoder_backward(x, &trace, g_code, &mut grads)?;
        if weight_decay != 0.0 {
            for (l, layer) in self.stack.layers().iter().enumerate() {
                grads[3 * l].add_assign(&layer.weight.scale(2.0 * weight_decay))?;
            }
            g_head_w.add_assign(&self.head.weight.scale(2.0 * weight_decay))?;
        }
        grads.push(g_head_w);
        grads.push(g_head_b);
        Ok((objective, grads))
    }
}

/// Fine-tunes a unimodal classifier on reconstruction plus cross-entropy.
pub fn fine_tune_unimodal(
    model: UnimodalClassifier,
    x: &RealMatrix,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(UnimodalClassifier, Vec<f64>)> {
    cfg.validate()?;
    check_labels(labels, x.cols(), model.head.classes())?;
    let mut model = model;
    let full = cfg.batch_size >= x.cols();
    let history = minibatch_loop(x.cols(), cfg, "unimodal fine-tune", |idx| {
        let (sub, sub_labels);
        let (xb, lb): (&RealMatrix, &[usize]) = if full {
            (x, labels)
        } else {
            sub = x.select_columns(idx);
            sub_labels = idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
            (&sub, &sub_labels)
        };
        let (value, grads) = model.objective_and_gradient(xb, lb, cfg.weight_decay)?;
        if value.is_finite() {
            nn::sgd_step(model.params_mut(), &grads, cfg.lr)?;
        }
        Ok(value)
    })?;
    Ok((model, history))
}

/// Pathway and joint dimensions of one architecture row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[X_e, H1, ...]`.
    pub eeg_dims: Vec<usize>,
    /// `[X_m, H1, ...]`.
    pub emg_dims: Vec<usize>,
    pub joint_dim: usize,
    pub activation: ActivationKind,
}

impl Architecture {
    /// One hidden layer per pathway of `pathway_dim` units and a `joint_dim` code.
    pub fn from_row(
        eeg_input: usize,
        emg_input: usize,
        pathway_dim: usize,
        joint_dim: usize,
    ) -> Self {
        Self {
            eeg_dims: vec![eeg_input, pathway_dim],
            emg_dims: vec![emg_input, pathway_dim],
            joint_dim,
            activation: ActivationKind::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eeg_dims.len() < 2 || self.emg_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "each pathway needs at least one hidden layer".into(),
            ));
        }
        if self.eeg_dims.iter().chain(&self.emg_dims).any(|&d| d == 0) || self.joint_dim == 0 {
            return Err(Error::InvalidConfig(
                "architecture dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stage settings for the full training pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pretrain: TrainConfig,
    pub joint: TrainConfig,
    pub finetune: Option<TrainConfig>,
    pub scope: UpdateScope,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pretrain: TrainConfig::default(),
            joint: TrainConfig {
                epochs: 100,
                ..TrainConfig::default()
            },
            finetune: None,
            scope: UpdateScope::All,
        }
    }
}

impl PipelineConfig {
    /// Per-stage configs with seeds derived from `root`.
    pub fn seeded(&self, root: u64) -> Self {
        Self {
            pretrain: self.pretrain.with_seed(derive_seed(root, "pretrain")),
            joint: self.joint.with_seed(derive_seed(root, "joint")),
            finetune: self
                .finetune
                .map(|c| c.with_seed(derive_seed(root, "finetune"))),
            scope: self.scope,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub pretrain_eeg: Vec<Vec<f64>>,
    pub pretrain_emg: Vec<Vec<f64>>,
    pub joint: Vec<f64>,
    pub finetune: Vec<f64>,
}

impl TrainingLog {
    /// `stage<TAB>layer<TAB>epoch<TAB>objective` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("stage\tlayer\tepoch\tobjective\n");
        for (stage, layers) in [
            ("pretrain-eeg", &self.pretrain_eeg),
            ("pretrain-emg", &self.pretrain_emg),
        ] {
            for (l, hist) in layers.iter().enumerate() {
                for (e, v) in hist.iter().enumerate() {
                    out.push_str(&format!("{stage}\t{l}\t{e}\t{v}\n"));
                }
            }
        }
        for (stage, hist) in [("joint", &self.joint), ("finetune", &self.finetune)] {
            for (e, v) in hist.iter().enumerate() {
                out.push_str(&format!("{stage}\t-\t{e}\t{v}\n"));
            }
        }
        out
    }
}

/// Greedy pathway pretraining, joint training on augmented data, and optional
/// fine-tuning when labels are given. Every stage's seed derives from `seed`.
pub fn train_pipeline(
    arch: &Architecture,
    pipeline: &PipelineConfig,
    batch: &MultimodalBatch,
    labels: Option<(&[usize], &[String])>,
    seed: u64,
) -> Result<(MultimodalModel, TrainingLog)> {
    arch.validate()?;
    let cfg = pipeline.seeded(seed);
    let pre_e = cfg
        .pretrain
        .with_seed(derive_seed(cfg.pretrain.seed, "eeg"));
    let pre_m = cfg
        .pretrain
        .with_seed(derive_seed(cfg.pretrain.seed, "emg"));
    let (eeg, hist_e) = greedy_pretrain(&arch.eeg_dims, arch.activation, &batch.eeg, &pre_e)?;
    let (emg, hist_m) = greedy_pretrain(&arch.emg_dims, arch.activation, &batch.emg, &pre_m)?;
    let model = MultimodalModel::from_pretrained(eeg, emg, arch.joint_dim, cfg.joint.seed)?;
    let (mut model, joint_hist) = train_multimodal(
        model,
        batch,
        &cfg.joint,
        JointTraining {
            scope: cfg.scope,
            allow_unpretrained: false,
        },
    )?;
    let mut log = TrainingLog {
        pretrain_eeg: hist_e,
        pretrain_emg: hist_m,
        joint: joint_hist,
        finetune: Vec::new(),
    };
    if let (Some(ft), Some((labels, names))) = (cfg.finetune, labels) {
        let (tuned, hist) = fine_tune(model, batch, labels, names, &ft)?;
        model = tuned;
        log.finetune = hist;
    }
    Ok((model, log))
}

/// Unimodal baseline with the same stage budget: greedy pretraining of
/// `dims`, then fine-tuning with a softmax head on the top layer.
#[allow(clippy::too_many_arguments)]
pub fn train_unimodal_pipeline(
    dims: &[usize],
    activation: ActivationKind,
    x: &RealMatrix,
    labels: &[usize],
    class_names: &[String],
    pretrain: &TrainConfig,
    finetune: &TrainConfig,
    seed: u64,
) -> Result<UnimodalClassifier> {
    let pre = pretrain.with_seed(derive_seed(seed, "unimodal-pretrain"));
    let ft = finetune.with_seed(derive_seed(seed, "unimodal-finetune"));
    let (stack, _) = greedy_pretrain(dims, activation, x, &pre)?;
    let model = UnimodalClassifier::new(stack, class_names.to_vec(), ft.seed)?;
    Ok(fine_tune_unimodal(model, x, labels, &ft)?.0)
}
