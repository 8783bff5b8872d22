//! Tied-weight autoencoders and greedily pretrained stacks of them.
//!
//! One layer encodes `h = f(W x + b)` and decodes `r = f(Wᵀ h + b')`. The
//! decoder weight is never stored: every decode reads `W` transposed.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ActivationKind, LossKind, RealMatrix};
use crate::seed::{self, derive_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TiedAutoencoder {
    /// Shape `(hidden, input)`.
    pub weight: RealMatrix,
    /// Shape `(hidden, 1)`.
    pub enc_bias: RealMatrix,
    /// Shape `(input, 1)`.
    pub dec_bias: RealMatrix,
    pub activation: ActivationKind,
    pub weight_decay: f64,
}

impl TiedAutoencoder {
    pub fn zeros(
        input: usize,
        hidden: usize,
        activation: ActivationKind,
        weight_decay: f64,
    ) -> Self {
        if hidden > input {
            warn!("autoencoder {input}->{hidden} expands rather than compresses");
        }
        Self {
            weight: RealMatrix::zeros(hidden, input),
            enc_bias: RealMatrix::zeros(hidden, 1),
            dec_bias: RealMatrix::zeros(input, 1),
            activation,
            weight_decay,
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(
        input: usize,
        hidden: usize,
        activation: ActivationKind,
        weight_decay: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut ae = Self::zeros(input, hidden, activation, weight_decay);
        glorot_fill(&mut ae.weight, rng);
        ae
    }

    /// Initialization used by layer-wise pretraining for a given layer config.
    pub fn initialized(
        input: usize,
        hidden: usize,
        activation: ActivationKind,
        cfg: &TrainConfig,
    ) -> Self {
        let mut rng = seed::rng_for(cfg.seed, "init");
        Self::glorot(input, hidden, activation, cfg.weight_decay, &mut rng)
    }

    pub fn from_parts(
        weight: RealMatrix,
        enc_bias: RealMatrix,
        dec_bias: RealMatrix,
        activation: ActivationKind,
        weight_decay: f64,
    ) -> Result<Self> {
        let (h, x) = weight.shape();
        if enc_bias.shape() != (h, 1) {
            return Err(Error::shape(
                "TiedAutoencoder encoder bias",
                weight.shape(),
                enc_bias.shape(),
            ));
        }
        if dec_bias.shape() != (x, 1) {
            return Err(Error::shape(
                "TiedAutoencoder decoder bias",
                weight.shape(),
                dec_bias.shape(),
            ));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Self {
            weight,
            enc_bias,
            dec_bias,
            activation,
            weight_decay,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn encode(&self, x: &RealMatrix) -> Result<RealMatrix> {
        let z = nn::affine(&self.weight, x, self.enc_bias.as_slice())?;
        Ok(nn::activate(self.activation, &z))
    }

    pub fn decode(&self, h: &RealMatrix) -> Result<RealMatrix> {
        let z = nn::affine_transposed(&self.weight, h, self.dec_bias.as_slice())?;
        Ok(nn::activate(self.activation, &z))
    }

    pub fn forward(&self, x: &RealMatrix) -> Result<(RealMatrix, RealMatrix)> {
        let h = self.encode(x)?;
        let r = self.decode(&h)?;
        Ok((h, r))
    }

    /// Mean squared reconstruction error plus `λ ||W||²`.
    pub fn objective(&self, x: &RealMatrix) -> Result<f64> {
        let (_, r) = self.forward(x)?;
        Ok(nn::loss(LossKind::SquaredError, x, &r)?
            + self.weight_decay * self.weight.frobenius_sq())
    }

    /// Gradients of [`objective`](Self::objective) in `[W, b, b']` order.
    pub fn gradient(&self, x: &RealMatrix) -> Result<Vec<RealMatrix>> {
        Ok(self.objective_and_gradient(x)?.1)
    }

    pub fn objective_and_gradient(&self, x: &RealMatrix) -> Result<(f64, Vec<RealMatrix>)> {
        let (h, r) = self.forward(x)?;
        let n = x.cols();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let act = self.activation;
        let objective = nn::loss(LossKind::SquaredError, x, &r)?
            + self.weight_decay * self.weight.frobenius_sq();

        let scale = 2.0 / n as f64;
        let delta_out = r
            .sub(x)?
            .scale(scale)
            .hadamard(&r.map(|v| act.derivative_from_output(v)))?;
        let back = self.weight.matmul(&delta_out)?;
        let delta_hidden = back.hadamard(&h.map(|v| act.derivative_from_output(v)))?;

        // W is used twice: as the encoder and, transposed, as the decoder.
        let mut grad_w = delta_hidden.matmul_nt(x)?;
        grad_w.add_assign(&h.matmul_nt(&delta_out)?)?;
        grad_w.add_assign(&self.weight.scale(2.0 * self.weight_decay))?;

        Ok((
            objective,
            vec![grad_w, delta_hidden.row_sums(), delta_out.row_sums()],
        ))
    }

    pub fn params(&self) -> Vec<RealMatrix> {
        vec![
            self.weight.clone(),
            self.enc_bias.clone(),
            self.dec_bias.clone(),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealMatrix> {
        vec![&mut self.weight, &mut self.enc_bias, &mut self.dec_bias]
    }

    /// Same architecture with replacement `[W, b, b']`.
    pub fn with_params(&self, params: &[RealMatrix]) -> Result<Self> {
        match params {
            [w, b, c] => Self::from_parts(
                w.clone(),
                b.clone(),
                c.clone(),
                self.activation,
                self.weight_decay,
            ),
            _ => Err(Error::shape(
                "TiedAutoencoder::with_params",
                (3, 1),
                (params.len(), 1),
            )),
        }
    }
}

pub(crate) fn glorot_fill(w: &mut RealMatrix, rng: &mut Rng) {
    let (fan_out, fan_in) = w.shape();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w.as_mut_slice() {
        *v = rng.random_range(-limit..=limit);
    }
}

/// Mini-batch gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 50,
            batch_size: 64,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs < 1 {
            problems.push("epochs must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Config used for stack layer `index` during greedy pretraining.
    pub fn for_layer(&self, index: usize) -> Self {
        self.with_seed(derive_seed(self.seed, &format!("layer-{index}")))
    }

    /// Key/value echo for artifact headers.
    pub fn echo(&self, prefix: &str) -> Vec<(String, String)> {
        vec![
            (format!("{prefix}.lr"), self.lr.to_string()),
            (format!("{prefix}.epochs"), self.epochs.to_string()),
            (format!("{prefix}.batch_size"), self.batch_size.to_string()),
            (
                format!("{prefix}.weight_decay"),
                self.weight_decay.to_string(),
            ),
            (format!("{prefix}.seed"), self.seed.to_string()),
        ]
    }
}

/// Shared mini-batch driver. `step` receives the sample indices of one batch,
/// applies an update, and returns the batch objective measured before it.
/// Returns the per-epoch mean of batch objectives.
pub(crate) fn minibatch_loop<F>(
    n: usize,
    cfg: &TrainConfig,
    stage: &str,
    mut step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut rng = seed::rng_for(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let value = match step(idx) {
                Ok(v) if v.is_finite() => v,
                Ok(v) => {
                    return Err(Error::Diverged {
                        stage: stage.to_string(),
                        epoch,
                        batch,
                        value: v,
                    })
                }
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        stage: stage.to_string(),
                        epoch,
                        batch,
                        value: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            sum += value;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("{stage}: epoch {epoch} objective {mean}");
        history.push(mean);
    }
    Ok(history)
}

/// Trains one tied autoencoder by mini-batch gradient descent.
/// The config's weight decay replaces the model's.
pub fn train_autoencoder(
    ae: TiedAutoencoder,
    x_train: &RealMatrix,
    cfg: &TrainConfig,
) -> Result<(TiedAutoencoder, Vec<f64>)> {
    cfg.validate()?;
    if x_train.rows() != ae.input_dim() {
        return Err(Error::shape(
            "train_autoencoder",
            ae.weight.shape(),
            x_train.shape(),
        ));
    }
    let mut ae = ae;
    ae.weight_decay = cfg.weight_decay;
    let full_batch = cfg.batch_size >= x_train.cols();
    let history = minibatch_loop(x_train.cols(), cfg, "autoencoder", |idx| {
        let batch;
        let x = if full_batch {
            x_train
        } else {
            batch = x_train.select_columns(idx);
            &batch
        };
        let (objective, grads) = ae.objective_and_gradient(x)?;
        if objective.is_finite() {
            nn::sgd_step(ae.params_mut(), &grads, cfg.lr)?;
        }
        Ok(objective)
    })?;
    Ok((ae, history))
}

/// Encoder stack whose layer `i` consumes layer `i - 1`'s hidden output.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEncoder {
    layers: Vec<TiedAutoencoder>,
}

impl StackedEncoder {
    pub fn new(layers: Vec<TiedAutoencoder>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "a stacked encoder needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(Error::shape(
                    "StackedEncoder chain",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized stack over `dims = [X, H1, H2, ...]`.
    pub fn glorot(
        dims: &[usize],
        activation: ActivationKind,
        weight_decay: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "stack dims need >= 2 entries, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|d| TiedAutoencoder::glorot(d[0], d[1], activation, weight_decay, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[TiedAutoencoder] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [TiedAutoencoder] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.hidden_dim()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].hidden_dim()
    }

    /// Top-layer representation.
    pub fn forward(&self, x: &RealMatrix) -> Result<RealMatrix> {
        let mut a = self.layers[0].encode(x)?;
        for layer in &self.layers[1..] {
            a = layer.encode(&a)?;
        }
        Ok(a)
    }

    /// Hidden activations of every layer, bottom to top.
    pub fn encode_trace(&self, x: &RealMatrix) -> Result<Vec<RealMatrix>> {
        let mut trace: Vec<RealMatrix> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.encode(if i == 0 { x } else { &trace[i - 1] })?;
            trace.push(a);
        }
        Ok(trace)
    }

    /// Unwinds the tied decoders from a top-layer representation down to input space.
    pub fn decode(&self, top: &RealMatrix) -> Result<RealMatrix> {
        let mut d = top.clone();
        for layer in self.layers.iter().rev() {
            d = layer.decode(&d)?;
        }
        Ok(d)
    }

    /// Decoder outputs indexed by layer: `out[l]` is layer `l`'s reconstruction of its input.
    pub(crate) fn decode_trace(&self, top: &RealMatrix) -> Result<Vec<RealMatrix>> {
        let n = self.layers.len();
        let mut outs: Vec<Option<RealMatrix>> = vec![None; n];
        let mut current = top.clone();
        for l in (0..n).rev() {
            let out = self.layers[l].decode(&current)?;
            current = out.clone();
            outs[l] = Some(out);
        }
        Ok(outs
            .into_iter()
            .map(|o| o.expect("every layer decoded"))
            .collect())
    }

    /// Accumulates encoder-side gradients given `g_top = ∂E/∂(top activation)`.
    /// `grads` holds `[W, b, b']` per layer.
    pub(crate) fn encoder_backward(
        &self,
        x: &RealMatrix,
        trace: &[RealMatrix],
        g_top: RealMatrix,
        grads: &mut [RealMatrix],
    ) -> Result<()> {
        let mut g = g_top;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let act = layer.activation;
            let input = if i == 0 { x } else { &trace[i - 1] };
            let delta = g.hadamard(&trace[i].map(|v| act.derivative_from_output(v)))?;
            grads[3 * i].add_assign(&delta.matmul_nt(input)?)?;
            grads[3 * i + 1].add_assign(&delta.row_sums())?;
            if i > 0 {
                g = layer.weight.matmul_tn(&delta)?;
            }
        }
        Ok(())
    }

    /// Accumulates decoder-side gradients given `g_out = ∂E/∂(reconstruction)` and
    /// returns `∂E/∂top`.
    pub(crate) fn decoder_backward(
        &self,
        top: &RealMatrix,
        outs: &[RealMatrix],
        g_out: RealMatrix,
        grads: &mut [RealMatrix],
    ) -> Result<RealMatrix> {
        let n = self.layers.len();
        let mut g = g_out;
        for l in 0..n {
            let layer = &self.layers[l];
            let act = layer.activation;
            let input = if l + 1 == n { top } else { &outs[l + 1] };
            let delta = g.hadamard(&outs[l].map(|v| act.derivative_from_output(v)))?;
            grads[3 * l].add_assign(&input.matmul_nt(&delta)?)?;
            grads[3 * l + 2].add_assign(&delta.row_sums())?;
            g = layer.weight.matmul(&delta)?;
        }
        Ok(g)
    }

    pub(crate) fn zero_grads(&self) -> Vec<RealMatrix> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    RealMatrix::zeros(l.hidden_dim(), l.input_dim()),
                    RealMatrix::zeros(l.hidden_dim(), 1),
                    RealMatrix::zeros(l.input_dim(), 1),
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<RealMatrix> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealMatrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        3 * self.layers.len()
    }

    pub fn with_params(&self, params: &[RealMatrix]) -> Result<Self> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "StackedEncoder::with_params",
                (self.param_count(), 1),
                (params.len(), 1),
            ));
        }
        let layers = self
            .layers
            .iter()
            .zip(params.chunks(3))
            .map(|(l, p)| l.with_params(p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.frobenius_sq()).sum()
    }
}

/// Greedy layer-wise pretraining: layer 1 on the data, layer 2 on layer 1's
/// hidden outputs, and so on. Earlier layers are never touched again.
/// Returns the stack and each layer's loss history.
pub fn greedy_pretrain(
    dims: &[usize],
    activation: ActivationKind,
    x_train: &RealMatrix,
    cfg: &TrainConfig,
) -> Result<(StackedEncoder, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "stack dims need >= 2 entries, got {dims:?}"
        )));
    }
    if dims[0] != x_train.rows() {
        return Err(Error::shape(
            "greedy_pretrain",
            (dims[0], 0),
            x_train.shape(),
        ));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    let mut histories = Vec::with_capacity(dims.len() - 1);
    let mut input = x_train.clone();
    for (i, d) in dims.windows(2).enumerate() {
        let layer_cfg = cfg.for_layer(i);
        let init = TiedAutoencoder::initialized(d[0], d[1], activation, &layer_cfg);
        let (trained, history) =
            train_autoencoder(init, &input, &layer_cfg).map_err(|e| Error::Layer {
                layer: i,
                source: Box::new(e),
            })?;
        if i + 2 < dims.len() {
            input = trained.encode(&input)?;
        }
        layers.push(trained);
        histories.push(history);
    }
    Ok((StackedEncoder::new(layers)?, histories))
}
