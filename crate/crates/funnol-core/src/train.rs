//! Joint training of the encoder, decoder and classifier.
//!
//! The objective is the mean cross-entropy of the classifier head plus
//! `lambda_recon` times the mean masked reconstruction error, with the
//! reconstruction term decomposed per grid point and contributing exactly
//! zero at missing cells. Gradients are computed analytically by
//! backpropagation through time for both cell kinds, averaged over the
//! batch in sample order, clipped on the global norm, and applied by SGD
//! or Adam. Every stochastic choice is keyed off the run seed, so a fit is
//! bit-reproducible regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, CorruptionConfig};
use crate::dataset::{Dataset, FunctionalSample};
use crate::error::{Error, Result};
use crate::linalg::{Activation, Matrix, Vector};
use crate::model::{
    forward_values, CellKind, CellTrace, CellWeights, Dims, ForwardTrace, FunnolParams,
};
use crate::rng::{mix_key, stream, SplitMix64};

/// Probabilities are floored here before the log in the class loss.
const PROB_FLOOR: f64 = 1e-12;

/// Gradient clipping strategy once the global norm exceeds the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Rescale so the global norm equals the threshold.
    RescaleToThreshold,
    /// Rescale to a unit-norm gradient.
    RescaleToUnit,
}

impl std::str::FromStr for ClipMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" | "rescale_to_threshold" => Ok(ClipMode::RescaleToThreshold),
            "unit" | "rescale_to_unit" => Ok(ClipMode::RescaleToUnit),
            other => Err(Error::InvalidConfig(format!("unknown clip mode '{other}'"))),
        }
    }
}

/// First-order optimizer selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::adam()),
            other => Err(Error::InvalidConfig(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Full training configuration.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Feature dimension L.
    pub latent: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_threshold: f64,
    pub clip_mode: ClipMode,
    /// Weight on the reconstruction term.
    pub lambda_recon: f64,
    pub corruption: Option<CorruptionConfig>,
    pub optimizer: OptimizerKind,
    pub cell: CellKind,
    pub activations: crate::model::ActivationSet,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent: 4,
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 32,
            clip_threshold: 5.0,
            clip_mode: ClipMode::RescaleToThreshold,
            lambda_recon: 1.0,
            corruption: None,
            optimizer: OptimizerKind::adam(),
            cell: CellKind::Lstm,
            activations: crate::model::ActivationSet::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 {
            return Err(Error::InvalidConfig(
                "latent dimension must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !self.clip_threshold.is_finite() || self.clip_threshold <= 0.0 {
            return Err(Error::InvalidConfig(
                "clip threshold must be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and >= 0".into(),
            ));
        }
        if !self.lambda_recon.is_finite() || self.lambda_recon < 0.0 {
            return Err(Error::InvalidConfig(
                "lambda must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient of the loss with respect to every weight block, shape-congruent
/// with [`FunnolParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct FunnolGradients {
    pub cell: CellWeights,
    pub feature: Matrix,
    pub dec_in: Matrix,
    pub dec_rec: Matrix,
    pub readout: Matrix,
    pub class_map: Matrix,
}

impl FunnolGradients {
    pub fn zeros_like(params: &FunnolParams) -> Self {
        let (d, l, q) = (
            params.dims.channels,
            params.dims.latent,
            params.dims.classes,
        );
        let cell = match params.cell_kind() {
            CellKind::SimpleRnn => CellWeights::SimpleRnn {
                w: Matrix::zeros(l, d),
                u: Matrix::zeros(l, l),
            },
            CellKind::Lstm => CellWeights::Lstm {
                w_i: Matrix::zeros(l, d),
                u_i: Matrix::zeros(l, l),
                w_o: Matrix::zeros(l, d),
                u_o: Matrix::zeros(l, l),
                w_f: Matrix::zeros(l, d),
                u_f: Matrix::zeros(l, l),
                w_c: Matrix::zeros(l, d),
                u_c: Matrix::zeros(l, l),
            },
        };
        FunnolGradients {
            cell,
            feature: Matrix::zeros(l, l),
            dec_in: Matrix::zeros(l, l),
            dec_rec: Matrix::zeros(l, l),
            readout: Matrix::zeros(d, l),
            class_map: Matrix::zeros(q, l),
        }
    }

    /// Blocks in the same stable order as [`FunnolParams::blocks`].
    pub fn blocks(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out: Vec<(&'static str, &Matrix)> = match &self.cell {
            CellWeights::SimpleRnn { w, u } => vec![("w", w), ("u", u)],
            CellWeights::Lstm {
                w_i,
                u_i,
                w_o,
                u_o,
                w_f,
                u_f,
                w_c,
                u_c,
            } => vec![
                ("w_i", w_i),
                ("u_i", u_i),
                ("w_o", w_o),
                ("u_o", u_o),
                ("w_f", w_f),
                ("u_f", u_f),
                ("w_c", w_c),
                ("u_c", u_c),
            ],
        };
        out.push(("feature", &self.feature));
        out.push(("dec_in", &self.dec_in));
        out.push(("dec_rec", &self.dec_rec));
        out.push(("readout", &self.readout));
        out.push(("class_map", &self.class_map));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out: Vec<(&'static str, &mut Matrix)> = match &mut self.cell {
            CellWeights::SimpleRnn { w, u } => vec![("w", w), ("u", u)],
            CellWeights::Lstm {
                w_i,
                u_i,
                w_o,
                u_o,
                w_f,
                u_f,
                w_c,
                u_c,
            } => vec![
                ("w_i", w_i),
                ("u_i", u_i),
                ("w_o", w_o),
                ("u_o", u_o),
                ("w_f", w_f),
                ("u_f", u_f),
                ("w_c", w_c),
                ("u_c", u_c),
            ],
        };
        out.push(("feature", &mut self.feature));
        out.push(("dec_in", &mut self.dec_in));
        out.push(("dec_rec", &mut self.dec_rec));
        out.push(("readout", &mut self.readout));
        out.push(("class_map", &mut self.class_map));
        out
    }

    /// self += s * other
    pub fn axpy(&mut self, s: f64, other: &FunnolGradients) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.axpy(s, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.blocks_mut() {
            m.scale(s);
        }
    }

    /// Euclidean norm over all entries of all blocks.
    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .map(|(_, m)| m.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first non-finite block, if any.
    pub fn non_finite_block(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| n)
    }
}

/// Loss values for one sample or one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub class: f64,
    pub recon: f64,
}

/// Per-epoch training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub loss_class: f64,
    pub loss_recon: f64,
    /// Mean pre-clip global gradient norm over the epoch's batches.
    pub grad_norm: f64,
    /// Number of batches whose gradient was clipped.
    pub clipped: usize,
}

/// Training log returned by [`fit`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_secs: f64,
}

impl TrainReport {
    /// CSV with columns epoch, loss, loss_c, loss_r, grad_norm, clipped.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,loss_c,loss_r,grad_norm,clipped\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.loss, e.loss_class, e.loss_recon, e.grad_norm, e.clipped
            ));
        }
        out
    }
}

/// Masked squared reconstruction error, averaged over the grid:
/// (1/J) sum_j sum_d mask[j,d] (x[j,d] - xr[j,d])^2. Missing cells
/// contribute exactly zero.
pub fn recon_loss(target: &FunctionalSample, recon: &[Vector]) -> f64 {
    let j = target.grid_len();
    debug_assert_eq!(recon.len(), j);
    let mut acc = 0.0;
    for t in 0..j {
        for d in 0..target.channels() {
            if target.observed(t, d) {
                let diff = target.value(t, d) - recon[t][d];
                acc += diff * diff;
            }
        }
    }
    acc / j as f64
}

/// Cross-entropy -ln(probs[label]), floored at probability 1e-12.
pub fn class_loss(label: usize, probs: &Vector) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

fn sample_losses(target: &FunctionalSample, trace: &ForwardTrace, lambda: f64) -> LossBreakdown {
    let class = match target.label() {
        Some(y) => class_loss(y, &trace.class_probs),
        None => 0.0,
    };
    let recon = recon_loss(target, trace.reconstruction());
    LossBreakdown {
        total: class + lambda * recon,
        class,
        recon,
    }
}

/// Loss of one uncorrupted sample (encoder input = stored values).
pub fn sample_loss(params: &FunnolParams, sample: &FunctionalSample, lambda: f64) -> LossBreakdown {
    let trace = forward_values(params, sample.values().clone());
    sample_losses(sample, &trace, lambda)
}

/// Loss with an explicit encoder input, reconstruction still scored
/// against `target` under its original mask.
pub fn sample_loss_with_input(
    params: &FunnolParams,
    input: &Matrix,
    target: &FunctionalSample,
    lambda: f64,
) -> LossBreakdown {
    let trace = forward_values(params, input.clone());
    sample_losses(target, &trace, lambda)
}

/// Mean loss over a batch. When corruption is supplied, sample i of the
/// batch is corrupted with sample_index i and the given draw index; the
/// reconstruction target stays uncorrupted.
pub fn total_loss(
    params: &FunnolParams,
    batch: &[FunctionalSample],
    lambda: f64,
    corruption: Option<(&CorruptionConfig, u64)>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut acc = LossBreakdown::default();
    for (i, sample) in batch.iter().enumerate() {
        let lb = match corruption {
            Some((cfg, draw)) => {
                let corrupted = corrupt(sample, cfg, draw, i);
                sample_loss_with_input(params, corrupted.values(), sample, lambda)
            }
            None => sample_loss(params, sample, lambda),
        };
        acc.total += lb.total;
        acc.class += lb.class;
        acc.recon += lb.recon;
    }
    let n = batch.len() as f64;
    Ok(LossBreakdown {
        total: acc.total / n,
        class: acc.class / n,
        recon: acc.recon / n,
    })
}

/// Analytic gradient of the per-sample loss (class + lambda * recon) with
/// respect to every weight block, by backpropagation through time.
pub fn backward(
    trace: &ForwardTrace,
    target: &FunctionalSample,
    params: &FunnolParams,
    lambda: f64,
) -> Result<FunnolGradients> {
    let j = trace.decode.output.len();
    let l = params.dims.latent;
    let mut grads = FunnolGradients::zeros_like(params);

    // Classifier head.
    let probs = &trace.class_probs;
    let mut grad_probs = Vector::zeros(probs.len());
    if let Some(y) = target.label() {
        if probs[y] > PROB_FLOOR {
            grad_probs[y] = -1.0 / probs[y];
        }
    }
    let grad_class_pre = params.activations.class.vjp(probs, &grad_probs);
    grads
        .class_map
        .add_outer(&grad_class_pre, &trace.encode.feature, 1.0);
    let grad_feature_from_class = params.class_map.apply_transpose(&grad_class_pre);

    // Decoder, walked backwards. The feature vector feeds every step, so
    // its gradient accumulates across the whole unroll.
    let recon_scale = 2.0 * lambda / j as f64;
    let mut grad_feature_from_dec = Vector::zeros(l);
    let mut carry = Vector::zeros(l);
    for t in (0..j).rev() {
        let out = &trace.decode.output[t];
        let mut grad_out = Vector::zeros(out.len());
        for d in 0..target.channels() {
            if target.observed(t, d) {
                grad_out[d] = recon_scale * (out[d] - target.value(t, d));
            }
        }
        let grad_out_pre = params.activations.output.vjp(out, &grad_out);
        grads
            .readout
            .add_outer(&grad_out_pre, &trace.decode.hidden[t + 1], 1.0);

        let mut delta = params.readout.apply_transpose(&grad_out_pre);
        delta.add_assign(&carry);
        let grad_hidden_pre = params
            .activations
            .hidden
            .vjp(&trace.decode.hidden[t + 1], &delta);
        grads
            .dec_in
            .add_outer(&grad_hidden_pre, &trace.encode.feature, 1.0);
        grads
            .dec_rec
            .add_outer(&grad_hidden_pre, &trace.decode.hidden[t], 1.0);
        grad_feature_from_dec.add_assign(&params.dec_in.apply_transpose(&grad_hidden_pre));
        carry = params.dec_rec.apply_transpose(&grad_hidden_pre);
    }

    // Feature head.
    let grad_feature_total = grad_feature_from_class.add(&grad_feature_from_dec);
    let grad_feature_pre = params
        .activations
        .feature
        .vjp(&trace.encode.feature, &grad_feature_total);
    let h_last = trace.encode.cell.hidden().last().expect("states present");
    grads.feature.add_outer(&grad_feature_pre, h_last, 1.0);
    let mut grad_h = params.feature.apply_transpose(&grad_feature_pre);

    // Encoder, walked backwards through time.
    match (&params.cell, &trace.encode.cell) {
        (CellWeights::SimpleRnn { u, .. }, CellTrace::SimpleRnn { hidden, .. }) => {
            let CellWeights::SimpleRnn { w: gw, u: gu } = &mut grads.cell else {
                unreachable!()
            };
            let steps = hidden.len() - 1;
            for t in (0..steps).rev() {
                let grad_pre = params.activations.hidden.vjp(&hidden[t + 1], &grad_h);
                let x = Vector::from(trace.input.row(t).to_vec());
                gw.add_outer(&grad_pre, &x, 1.0);
                gu.add_outer(&grad_pre, &hidden[t], 1.0);
                grad_h = u.apply_transpose(&grad_pre);
            }
        }
        (
            CellWeights::Lstm {
                u_i, u_o, u_f, u_c, ..
            },
            CellTrace::Lstm {
                gate_i,
                gate_o,
                gate_f,
                candidate,
                cell_state,
                hidden,
                ..
            },
        ) => {
            let CellWeights::Lstm {
                w_i: gw_i,
                u_i: gu_i,
                w_o: gw_o,
                u_o: gu_o,
                w_f: gw_f,
                u_f: gu_f,
                w_c: gw_c,
                u_c: gu_c,
            } = &mut grads.cell
            else {
                unreachable!()
            };
            let steps = hidden.len() - 1;
            let mut grad_cell = Vector::zeros(l);
            for t in (0..steps).rev() {
                let tanh_cell = cell_state[t + 1].map(f64::tanh);
                // h_t = o_t o tanh(cell_t)
                let grad_o = grad_h.hadamard(&tanh_cell);
                for k in 0..l {
                    grad_cell[k] += grad_h[k] * gate_o[t][k] * (1.0 - tanh_cell[k] * tanh_cell[k]);
                }
                let grad_f = grad_cell.hadamard(&cell_state[t]);
                let grad_i = grad_cell.hadamard(&candidate[t]);
                let grad_cand = grad_cell.hadamard(&gate_i[t]);

                let pre_o = Activation::Sigmoid.vjp(&gate_o[t], &grad_o);
                let pre_f = Activation::Sigmoid.vjp(&gate_f[t], &grad_f);
                let pre_i = Activation::Sigmoid.vjp(&gate_i[t], &grad_i);
                let pre_c = Activation::Tanh.vjp(&candidate[t], &grad_cand);

                let x = Vector::from(trace.input.row(t).to_vec());
                gw_i.add_outer(&pre_i, &x, 1.0);
                gu_i.add_outer(&pre_i, &hidden[t], 1.0);
                gw_o.add_outer(&pre_o, &x, 1.0);
                gu_o.add_outer(&pre_o, &hidden[t], 1.0);
                gw_f.add_outer(&pre_f, &x, 1.0);
                gu_f.add_outer(&pre_f, &hidden[t], 1.0);
                gw_c.add_outer(&pre_c, &x, 1.0);
                gu_c.add_outer(&pre_c, &hidden[t], 1.0);

                let mut next_h = u_i.apply_transpose(&pre_i);
                next_h.add_assign(&u_o.apply_transpose(&pre_o));
                next_h.add_assign(&u_f.apply_transpose(&pre_f));
                next_h.add_assign(&u_c.apply_transpose(&pre_c));
                grad_h = next_h;
                grad_cell = grad_cell.hadamard(&gate_f[t]);
            }
        }
        _ => unreachable!("trace and params always share the cell kind"),
    }

    if let Some(block) = grads.non_finite_block() {
        return Err(Error::NonFinite {
            context: format!("gradient block {block}"),
        });
    }
    Ok(grads)
}

/// Forward + backward for one training example, optionally through the
/// corruption layer. Returns the loss actually optimized.
pub fn training_pass(
    params: &FunnolParams,
    sample: &FunctionalSample,
    sample_index: usize,
    lambda: f64,
    corruption: Option<(&CorruptionConfig, u64)>,
) -> Result<(LossBreakdown, FunnolGradients)> {
    let input = match corruption {
        Some((cfg, draw)) => corrupt(sample, cfg, draw, sample_index).values().clone(),
        None => sample.values().clone(),
    };
    let trace = forward_values(params, input);
    let loss = sample_losses(sample, &trace, lambda);
    let grads = backward(&trace, sample, params, lambda)?;
    Ok((loss, grads))
}

/// Mean gradient over a set of (dataset index, sample) pairs, reduced in
/// the given order so the result is independent of scheduling.
pub fn batch_gradient(
    params: &FunnolParams,
    batch: &[(usize, &FunctionalSample)],
    lambda: f64,
    corruption: Option<(&CorruptionConfig, u64)>,
) -> Result<(LossBreakdown, FunnolGradients)> {
    if batch.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let passes: Vec<Result<(LossBreakdown, FunnolGradients)>> = batch
        .par_iter()
        .with_min_len(4)
        .map(|(idx, sample)| training_pass(params, sample, *idx, lambda, corruption))
        .collect();
    let mut loss = LossBreakdown::default();
    let mut grads = FunnolGradients::zeros_like(params);
    for pass in passes {
        let (lb, g) = pass?;
        loss.total += lb.total;
        loss.class += lb.class;
        loss.recon += lb.recon;
        grads.axpy(1.0, &g);
    }
    let inv = 1.0 / batch.len() as f64;
    loss.total *= inv;
    loss.class *= inv;
    loss.recon *= inv;
    grads.scale(inv);
    Ok((loss, grads))
}

/// Rescales the gradient when its global norm exceeds the threshold.
/// Returns the pre-clip norm and whether clipping fired.
pub fn clip_gradients(grads: &mut FunnolGradients, threshold: f64, mode: ClipMode) -> (f64, bool) {
    debug_assert!(threshold > 0.0);
    let norm = grads.global_norm();
    if norm <= threshold {
        return (norm, false);
    }
    match mode {
        ClipMode::RescaleToThreshold => grads.scale(threshold / norm),
        ClipMode::RescaleToUnit => grads.scale(1.0 / norm),
    }
    (norm, true)
}

struct AdamState {
    m: FunnolGradients,
    v: FunnolGradients,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    fn apply(&mut self, params: &mut FunnolParams, grads: &FunnolGradients, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut p_blocks = params.blocks_mut();
        let mut m_blocks = self.m.blocks_mut();
        let mut v_blocks = self.v.blocks_mut();
        let g_blocks = grads.blocks();
        for b in 0..p_blocks.len() {
            let pd = p_blocks[b].1.data_mut();
            let md = m_blocks[b].1.data_mut();
            let vd = v_blocks[b].1.data_mut();
            let gd = g_blocks[b].1.data();
            for k in 0..pd.len() {
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gd[k];
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gd[k] * gd[k];
                let m_hat = md[k] / bc1;
                let v_hat = vd[k] / bc2;
                pd[k] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Trains a model on a fully labeled dataset.
///
/// Each epoch shuffles the samples with a seed derived from the run seed,
/// draws a fresh corruption (draw_index = epoch) when corruption is on,
/// and walks minibatches: forward, backward, average, clip, update. The
/// last partial batch is kept.
pub fn fit(train: &Dataset, cfg: &TrainConfig) -> Result<(FunnolParams, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    if train.samples.iter().any(|s| s.label().is_none()) {
        return Err(Error::InvalidConfig(
            "every training sample needs a label".into(),
        ));
    }
    let dims = Dims {
        channels: train.num_channels,
        latent: cfg.latent,
        classes: train.num_classes.max(1),
    };
    let started = std::time::Instant::now();
    let mut params = FunnolParams::init(cfg.cell, dims, cfg.activations, cfg.seed);
    let mut adam = match cfg.optimizer {
        OptimizerKind::Sgd => None,
        OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } => Some(AdamState {
            m: FunnolGradients::zeros_like(&params),
            v: FunnolGradients::zeros_like(&params),
            step: 0,
            beta1,
            beta2,
            epsilon,
        }),
    };

    let n = train.len();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = SplitMix64::new(mix_key(&[cfg.seed, stream::SHUFFLE, epoch as u64]));
        rng.shuffle(&mut order);

        let corruption = cfg.corruption.as_ref().map(|c| (c, epoch as u64));
        let mut sums = LossBreakdown::default();
        let mut norm_sum = 0.0;
        let mut clipped = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, &FunctionalSample)> =
                chunk.iter().map(|&i| (i, &train.samples[i])).collect();
            let (loss, mut grads) = batch_gradient(&params, &batch, cfg.lambda_recon, corruption)
                .map_err(|e| Error::NonFinite {
                context: format!("epoch {epoch}, batch {batches}: {e}"),
            })?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("loss at epoch {epoch}, batch {batches}"),
                });
            }
            let (pre_norm, did_clip) =
                clip_gradients(&mut grads, cfg.clip_threshold, cfg.clip_mode);
            match adam.as_mut() {
                Some(state) => state.apply(&mut params, &grads, cfg.learning_rate),
                None => {
                    for ((_, p), (_, g)) in params.blocks_mut().into_iter().zip(grads.blocks()) {
                        p.axpy(-cfg.learning_rate, g);
                    }
                }
            }
            let weight = chunk.len() as f64;
            sums.total += loss.total * weight;
            sums.class += loss.class * weight;
            sums.recon += loss.recon * weight;
            norm_sum += pre_norm;
            clipped += did_clip as usize;
            batches += 1;
        }
        report.epochs.push(EpochStats {
            epoch,
            loss: sums.total / n as f64,
            loss_class: sums.class / n as f64,
            loss_recon: sums.recon / n as f64,
            grad_norm: norm_sum / batches.max(1) as f64,
            clipped,
        });
    }
    report.wall_secs = started.elapsed().as_secs_f64();
    if !params.is_finite() {
        return Err(Error::NonFinite {
            context: "final parameters".into(),
        });
    }
    Ok((params, report))
}

/// Spectral norm of the accumulated state-to-state Jacobian between two
/// time steps, multiplying the per-step Jacobians from a forward trace.
///
/// For a simple RNN this is d h_j / d h_s; with an LSTM it is the cell
/// analogue d m_j / d m_s (including the indirect path through the gates).
/// Demonstrates the vanishing/exploding behavior of the plain recurrence
/// versus the gated one.
pub fn gradient_pathology_probe(
    params: &FunnolParams,
    sample: &FunctionalSample,
    j: usize,
    s: usize,
) -> Result<f64> {
    if s >= j {
        return Err(Error::InvalidConfig(format!(
            "need s < j, got s={s}, j={j}"
        )));
    }
    if j > sample.grid_len() {
        return Err(Error::InvalidConfig(format!(
            "j={j} exceeds grid length {}",
            sample.grid_len()
        )));
    }
    let l = params.dims.latent;
    let trace = crate::model::encode(params, sample);
    let mut product = Matrix::identity(l);
    match (&params.cell, &trace.cell) {
        (CellWeights::SimpleRnn { u, .. }, CellTrace::SimpleRnn { pre, .. }) => {
            for k in s + 1..=j {
                // d h_k / d h_{k-1} = diag(g'(pre_k)) U
                let deriv = params.activations.hidden.derivative(&pre[k - 1]);
                let mut step = u.clone();
                for row in 0..l {
                    for col in 0..l {
                        step.set(row, col, step.get(row, col) * deriv[row]);
                    }
                }
                product = step.matmul(&product)?;
            }
        }
        (
            CellWeights::Lstm { u_i, u_f, u_c, .. },
            CellTrace::Lstm {
                gate_i,
                gate_o,
                gate_f,
                candidate,
                cell_state,
                ..
            },
        ) => {
            for k in s + 1..=j {
                // Direct path: diag(f_k). Indirect path runs through
                // h_{k-1} = o_{k-1} o tanh(cell_{k-1}) into all gate
                // pre-activations.
                let mut step = Matrix::zeros(l, l);
                for row in 0..l {
                    step.set(row, row, gate_f[k - 1][row]);
                }
                if k >= 2 {
                    let mut dcell_dh = Matrix::zeros(l, l);
                    for row in 0..l {
                        let fi = gate_f[k - 1][row];
                        let ii = gate_i[k - 1][row];
                        let ci = candidate[k - 1][row];
                        let f_term = cell_state[k - 1][row] * fi * (1.0 - fi);
                        let i_term = ci * ii * (1.0 - ii);
                        let c_term = ii * (1.0 - ci * ci);
                        for col in 0..l {
                            dcell_dh.set(
                                row,
                                col,
                                f_term * u_f.get(row, col)
                                    + i_term * u_i.get(row, col)
                                    + c_term * u_c.get(row, col),
                            );
                        }
                    }
                    // d h_{k-1} / d cell_{k-1}
                    for row in 0..l {
                        for col in 0..l {
                            let tc = cell_state[k - 1][col].tanh();
                            let dh_dc = gate_o[k - 2][col] * (1.0 - tc * tc);
                            step.set(
                                row,
                                col,
                                step.get(row, col) + dcell_dh.get(row, col) * dh_dc,
                            );
                        }
                    }
                }
                product = step.matmul(&product)?;
            }
        }
        _ => unreachable!(),
    }
    product.spectral_norm()
}
