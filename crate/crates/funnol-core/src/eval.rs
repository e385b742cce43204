//! Downstream evaluation: logistic regression on representations,
//! margin-loss and norm-ratio diagnostics, and the repeated-split and
//! sparsity protocols.

use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionConfig;
use crate::dataset::{downsample, split, standardize, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::fpca::{fpc_scores, fpca_fit, impute_dataset};
use crate::linalg::{Activation, Matrix, Vector};
use crate::model::{representation, CellWeights, FunnolParams};
use crate::rng::{mix_key, stream};
use crate::train::{fit, TrainConfig};

const LOGREG_GRAD_TOL: f64 = 1e-6;
const LOGREG_MAX_ITER: usize = 5000;

/// Multinomial logistic regression with a bias column (last column of the
/// coefficient matrix).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Q x (L+1) coefficients, bias last.
    pub coef: Matrix,
    pub classes: usize,
    /// False when gradient descent hit the iteration cap before reaching
    /// the gradient tolerance; the best iterate is returned regardless.
    pub converged: bool,
}

fn logits(coef: &Matrix, z: &Vector) -> Vector {
    let q = coef.rows();
    let l = coef.cols() - 1;
    debug_assert_eq!(z.len(), l);
    let mut out = Vector::zeros(q);
    for c in 0..q {
        let row = coef.row(c);
        let mut acc = row[l]; // bias
        for k in 0..l {
            acc += row[k] * z[k];
        }
        out[c] = acc;
    }
    out
}

/// Ridge-penalized negative mean log-likelihood; the bias column is not
/// penalized.
fn logreg_objective(coef: &Matrix, reps: &[Vector], labels: &[usize], l2: f64) -> f64 {
    let n = reps.len() as f64;
    let mut nll = 0.0;
    for (z, &y) in reps.iter().zip(labels) {
        let probs = Activation::Softmax.apply(&logits(coef, z));
        nll -= probs[y].max(1e-300).ln();
    }
    let l = coef.cols() - 1;
    let mut penalty = 0.0;
    for c in 0..coef.rows() {
        for k in 0..l {
            penalty += coef.get(c, k) * coef.get(c, k);
        }
    }
    nll / n + 0.5 * l2 * penalty
}

fn logreg_gradient(coef: &Matrix, reps: &[Vector], labels: &[usize], l2: f64) -> Matrix {
    let q = coef.rows();
    let l = coef.cols() - 1;
    let n = reps.len() as f64;
    let mut grad = Matrix::zeros(q, l + 1);
    for (z, &y) in reps.iter().zip(labels) {
        let probs = Activation::Softmax.apply(&logits(coef, z));
        for c in 0..q {
            let delta = probs[c] - if c == y { 1.0 } else { 0.0 };
            for k in 0..l {
                grad.set(c, k, grad.get(c, k) + delta * z[k]);
            }
            grad.set(c, l, grad.get(c, l) + delta);
        }
    }
    grad.scale(1.0 / n);
    for c in 0..q {
        for k in 0..l {
            grad.set(c, k, grad.get(c, k) + l2 * coef.get(c, k));
        }
    }
    grad
}

/// Fits multinomial logistic regression by full-batch gradient descent
/// with backtracking line search, run until the gradient norm drops below
/// 1e-6 or 5000 iterations pass.
pub fn logreg_fit(
    reps: &[Vector],
    labels: &[usize],
    num_classes: usize,
    l2: f64,
) -> Result<LogisticModel> {
    if reps.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} representations, {} labels",
            reps.len(),
            labels.len()
        )));
    }
    if reps.len() < num_classes {
        return Err(Error::InvalidConfig(format!(
            "need at least {num_classes} samples, got {}",
            reps.len()
        )));
    }
    if l2 < 0.0 {
        return Err(Error::InvalidConfig("ridge weight must be >= 0".into()));
    }
    if labels.iter().any(|&y| y >= num_classes) {
        return Err(Error::InvalidConfig("label out of range".into()));
    }
    let l = reps.first().map(Vector::len).unwrap_or(0);
    let mut coef = Matrix::zeros(num_classes, l + 1);
    let mut value = logreg_objective(&coef, reps, labels, l2);
    let mut step = 1.0f64;
    let mut converged = false;
    for _ in 0..LOGREG_MAX_ITER {
        let grad = logreg_gradient(&coef, reps, labels, l2);
        let gnorm = grad.frobenius_norm();
        if gnorm < LOGREG_GRAD_TOL {
            converged = true;
            break;
        }
        // Armijo backtracking, growing the trial step between iterations.
        step = (step * 2.0).min(1e6);
        loop {
            let mut trial = coef.clone();
            trial.axpy(-step, &grad);
            let trial_value = logreg_objective(&trial, reps, labels, l2);
            if trial_value <= value - 1e-4 * step * gnorm * gnorm {
                coef = trial;
                value = trial_value;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                // No descent at machine precision; treat as stalled.
                break;
            }
        }
        if step < 1e-18 {
            break;
        }
    }
    if !converged {
        log::warn!("logistic regression stopped before reaching gradient tolerance");
    }
    Ok(LogisticModel {
        coef,
        classes: num_classes,
        converged,
    })
}

/// Softmax probabilities and the argmax label (lowest index wins ties).
pub fn logreg_predict(model: &LogisticModel, z: &Vector) -> (Vector, usize) {
    let probs = Activation::Softmax.apply(&logits(&model.coef, z));
    let label = probs.argmax();
    (probs, label)
}

/// Fraction of correct argmax predictions.
pub fn accuracy(model: &LogisticModel, reps: &[Vector], labels: &[usize]) -> f64 {
    if reps.is_empty() {
        return 0.0;
    }
    let hits = reps
        .iter()
        .zip(labels)
        .filter(|(z, &y)| logreg_predict(model, z).1 == y)
        .count();
    hits as f64 / reps.len() as f64
}

/// Empirical margin loss: the fraction of samples whose true-class score
/// fails to beat the best rival score by more than gamma. Ties count as
/// losses.
pub fn empirical_margin_loss(scores: &[Vector], labels: &[usize], gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if scores.is_empty() {
        return 0.0;
    }
    let mut losses = 0usize;
    for (s, &y) in scores.iter().zip(labels) {
        let rival = (0..s.len())
            .filter(|&q| q != y)
            .map(|q| s[q])
            .fold(f64::NEG_INFINITY, f64::max);
        if s[y] <= gamma + rival {
            losses += 1;
        }
    }
    losses as f64 / scores.len() as f64
}

/// Norm-ratio generalization diagnostic computed from trained weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundDiagnostic {
    pub value: f64,
    /// True when the encoder is an LSTM and the candidate-path matrices
    /// stand in for the simple-RNN input/recurrence pair.
    pub lstm_heuristic: bool,
}

/// Computes (k ln k / gamma^2) * sum_i H_i * spectral(A_i)^2 / frob(A_i)^2
/// over the class map, feature head and encoder input/recurrence matrices.
/// The four H constants default to 1 and the result is only meaningful up
/// to them.
pub fn bound_diagnostic(
    params: &FunnolParams,
    gamma: f64,
    k: usize,
    h_constants: [f64; 4],
) -> Result<BoundDiagnostic> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if k < 2 {
        return Err(Error::InvalidConfig("k must be at least 2".into()));
    }
    let (enc_in, enc_rec, lstm_heuristic) = match &params.cell {
        CellWeights::SimpleRnn { w, u } => (w, u, false),
        CellWeights::Lstm { w_c, u_c, .. } => (w_c, u_c, true),
    };
    let ratio = |m: &Matrix| -> Result<f64> {
        let frob_sq: f64 = m.data().iter().map(|x| x * x).sum();
        if frob_sq == 0.0 {
            return Ok(0.0);
        }
        let spec = m.spectral_norm()?;
        Ok(spec * spec / frob_sq)
    };
    let ratios = [
        ratio(&params.class_map)?,
        ratio(&params.feature)?,
        ratio(enc_in)?,
        ratio(enc_rec)?,
    ];
    let sum: f64 = h_constants.iter().zip(&ratios).map(|(h, r)| h * r).sum();
    let value = (k as f64) * (k as f64).ln() / (gamma * gamma) * sum;
    Ok(BoundDiagnostic {
        value,
        lstm_heuristic,
    })
}

/// Representation method under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FunnolCorrupted,
    FunnolPlain,
    Fpca,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::FunnolCorrupted => "funnol_c",
            Method::FunnolPlain => "funnol_nc",
            Method::Fpca => "fpca",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "funnol_c" => Ok(Method::FunnolCorrupted),
            "funnol_nc" => Ok(Method::FunnolPlain),
            "fpca" => Ok(Method::Fpca),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Settings for the repeated-split protocol.
#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub train_fraction: f64,
    pub seed: u64,
    /// Training configuration for the funnol methods; the seed and
    /// corruption seed are re-derived per split.
    pub train: TrainConfig,
    /// Retained components for the FPCA baseline.
    pub num_components: usize,
    pub logreg_l2: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ProtocolConfig {
            train_fraction: 0.7,
            seed: 0,
            num_components: train.latent,
            train,
            logreg_l2: 1e-4,
        }
    }
}

/// Aggregated results of one protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub method: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    pub splits: usize,
    pub keep_fraction: Option<f64>,
    pub train_fraction: f64,
}

fn aggregate(
    method: Method,
    accuracies: Vec<f64>,
    keep_fraction: Option<f64>,
    train_fraction: f64,
) -> ProtocolResult {
    let n = accuracies.len();
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = accuracies
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    ProtocolResult {
        method: method.tag().to_string(),
        accuracies,
        mean,
        se,
        splits: n,
        keep_fraction,
        train_fraction,
    }
}

fn labels_of(ds: &Dataset) -> Result<Vec<usize>> {
    ds.samples
        .iter()
        .map(|s| {
            s.label().ok_or_else(|| {
                Error::InvalidConfig("protocol datasets must be fully labeled".into())
            })
        })
        .collect()
}

/// Representations of every sample under the chosen method.
fn representations(
    method: Method,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProtocolConfig,
    split_seed: u64,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    match method {
        Method::Fpca => {
            let train_full = impute_dataset(train)?;
            let test_full = impute_dataset(test)?;
            let model = fpca_fit(&train_full, cfg.num_components)?;
            let z_train: Vec<Vector> = train_full
                .samples
                .iter()
                .map(|s| fpc_scores(&model, s))
                .collect::<Result<_>>()?;
            let z_test: Vec<Vector> = test_full
                .samples
                .iter()
                .map(|s| fpc_scores(&model, s))
                .collect::<Result<_>>()?;
            Ok((z_train, z_test))
        }
        Method::FunnolCorrupted | Method::FunnolPlain => {
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = mix_key(&[split_seed, 1]);
            train_cfg.corruption = match method {
                Method::FunnolCorrupted => {
                    let template = cfg.train.corruption.unwrap_or_default();
                    Some(CorruptionConfig {
                        seed: mix_key(&[split_seed, 2]),
                        ..template
                    })
                }
                _ => None,
            };
            let (params, _) = fit(train, &train_cfg)?;
            let z_train: Vec<Vector> = train
                .samples
                .iter()
                .map(|s| representation(&params, s))
                .collect();
            let z_test: Vec<Vector> = test
                .samples
                .iter()
                .map(|s| representation(&params, s))
                .collect();
            Ok((z_train, z_test))
        }
    }
}

/// Repeats stratified splitting `splits` times; per split fits the
/// representation method on the training part, fits logistic regression on
/// the training representations and records test accuracy.
pub fn run_split_protocol(
    ds: &Dataset,
    method: Method,
    splits: usize,
    cfg: &ProtocolConfig,
) -> Result<ProtocolResult> {
    if splits == 0 {
        return Err(Error::InvalidConfig("need at least one split".into()));
    }
    let mut accuracies = Vec::with_capacity(splits);
    for s in 0..splits {
        let split_seed = mix_key(&[cfg.seed, stream::PROTOCOL, s as u64]);
        let spec = SplitSpec::new(cfg.train_fraction, split_seed)?;
        let (train_raw, test_raw) =
            split(ds, &spec).map_err(|e| Error::InvalidConfig(format!("split {s}: {e}")))?;
        // The split partitions by index, so train and test are disjoint by
        // construction; the count identity is the cheap invariant check.
        assert_eq!(train_raw.len() + test_raw.len(), ds.len());
        let (train, test, _) = standardize(&train_raw, &test_raw)?;

        let (z_train, z_test) = representations(method, &train, &test, cfg, split_seed)
            .map_err(|e| Error::InvalidConfig(format!("split {s}: {e}")))?;
        let train_labels = labels_of(&train)?;
        let test_labels = labels_of(&test)?;
        let model = logreg_fit(&z_train, &train_labels, ds.num_classes, cfg.logreg_l2)?;
        let acc = accuracy(&model, &z_test, &test_labels);
        assert!((0.0..=1.0).contains(&acc));
        accuracies.push(acc);
    }
    Ok(aggregate(method, accuracies, None, cfg.train_fraction))
}

/// Runs the split protocol once per keep fraction on a downsampled copy of
/// the dataset. The downsampling seed is derived from the fraction itself,
/// so results do not depend on list order.
pub fn run_sparsity_experiment(
    ds: &Dataset,
    method: Method,
    keep_fractions: &[f64],
    splits: usize,
    cfg: &ProtocolConfig,
) -> Result<Vec<ProtocolResult>> {
    let mut out = Vec::with_capacity(keep_fractions.len());
    for &kf in keep_fractions {
        let sparse = downsample(
            ds,
            kf,
            mix_key(&[cfg.seed, stream::DOWNSAMPLE, kf.to_bits()]),
        )?;
        let mut result = run_split_protocol(&sparse, method, splits, cfg)?;
        result.keep_fraction = Some(kf);
        out.push(result);
    }
    Ok(out)
}
