//! Forward passes of the encoder, decoder and classifier networks.
//!
//! The encoder runs a recurrent cell (simple RNN or LSTM) over the curve
//! and maps the final hidden state to the feature vector; the decoder
//! unrolls a second recurrence driven by the feature vector at every step
//! and reads out one reconstruction per grid point; the classifier maps
//! the feature vector to class probabilities. Every intermediate state and
//! pre-activation is retained so the backward pass can run analytically.
//!
//! Shape conventions, with D channels, L latent dimensions, Q classes:
//! encoder input maps are L x D, recurrences L x L, the feature head is
//! L x L, the readout is D x L and the class map is Q x L. Initial hidden
//! and cell states are zero. Missing input cells enter the encoder as the
//! sentinel 0, which equals the channel mean after standardization.

use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalSample;
use crate::error::{Error, Result};
use crate::linalg::{Activation, Matrix, Vector};
use crate::rng::{mix_key, stream, SplitMix64};

/// Which recurrent cell the encoder uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    SimpleRnn,
    Lstm,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::SimpleRnn => "rnn",
            CellKind::Lstm => "lstm",
        })
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" | "simple_rnn" | "simple" => Ok(CellKind::SimpleRnn),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::InvalidConfig(format!("unknown cell '{other}'"))),
        }
    }
}

/// Model dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Input channels D.
    pub channels: usize,
    /// Latent dimension L.
    pub latent: usize,
    /// Number of classes Q.
    pub classes: usize,
}

/// Activation selection for the four configurable sites. LSTM gates are
/// fixed to sigmoid and the cell candidate to tanh; the decoder recurrence
/// shares `hidden`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationSet {
    pub hidden: Activation,
    pub feature: Activation,
    pub output: Activation,
    pub class: Activation,
}

impl Default for ActivationSet {
    fn default() -> Self {
        ActivationSet {
            hidden: Activation::Tanh,
            feature: Activation::Identity,
            output: Activation::Identity,
            class: Activation::Softmax,
        }
    }
}

/// Encoder weights for the two cell kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum CellWeights {
    SimpleRnn {
        /// L x D input map.
        w: Matrix,
        /// L x L recurrence.
        u: Matrix,
    },
    Lstm {
        w_i: Matrix,
        u_i: Matrix,
        w_o: Matrix,
        u_o: Matrix,
        w_f: Matrix,
        u_f: Matrix,
        /// Cell candidate maps.
        w_c: Matrix,
        u_c: Matrix,
    },
}

impl CellWeights {
    pub fn kind(&self) -> CellKind {
        match self {
            CellWeights::SimpleRnn { .. } => CellKind::SimpleRnn,
            CellWeights::Lstm { .. } => CellKind::Lstm,
        }
    }
}

/// All network weights of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunnolParams {
    pub dims: Dims,
    pub cell: CellWeights,
    /// L x L feature head applied to the final hidden state.
    pub feature: Matrix,
    /// L x L map feeding the feature vector into every decoder step.
    pub dec_in: Matrix,
    /// L x L decoder recurrence.
    pub dec_rec: Matrix,
    /// D x L readout from decoder state to curve values.
    pub readout: Matrix,
    /// Q x L class map.
    pub class_map: Matrix,
    pub activations: ActivationSet,
}

impl FunnolParams {
    /// Seeded uniform initialization on +-sqrt(6 / (fan_in + fan_out)).
    pub fn init(kind: CellKind, dims: Dims, activations: ActivationSet, seed: u64) -> Self {
        let mut block = 0u64;
        let mut next = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = SplitMix64::new(mix_key(&[seed, stream::INIT, block]));
            block += 1;
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.next_range(-bound, bound))
                .collect();
            Matrix::from_vec(rows, cols, data).expect("sized by construction")
        };
        let (d, l, q) = (dims.channels, dims.latent, dims.classes);
        let cell = match kind {
            CellKind::SimpleRnn => CellWeights::SimpleRnn {
                w: next(l, d),
                u: next(l, l),
            },
            CellKind::Lstm => CellWeights::Lstm {
                w_i: next(l, d),
                u_i: next(l, l),
                w_o: next(l, d),
                u_o: next(l, l),
                w_f: next(l, d),
                u_f: next(l, l),
                w_c: next(l, d),
                u_c: next(l, l),
            },
        };
        FunnolParams {
            dims,
            cell,
            feature: next(l, l),
            dec_in: next(l, l),
            dec_rec: next(l, l),
            readout: next(d, l),
            class_map: next(q, l),
            activations,
        }
    }

    /// All-zero weights, mostly useful in tests.
    pub fn zeros(kind: CellKind, dims: Dims, activations: ActivationSet) -> Self {
        let (d, l, q) = (dims.channels, dims.latent, dims.classes);
        let cell = match kind {
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
        FunnolParams {
            dims,
            cell,
            feature: Matrix::zeros(l, l),
            dec_in: Matrix::zeros(l, l),
            dec_rec: Matrix::zeros(l, l),
            readout: Matrix::zeros(d, l),
            class_map: Matrix::zeros(q, l),
            activations,
        }
    }

    pub fn cell_kind(&self) -> CellKind {
        self.cell.kind()
    }

    /// Stable ordering of all weight blocks, shared with gradients and
    /// optimizer state: encoder blocks, then feature, dec_in, dec_rec,
    /// readout, class_map.
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

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, m)| m.is_finite())
    }
}

/// Per-step encoder states. `hidden[0]` (and `cell_state[0]`) are the zero
/// initial states, so step j lives at index j.
#[derive(Clone, Debug, PartialEq)]
pub enum CellTrace {
    SimpleRnn {
        pre: Vec<Vector>,
        hidden: Vec<Vector>,
    },
    Lstm {
        pre_i: Vec<Vector>,
        pre_o: Vec<Vector>,
        pre_f: Vec<Vector>,
        pre_c: Vec<Vector>,
        gate_i: Vec<Vector>,
        gate_o: Vec<Vector>,
        gate_f: Vec<Vector>,
        candidate: Vec<Vector>,
        cell_state: Vec<Vector>,
        hidden: Vec<Vector>,
    },
}

impl CellTrace {
    pub fn hidden(&self) -> &[Vector] {
        match self {
            CellTrace::SimpleRnn { hidden, .. } => hidden,
            CellTrace::Lstm { hidden, .. } => hidden,
        }
    }

    pub fn steps(&self) -> usize {
        self.hidden().len() - 1
    }
}

/// Encoder output: recurrent states plus the feature head.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeTrace {
    pub cell: CellTrace,
    pub feature_pre: Vector,
    pub feature: Vector,
}

/// Decoder unroll: hidden chain plus per-step readout.
/// `hidden[0]` is the zero initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTrace {
    pub hidden_pre: Vec<Vector>,
    pub hidden: Vec<Vector>,
    pub output_pre: Vec<Vector>,
    pub output: Vec<Vector>,
}

/// Everything one forward pass produces.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// The J x D values the encoder actually consumed (corrupted input
    /// during training; sentinel zeros at missing cells).
    pub input: Matrix,
    pub encode: EncodeTrace,
    pub decode: DecodeTrace,
    pub class_pre: Vector,
    pub class_probs: Vector,
}

impl ForwardTrace {
    pub fn feature(&self) -> &Vector {
        &self.encode.feature
    }

    pub fn reconstruction(&self) -> &[Vector] {
        &self.decode.output
    }
}

fn input_row(values: &Matrix, j: usize) -> Vector {
    Vector::from(values.row(j).to_vec())
}

/// One simple-RNN step: h_j = g_h(W x_j + U h_prev).
pub fn rnn_cell(
    w: &Matrix,
    u: &Matrix,
    hidden_act: Activation,
    x: &Vector,
    h_prev: &Vector,
) -> (Vector, Vector) {
    let pre = w.apply(x).add(&u.apply(h_prev));
    let h = hidden_act.apply(&pre);
    (pre, h)
}

/// One LSTM step. Gates are sigmoid, the candidate is tanh, and the new
/// hidden state is o o tanh(cell).
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell(
    weights: &CellWeights,
    x: &Vector,
    h_prev: &Vector,
    cell_prev: &Vector,
) -> LstmStep {
    let CellWeights::Lstm {
        w_i,
        u_i,
        w_o,
        u_o,
        w_f,
        u_f,
        w_c,
        u_c,
    } = weights
    else {
        panic!("lstm_cell called with simple-RNN weights");
    };
    let pre_i = w_i.apply(x).add(&u_i.apply(h_prev));
    let pre_o = w_o.apply(x).add(&u_o.apply(h_prev));
    let pre_f = w_f.apply(x).add(&u_f.apply(h_prev));
    let pre_c = w_c.apply(x).add(&u_c.apply(h_prev));
    let gate_i = Activation::Sigmoid.apply(&pre_i);
    let gate_o = Activation::Sigmoid.apply(&pre_o);
    let gate_f = Activation::Sigmoid.apply(&pre_f);
    let candidate = Activation::Tanh.apply(&pre_c);
    let cell_state = gate_f.hadamard(cell_prev).add(&gate_i.hadamard(&candidate));
    let hidden = gate_o.hadamard(&cell_state.map(f64::tanh));
    LstmStep {
        pre_i,
        pre_o,
        pre_f,
        pre_c,
        gate_i,
        gate_o,
        gate_f,
        candidate,
        cell_state,
        hidden,
    }
}

/// Results of a single LSTM step.
pub struct LstmStep {
    pub pre_i: Vector,
    pub pre_o: Vector,
    pub pre_f: Vector,
    pub pre_c: Vector,
    pub gate_i: Vector,
    pub gate_o: Vector,
    pub gate_f: Vector,
    pub candidate: Vector,
    pub cell_state: Vector,
    pub hidden: Vector,
}

/// Runs the encoder over a sample and applies the feature head.
pub fn encode(params: &FunnolParams, sample: &FunctionalSample) -> EncodeTrace {
    encode_values(params, sample.values())
}

/// Encoder on a raw J x D value grid (already sentinel-masked).
pub fn encode_values(params: &FunnolParams, values: &Matrix) -> EncodeTrace {
    let j = values.rows();
    let l = params.dims.latent;
    let cell = match &params.cell {
        CellWeights::SimpleRnn { w, u } => {
            let mut pre = Vec::with_capacity(j);
            let mut hidden = Vec::with_capacity(j + 1);
            hidden.push(Vector::zeros(l));
            for t in 0..j {
                let x = input_row(values, t);
                let (p, h) = rnn_cell(w, u, params.activations.hidden, &x, &hidden[t]);
                pre.push(p);
                hidden.push(h);
            }
            CellTrace::SimpleRnn { pre, hidden }
        }
        lstm @ CellWeights::Lstm { .. } => {
            let mut tr = CellTrace::Lstm {
                pre_i: Vec::with_capacity(j),
                pre_o: Vec::with_capacity(j),
                pre_f: Vec::with_capacity(j),
                pre_c: Vec::with_capacity(j),
                gate_i: Vec::with_capacity(j),
                gate_o: Vec::with_capacity(j),
                gate_f: Vec::with_capacity(j),
                candidate: Vec::with_capacity(j),
                cell_state: vec![Vector::zeros(l)],
                hidden: vec![Vector::zeros(l)],
            };
            let CellTrace::Lstm {
                pre_i,
                pre_o,
                pre_f,
                pre_c,
                gate_i,
                gate_o,
                gate_f,
                candidate,
                cell_state,
                hidden,
            } = &mut tr
            else {
                unreachable!()
            };
            for t in 0..j {
                let x = input_row(values, t);
                let step = lstm_cell(lstm, &x, &hidden[t], &cell_state[t]);
                pre_i.push(step.pre_i);
                pre_o.push(step.pre_o);
                pre_f.push(step.pre_f);
                pre_c.push(step.pre_c);
                gate_i.push(step.gate_i);
                gate_o.push(step.gate_o);
                gate_f.push(step.gate_f);
                candidate.push(step.candidate);
                cell_state.push(step.cell_state);
                hidden.push(step.hidden);
            }
            tr
        }
    };
    let h_last = cell
        .hidden()
        .last()
        .expect("at least the initial state")
        .clone();
    let feature_pre = params.feature.apply(&h_last);
    let feature = params.activations.feature.apply(&feature_pre);
    EncodeTrace {
        cell,
        feature_pre,
        feature,
    }
}

/// Convenience: just the feature vector of a sample.
pub fn representation(params: &FunnolParams, sample: &FunctionalSample) -> Vector {
    encode(params, sample).feature
}

/// Unrolls the decoder for `steps` grid points. The feature vector drives
/// every step; the initial decoder state is zero.
pub fn decode(params: &FunnolParams, feature: &Vector, steps: usize) -> DecodeTrace {
    let l = params.dims.latent;
    let drive = params.dec_in.apply(feature);
    let mut tr = DecodeTrace {
        hidden_pre: Vec::with_capacity(steps),
        hidden: vec![Vector::zeros(l)],
        output_pre: Vec::with_capacity(steps),
        output: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let pre = drive.add(&params.dec_rec.apply(&tr.hidden[t]));
        let h = params.activations.hidden.apply(&pre);
        let out_pre = params.readout.apply(&h);
        let out = params.activations.output.apply(&out_pre);
        tr.hidden_pre.push(pre);
        tr.hidden.push(h);
        tr.output_pre.push(out_pre);
        tr.output.push(out);
    }
    tr
}

/// Class probabilities from a feature vector.
pub fn classify(params: &FunnolParams, feature: &Vector) -> Vector {
    params
        .activations
        .class
        .apply(&params.class_map.apply(feature))
}

/// Full forward pass: encode, decode at the sample's own grid length,
/// classify. All traces retained.
pub fn forward(params: &FunnolParams, sample: &FunctionalSample) -> ForwardTrace {
    forward_values(params, sample.values().clone())
}

/// Forward pass on an explicit encoder input grid.
pub fn forward_values(params: &FunnolParams, input: Matrix) -> ForwardTrace {
    let encode = encode_values(params, &input);
    let decode = decode(params, &encode.feature, input.rows());
    let class_pre = params.class_map.apply(&encode.feature);
    let class_probs = params.activations.class.apply(&class_pre);
    ForwardTrace {
        input,
        encode,
        decode,
        class_pre,
        class_probs,
    }
}
