//! Attention encoder-decoder shared by the user and agent models.
//!
//! * encoder: bidirectional single-layer LSTM; `h_j = [fwd_j ; bwd_j]`
//! * attention: additive, `e_ij = v . tanh(Wq s_{i-1} + Wk h_j + b)`
//! * decoder: single-layer LSTM fed `[emb(y_{i-1}) ; c_i]`, initial state
//!   `tanh(W bwd_1 + b)` with a zero cell
//! * readout: `softmax(Wo [s_i ; c_i ; emb(y_{i-1})] + bo)`
//!
//! Everything runs in `f64`. Gradients are computed by hand (see
//! [`nll_loss`]) and checked against finite differences in the tests.

mod cell;
mod checkpoint;
mod network;
mod optim;
mod search;
mod train;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cell::LstmWeights;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{
    attention, decode_step, encode_seq, forward_backward, nll_loss, sequence_log_prob, DecoderState, EncoderOutput,
};
pub use optim::{global_norm, sgd_update};
pub use search::{beam_search, greedy, sample, Hypothesis};
pub use train::{perplexity, supervised_step, train_supervised, EpochStats, Example, TrainConfig, TrainOutcome};

pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
}

impl Dims {
    pub fn readout(&self) -> usize {
        3 * self.hidden + self.embed
    }
}

/// Trainable parameters of one encoder-decoder. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqParams {
    pub dims: Dims,
    /// vocab x embed
    pub embedding: Array2<f64>,
    pub enc_fwd: LstmWeights,
    pub enc_bwd: LstmWeights,
    /// hidden x hidden
    pub init_w: Array2<f64>,
    pub init_b: Array1<f64>,
    /// attention x hidden
    pub att_query: Array2<f64>,
    /// attention x 2*hidden
    pub att_key: Array2<f64>,
    pub att_bias: Array1<f64>,
    pub att_v: Array1<f64>,
    pub dec: LstmWeights,
    /// vocab x (3*hidden + embed)
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

pub type Gradients = Seq2SeqParams;

impl Seq2SeqParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            vocab: v,
            embed: e,
            hidden: h,
            attention: a,
        } = dims;
        Self {
            dims,
            embedding: Array2::zeros((v, e)),
            enc_fwd: LstmWeights::zeros(e, h),
            enc_bwd: LstmWeights::zeros(e, h),
            init_w: Array2::zeros((h, h)),
            init_b: Array1::zeros(h),
            att_query: Array2::zeros((a, h)),
            att_key: Array2::zeros((a, 2 * h)),
            att_bias: Array1::zeros(a),
            att_v: Array1::zeros(a),
            dec: LstmWeights::zeros(e + 2 * h, h),
            out_w: Array2::zeros((v, dims.readout())),
            out_b: Array1::zeros(v),
        }
    }

    /// Every entry uniform in `[-0.08, 0.08]`.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(dims);
        for (_, mut t) in params.tensors_mut() {
            t.mapv_inplace(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE));
        }
        params
    }

    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        vec![
            ("embedding", self.embedding.view().into_dyn()),
            ("enc_fwd.w", self.enc_fwd.w.view().into_dyn()),
            ("enc_fwd.b", self.enc_fwd.b.view().into_dyn()),
            ("enc_bwd.w", self.enc_bwd.w.view().into_dyn()),
            ("enc_bwd.b", self.enc_bwd.b.view().into_dyn()),
            ("init.w", self.init_w.view().into_dyn()),
            ("init.b", self.init_b.view().into_dyn()),
            ("att.query", self.att_query.view().into_dyn()),
            ("att.key", self.att_key.view().into_dyn()),
            ("att.bias", self.att_bias.view().into_dyn()),
            ("att.v", self.att_v.view().into_dyn()),
            ("dec.w", self.dec.w.view().into_dyn()),
            ("dec.b", self.dec.b.view().into_dyn()),
            ("out.w", self.out_w.view().into_dyn()),
            ("out.b", self.out_b.view().into_dyn()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        vec![
            ("embedding", self.embedding.view_mut().into_dyn()),
            ("enc_fwd.w", self.enc_fwd.w.view_mut().into_dyn()),
            ("enc_fwd.b", self.enc_fwd.b.view_mut().into_dyn()),
            ("enc_bwd.w", self.enc_bwd.w.view_mut().into_dyn()),
            ("enc_bwd.b", self.enc_bwd.b.view_mut().into_dyn()),
            ("init.w", self.init_w.view_mut().into_dyn()),
            ("init.b", self.init_b.view_mut().into_dyn()),
            ("att.query", self.att_query.view_mut().into_dyn()),
            ("att.key", self.att_key.view_mut().into_dyn()),
            ("att.bias", self.att_bias.view_mut().into_dyn()),
            ("att.v", self.att_v.view_mut().into_dyn()),
            ("dec.w", self.dec.w.view_mut().into_dyn()),
            ("dec.b", self.dec.b.view_mut().into_dyn()),
            ("out.w", self.out_w.view_mut().into_dyn()),
            ("out.b", self.out_b.view_mut().into_dyn()),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * other`
    pub fn scaled_add(&mut self, alpha: f64, other: &Seq2SeqParams) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, &b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * alpha);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0))
    }
}

#[cfg(test)]
mod tests;
