use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::forward_backward;
use super::optim::sgd_update;
use super::{Gradients, Seq2SeqParams};
use crate::error::{Error, Result};
use crate::text::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Learning-rate multiplier applied after an epoch without improvement.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            clip_norm: 5.0,
            batch_size: 16,
            max_epochs: 12,
            patience: 3,
            lr_decay: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_perplexity: f64,
    pub valid_perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation perplexity.
    pub params: Seq2SeqParams,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_perplexity: f64,
}

/// `exp(total NLL / total target tokens)`.
pub fn perplexity(params: &Seq2SeqParams, examples: &[Example]) -> Result<f64> {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    let mut scratch = Gradients::zeros(params.dims);
    for ex in examples {
        nll += forward_backward(params, &ex.input, &ex.target, &mut scratch, 0.0)?;
        tokens += ex.target.len();
    }
    if tokens == 0 {
        return Err(Error::InvalidArgument("no target tokens".into()));
    }
    Ok((nll / tokens as f64).exp())
}

/// One averaged-gradient SGD step on `batch`. Returns (total NLL, tokens).
pub fn supervised_step(
    params: &mut Seq2SeqParams,
    batch: &[&Example],
    learning_rate: f64,
    clip_norm: f64,
) -> Result<(f64, usize)> {
    let mut grad = Gradients::zeros(params.dims);
    let scale = 1.0 / batch.len() as f64;
    let mut nll = 0.0;
    let mut tokens = 0;
    for ex in batch {
        nll += forward_backward(params, &ex.input, &ex.target, &mut grad, scale)?;
        tokens += ex.target.len();
    }
    sgd_update(params, &grad, learning_rate, clip_norm)?;
    Ok((nll, tokens))
}

/// Mini-batch SGD with early stopping on validation perplexity.
pub fn train_supervised(
    init: Seq2SeqParams,
    train: &[Example],
    valid: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init;
    let mut best = params.clone();
    let mut best_ppl = perplexity(&params, valid)?;
    let mut best_epoch = 0;
    let mut lr = cfg.learning_rate;
    let mut bad_epochs = 0;
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut nll = 0.0;
        let mut tokens = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (l, n) = supervised_step(&mut params, &batch, lr, cfg.clip_norm).map_err(|e| match e {
                Error::NonFiniteGradient => Error::Divergence { epoch, loss: f64::NAN },
                other => other,
            })?;
            nll += l;
            tokens += n;
        }
        let train_ppl = (nll / tokens as f64).exp();
        if !nll.is_finite() {
            return Err(Error::Divergence { epoch, loss: nll });
        }
        let valid_ppl = perplexity(&params, valid)?;
        trace.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_perplexity: train_ppl,
            valid_perplexity: valid_ppl,
        });
        if valid_ppl < best_ppl {
            best_ppl = valid_ppl;
            best = params.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            lr *= cfg.lr_decay;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        trace,
        best_epoch,
        best_valid_perplexity: best_ppl,
    })
}
