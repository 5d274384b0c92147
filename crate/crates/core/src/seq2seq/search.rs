use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{decode_step_log, encode_seq, DecoderState};
use super::Seq2SeqParams;
use crate::error::{Error, Result};
use crate::text::{TokenId, BOS_ID, EOS_ID};

/// A decoded sequence. `tokens` includes the closing EOS when `finished`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Length-normalized log-probability; the negative log of perplexity.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            self.log_prob
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    pub fn perplexity(&self) -> f64 {
        (-self.score()).exp()
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS_ID) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Higher score first; equal scores fall back to token order.
pub(crate) fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score().total_cmp(&a.score()).then_with(|| a.tokens.cmp(&b.tokens))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn decode_loop(
    params: &Seq2SeqParams,
    input: &[TokenId],
    max_len: usize,
    mut choose: impl FnMut(&[f64]) -> TokenId,
) -> Result<Hypothesis> {
    let enc = encode_seq(params, input)?;
    let mut state = enc.initial.clone();
    let mut prev = BOS_ID;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let (next, log_probs) = decode_step_log(params, &enc, &state, prev);
        let lp = log_probs.as_slice().expect("contiguous");
        let y = choose(lp);
        hyp.log_prob += lp[y];
        hyp.tokens.push(y);
        if y == EOS_ID {
            hyp.finished = true;
            break;
        }
        state = next;
        prev = y;
    }
    Ok(hyp)
}

/// Ancestral sampling from the per-step distribution; stops at EOS or after
/// `max_len` tokens.
pub fn sample<R: Rng + ?Sized>(
    params: &Seq2SeqParams,
    input: &[TokenId],
    max_len: usize,
    rng: &mut R,
) -> Result<Hypothesis> {
    decode_loop(params, input, max_len, |lp| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return i;
            }
        }
        // Rounding left u above the total mass.
        argmax(lp)
    })
}

/// The zero-temperature limit of [`sample`]: argmax at every step, lowest
/// id on ties.
pub fn greedy(params: &Seq2SeqParams, input: &[TokenId], max_len: usize) -> Result<Hypothesis> {
    decode_loop(params, input, max_len, argmax)
}

struct Live {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: DecoderState,
}

/// Beam search returning up to `beam_width` finished hypotheses ranked by
/// length-normalized log-probability.
///
/// At each step the `beam_width` best expansions by cumulative
/// log-probability survive; those ending in EOS are set aside. Search stops
/// when `beam_width` hypotheses have finished, none are live, or `max_len`
/// tokens have been emitted. If nothing finished, the surviving unfinished
/// hypotheses are returned instead.
pub fn beam_search(
    params: &Seq2SeqParams,
    input: &[TokenId],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if beam_width < 1 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let enc = encode_seq(params, input)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: enc.initial.clone(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() || finished.len() >= beam_width {
            break;
        }
        let mut expansions: Vec<(usize, TokenId, f64, DecoderState)> = Vec::new();
        let mut candidates: Vec<(usize, TokenId, f64)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (k, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS_ID);
            let (next, log_probs) = decode_step_log(params, &enc, &hyp.state, prev);
            for (y, lp) in log_probs.iter().enumerate() {
                candidates.push((k, y, hyp.log_prob + lp));
            }
            states.push(next);
        }
        // Live hypotheses share a length, so (prefix, token) order is the
        // lexicographic order of the extended sequences.
        candidates.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| live[a.0].tokens.cmp(&live[b.0].tokens))
                .then_with(|| a.1.cmp(&b.1))
        });
        candidates.truncate(beam_width);
        for (k, y, lp) in candidates {
            expansions.push((k, y, lp, states[k].clone()));
        }
        let mut next_live = Vec::new();
        for (k, y, lp, state) in expansions {
            let mut tokens = live[k].tokens.clone();
            tokens.push(y);
            if y == EOS_ID {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: true,
                });
            } else {
                next_live.push(Live {
                    tokens,
                    log_prob: lp,
                    state,
                });
            }
        }
        live = next_live;
    }
    if finished.is_empty() {
        finished = live
            .into_iter()
            .map(|l| Hypothesis {
                tokens: l.tokens,
                log_prob: l.log_prob,
                finished: false,
            })
            .collect();
    }
    finished.sort_by(rank);
    finished.truncate(beam_width);
    Ok(finished)
}
