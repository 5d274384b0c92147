//! The one-turn user model: agent utterance in, user reply out.

use crate::corpus::{Role, Session};
use crate::error::{Error, Result};
use crate::seq2seq::{beam_search, train_supervised, Dims, Example, Hypothesis, Seq2SeqParams, TrainConfig, TrainOutcome};
use crate::slots::{indicator, SlotSchema, SlotState};
use crate::text::{decode, encode, Vocabulary};

/// An adjacent (agent turn, following user turn) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserPair {
    pub agent: Vec<String>,
    pub user: Vec<String>,
}

/// Every agent turn immediately followed by a user turn. The opening user
/// turn has no agent context and is skipped.
pub fn extract_user_pairs(sessions: &[Session]) -> Vec<UserPair> {
    let mut pairs = Vec::new();
    for s in sessions {
        for w in s.turns.windows(2) {
            if w[0].role == Role::Agent && w[1].role == Role::User {
                pairs.push(UserPair {
                    agent: w[0].text.clone(),
                    user: w[1].text.clone(),
                });
            }
        }
    }
    pairs
}

pub fn user_examples(pairs: &[UserPair], vocab: &Vocabulary, max_len: usize) -> Vec<Example> {
    pairs
        .iter()
        .map(|p| Example {
            input: encode(&p.agent, vocab, max_len),
            target: encode(&p.user, vocab, max_len),
        })
        .collect()
}

/// Trains a fresh user model, keeping the best-validation epoch.
pub fn train_user(
    train: &[UserPair],
    valid: &[UserPair],
    vocab: &Vocabulary,
    dims: Dims,
    max_len: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if dims.vocab != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "model vocabulary {} differs from the vocabulary size {}",
            dims.vocab,
            vocab.len()
        )));
    }
    let init = Seq2SeqParams::init(dims, cfg.seed);
    train_supervised(
        init,
        &user_examples(train, vocab, max_len),
        &user_examples(valid, vocab, max_len),
        cfg,
    )
}

/// Beam candidates for the user's reply to `agent`, best first.
pub fn reply<S: AsRef<str>>(
    params: &Seq2SeqParams,
    vocab: &Vocabulary,
    agent: &[S],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    beam_search(params, &encode(agent, vocab, max_len), beam_width, max_len)
}

/// Index of the reply yielding the most new information for `tags`. Ties
/// keep the earlier (better scored) candidate.
pub fn best_reply<S: AsRef<str>>(
    agent: &[S],
    replies: &[Vec<String>],
    tags: &SlotState,
    schema: &SlotSchema,
) -> Option<(usize, u8)> {
    let mut best: Option<(usize, u8)> = None;
    for (i, r) in replies.iter().enumerate() {
        let v = indicator(agent, r, tags, schema);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

pub fn decode_replies(replies: &[Hypothesis], vocab: &Vocabulary) -> Vec<Vec<String>> {
    replies.iter().map(|h| decode(&h.tokens, vocab)).collect()
}
