//! The agent: supervised pre-training on `(tags, user utterance) -> agent
//! utterance`, REINFORCE fine-tuning against the user model, and
//! user-model reranking at inference time.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Role, Session};
use crate::error::{Error, Result};
use crate::seq2seq::{
    beam_search, forward_backward, sample, sgd_update, train_supervised, Dims, Example, Gradients, Hypothesis,
    Seq2SeqParams, TrainConfig, TrainOutcome,
};
use crate::slots::{extract_slots, merge, SlotSchema, SlotState};
use crate::text::{decode, encode, encode_tokens, tokenize, TokenId, Vocabulary, EOS_ID, SEP_ID};
use crate::user_model::best_reply;

/// The two supervised agents: without (SLNT) and with (SLT) the tag segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Slnt,
    Slt,
}

impl AgentKind {
    pub fn with_tags(self) -> bool {
        self == AgentKind::Slt
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Slnt => "slnt",
            AgentKind::Slt => "slt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInput {
    pub tags: SlotState,
    pub user_text: Vec<String>,
}

/// `[<slot:a> value.. <slot:b> value.. <sep> utterance.. <eos>]`, slots in
/// schema order. Only the utterance is truncated to respect `max_len`.
pub fn encode_agent_input(
    input: &AgentInput,
    vocab: &Vocabulary,
    schema: &SlotSchema,
    max_len: usize,
    with_tags: bool,
) -> Vec<TokenId> {
    let mut ids = Vec::new();
    if with_tags {
        for spec in schema.slots() {
            if let Some(value) = input.tags.get(&spec.name) {
                ids.push(vocab.marker_id(&spec.name).unwrap_or(crate::text::UNK_ID));
                ids.extend(encode_tokens(&tokenize(value), vocab));
            }
        }
    }
    ids.push(SEP_ID);
    let room = max_len.saturating_sub(ids.len() + 1).min(input.user_text.len());
    ids.extend(encode_tokens(&input.user_text[..room], vocab));
    ids.push(EOS_ID);
    ids
}

/// A reference agent turn with its conditioning input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSample {
    pub input: AgentInput,
    pub response: Vec<String>,
}

/// One sample per agent turn that follows a user turn: the tags filled so
/// far, the user's utterance and the agent's reply.
pub fn agent_samples(sessions: &[Session]) -> Vec<AgentSample> {
    let mut out = Vec::new();
    for s in sessions {
        for w in s.turns.windows(2) {
            if w[0].role == Role::User && w[1].role == Role::Agent {
                out.push(AgentSample {
                    input: AgentInput {
                        tags: w[1].tags_before.clone(),
                        user_text: w[0].text.clone(),
                    },
                    response: w[1].text.clone(),
                });
            }
        }
    }
    out
}

pub fn agent_examples(
    samples: &[AgentSample],
    vocab: &Vocabulary,
    schema: &SlotSchema,
    max_len: usize,
    with_tags: bool,
) -> Vec<Example> {
    samples
        .iter()
        .map(|s| Example {
            input: encode_agent_input(&s.input, vocab, schema, max_len, with_tags),
            target: encode(&s.response, vocab, max_len),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn pretrain_agent(
    train: &[AgentSample],
    valid: &[AgentSample],
    vocab: &Vocabulary,
    schema: &SlotSchema,
    dims: Dims,
    max_len: usize,
    kind: AgentKind,
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
        &agent_examples(train, vocab, schema, max_len, kind.with_tags()),
        &agent_examples(valid, vocab, schema, max_len, kind.with_tags()),
        cfg,
    )
}

/// One simulated exchange: a candidate agent turn, the user reply used to
/// score it and the resulting reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub candidate: Vec<String>,
    pub reply: Vec<String>,
    pub indicator: u8,
    pub reward: f64,
}

/// Scores agent candidates with the frozen user model. Beam replies are
/// cached per candidate since the user model never changes.
pub struct UserSimulator<'a> {
    user: &'a Seq2SeqParams,
    vocab: &'a Vocabulary,
    schema: &'a SlotSchema,
    beam_width: usize,
    max_len: usize,
    baseline: f64,
    cache: HashMap<Vec<TokenId>, Vec<Vec<String>>>,
}

impl<'a> UserSimulator<'a> {
    pub fn new(
        user: &'a Seq2SeqParams,
        vocab: &'a Vocabulary,
        schema: &'a SlotSchema,
        beam_width: usize,
        max_len: usize,
        baseline: f64,
    ) -> Self {
        Self {
            user,
            vocab,
            schema,
            beam_width,
            max_len,
            baseline,
            cache: HashMap::new(),
        }
    }

    pub fn vocab(&self) -> &'a Vocabulary {
        self.vocab
    }

    pub fn schema(&self) -> &'a SlotSchema {
        self.schema
    }

    /// User-model beam replies to `candidate`, best first.
    pub fn replies(&mut self, candidate: &[TokenId]) -> Result<&[Vec<String>]> {
        let key: Vec<TokenId> = candidate.iter().copied().take_while(|&t| t != EOS_ID).collect();
        if !self.cache.contains_key(&key) {
            let mut input = key.clone();
            input.truncate(self.max_len.saturating_sub(1).max(1));
            input.push(EOS_ID);
            let beam = beam_search(self.user, &input, self.beam_width, self.max_len)?;
            let replies = beam.iter().map(|h| decode(&h.tokens, self.vocab)).collect();
            self.cache.insert(key.clone(), replies);
        }
        Ok(&self.cache[&key])
    }

    /// `I(A, O | tags) - baseline` with `O` the most informative of the
    /// user model's beam replies.
    pub fn reward(&mut self, candidate: &[TokenId], tags: &SlotState) -> Result<RewardSample> {
        let text = decode(candidate, self.vocab);
        let schema = self.schema;
        let replies = self.replies(candidate)?;
        let (idx, ind) = best_reply(&text, replies, tags, schema).unwrap_or((usize::MAX, 0));
        let reply = replies.get(idx).cloned().unwrap_or_default();
        Ok(RewardSample {
            candidate: text,
            reply,
            indicator: ind,
            reward: f64::from(ind) - self.baseline,
        })
    }
}

/// Conditioning for one RL update: the encoded input and the tags it
/// encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RlInput {
    pub ids: Vec<TokenId>,
    pub tags: SlotState,
}

pub fn rl_inputs(
    samples: &[AgentSample],
    vocab: &Vocabulary,
    schema: &SlotSchema,
    max_len: usize,
    with_tags: bool,
) -> Vec<RlInput> {
    samples
        .iter()
        .map(|s| RlInput {
            ids: encode_agent_input(&s.input, vocab, schema, max_len, with_tags),
            tags: s.input.tags.clone(),
        })
        .collect()
}

/// Reward of `candidate` over `horizon` simulated exchanges. Beyond the
/// first, the agent answers with its greedy beam top-1.
pub fn rl_reward(
    candidate: &[TokenId],
    input: &RlInput,
    sim: &mut UserSimulator<'_>,
    agent: &Seq2SeqParams,
    with_tags: bool,
    horizon: usize,
    max_len: usize,
) -> Result<f64> {
    let first = sim.reward(candidate, &input.tags)?;
    let mut total = first.reward;
    let schema = sim.schema();
    let vocab = sim.vocab();
    let mut tags = merge(
        &input.tags,
        &merge(&extract_slots(&first.candidate, schema), &extract_slots(&first.reply, schema)),
    );
    let mut user_text = first.reply;
    for _ in 1..horizon {
        if schema.is_complete(&tags) {
            break;
        }
        let ids = encode_agent_input(
            &AgentInput {
                tags: tags.clone(),
                user_text: user_text.clone(),
            },
            vocab,
            schema,
            max_len,
            with_tags,
        );
        let Some(next) = beam_search(agent, &ids, 1, max_len)?.into_iter().next() else {
            break;
        };
        let step = sim.reward(&next.tokens, &tags)?;
        total += step.reward;
        tags = merge(&tags, &merge(&extract_slots(&step.candidate, schema), &extract_slots(&step.reply, schema)));
        user_text = step.reply;
    }
    Ok(total)
}

/// Adds the gradient of `-sum_k r_k log p(y_k | x)` over `samples`, scaled
/// by `scale`. Zero-reward samples are skipped.
pub fn policy_gradient(
    params: &Seq2SeqParams,
    input: &[TokenId],
    samples: &[(Vec<TokenId>, f64)],
    grad: &mut Gradients,
    scale: f64,
) -> Result<()> {
    for (tokens, r) in samples {
        if *r != 0.0 && !tokens.is_empty() {
            forward_backward(params, input, tokens, grad, r * scale)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Responses sampled per input.
    pub samples_per_input: usize,
    /// Simulated exchanges per reward.
    pub horizon: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RlStepStats {
    pub samples: usize,
    pub reward_sum: f64,
    pub updated: bool,
}

/// One REINFORCE update: sample responses, score them with the user model
/// and step along the reward-weighted log-likelihood gradient.
pub fn rl_step<R: Rng + ?Sized>(
    agent: &mut Seq2SeqParams,
    batch: &[&RlInput],
    sim: &mut UserSimulator<'_>,
    with_tags: bool,
    cfg: &RlConfig,
    rng: &mut R,
) -> Result<RlStepStats> {
    let mut grad = Gradients::zeros(agent.dims);
    let mut stats = RlStepStats::default();
    let n = (batch.len() * cfg.samples_per_input).max(1);
    for input in batch {
        let mut scored = Vec::with_capacity(cfg.samples_per_input);
        for _ in 0..cfg.samples_per_input {
            let hyp = sample(agent, &input.ids, cfg.max_len, rng)?;
            let r = rl_reward(&hyp.tokens, input, sim, agent, with_tags, cfg.horizon, cfg.max_len)?;
            stats.samples += 1;
            stats.reward_sum += r;
            scored.push((hyp.tokens, r));
        }
        policy_gradient(agent, &input.ids, &scored, &mut grad, 1.0 / n as f64)?;
    }
    if !grad.is_zero() {
        sgd_update(agent, &grad, cfg.learning_rate, cfg.clip_norm)?;
        stats.updated = true;
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    /// Supervised and RL batches per round.
    pub sl_rl_ratio: (usize, usize),
    pub rounds: usize,
    /// RL starts once validation perplexity falls below this.
    pub fluency_gate: f64,
    /// Rounds between validation checks.
    pub eval_every: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointStats {
    pub round: usize,
    pub valid_perplexity: f64,
    pub rl_active: bool,
    /// Mean sampled reward over RL batches since the previous check.
    pub mean_reward: f64,
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub params: Seq2SeqParams,
    pub trace: Vec<JointStats>,
}

/// Alternates supervised and REINFORCE batches. Supervised batches run
/// from the start; RL batches join once the fluency gate opens.
#[allow(clippy::too_many_arguments)]
pub fn joint_train(
    init: Seq2SeqParams,
    sl_train: &[Example],
    sl_valid: &[Example],
    rl_data: &[RlInput],
    sim: &mut UserSimulator<'_>,
    with_tags: bool,
    sl: &TrainConfig,
    rl: &RlConfig,
    joint: &JointConfig,
) -> Result<JointOutcome> {
    let (n_sl, n_rl) = joint.sl_rl_ratio;
    if n_sl + n_rl == 0 {
        return Err(Error::InvalidArgument("sl_rl_ratio must not be (0, 0)".into()));
    }
    if (n_sl > 0 && sl_train.is_empty()) || (n_rl > 0 && rl_data.is_empty()) || sl_valid.is_empty() {
        return Err(Error::InvalidArgument("joint training needs data for every active phase".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(joint.seed);
    let mut params = init;
    let mut sl_order: Vec<usize> = (0..sl_train.len()).collect();
    let mut rl_order: Vec<usize> = (0..rl_data.len()).collect();
    sl_order.shuffle(&mut rng);
    rl_order.shuffle(&mut rng);
    let (mut sl_at, mut rl_at) = (0, 0);
    let mut ppl = crate::seq2seq::perplexity(&params, sl_valid)?;
    let mut gate_open = ppl < joint.fluency_gate;
    let mut trace = vec![JointStats {
        round: 0,
        valid_perplexity: ppl,
        rl_active: gate_open,
        mean_reward: 0.0,
    }];
    let (mut reward_sum, mut reward_n) = (0.0, 0usize);
    for round in 1..=joint.rounds {
        for _ in 0..n_sl {
            let batch = next_batch(&mut sl_order, &mut sl_at, sl.batch_size, &mut rng);
            let refs: Vec<&Example> = batch.iter().map(|&i| &sl_train[i]).collect();
            crate::seq2seq::supervised_step(&mut params, &refs, sl.learning_rate, sl.clip_norm).map_err(|e| {
                divergence(e, round)
            })?;
        }
        if gate_open {
            for _ in 0..n_rl {
                let batch = next_batch(&mut rl_order, &mut rl_at, rl.batch_size, &mut rng);
                let refs: Vec<&RlInput> = batch.iter().map(|&i| &rl_data[i]).collect();
                let stats = rl_step(&mut params, &refs, sim, with_tags, rl, &mut rng).map_err(|e| divergence(e, round))?;
                reward_sum += stats.reward_sum;
                reward_n += stats.samples;
            }
        }
        if round % joint.eval_every.max(1) == 0 || round == joint.rounds {
            ppl = crate::seq2seq::perplexity(&params, sl_valid)?;
            if !ppl.is_finite() {
                return Err(Error::Divergence { epoch: round, loss: ppl });
            }
            let was_open = gate_open;
            gate_open = gate_open || ppl < joint.fluency_gate;
            trace.push(JointStats {
                round,
                valid_perplexity: ppl,
                rl_active: was_open,
                mean_reward: if reward_n > 0 { reward_sum / reward_n as f64 } else { 0.0 },
            });
            reward_sum = 0.0;
            reward_n = 0;
        }
    }
    Ok(JointOutcome { params, trace })
}

fn divergence(e: Error, round: usize) -> Error {
    match e {
        Error::NonFiniteGradient => Error::Divergence {
            epoch: round,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// The next `size` indices of a reshuffled-per-pass ordering.
fn next_batch<R: Rng + ?Sized>(order: &mut [usize], at: &mut usize, size: usize, rng: &mut R) -> Vec<usize> {
    let size = size.max(1).min(order.len());
    if *at + size > order.len() {
        order.shuffle(rng);
        *at = 0;
    }
    let out = order[*at..*at + size].to_vec();
    *at += size;
    out
}

/// A beam candidate with its length-normalized model score and, for the
/// top candidates, the simulated reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub hypothesis: Hypothesis,
    pub score: f64,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rerank {
    /// Beam order, best model score first.
    pub candidates: Vec<ScoredCandidate>,
    /// Index into `candidates` of the returned response.
    pub chosen: usize,
}

impl Rerank {
    pub fn chosen(&self) -> &Hypothesis {
        &self.candidates[self.chosen].hypothesis
    }

    /// Candidate indices in presentation order: the scored top candidates
    /// by reward then model score, followed by the rest in beam order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut scored: Vec<usize> = (0..self.candidates.len())
            .filter(|&i| self.candidates[i].reward.is_some())
            .collect();
        scored.sort_by(|&a, &b| {
            let (ca, cb) = (&self.candidates[a], &self.candidates[b]);
            cb.reward
                .unwrap_or(0.0)
                .total_cmp(&ca.reward.unwrap_or(0.0))
                .then_with(|| a.cmp(&b))
        });
        scored.extend((0..self.candidates.len()).filter(|&i| self.candidates[i].reward.is_none()));
        scored
    }
}

/// Beam search, then user-model scoring of the `top_k` best candidates. The
/// highest-reward candidate wins, ties going to the better model score; if
/// none earns a reward the beam top-1 is returned.
pub fn rerank_infer(
    agent: &Seq2SeqParams,
    sim: &mut UserSimulator<'_>,
    input: &RlInput,
    beam_width: usize,
    top_k: usize,
    max_len: usize,
) -> Result<Rerank> {
    let beam = beam_search(agent, &input.ids, beam_width, max_len)?;
    let mut candidates = Vec::with_capacity(beam.len());
    for (i, h) in beam.into_iter().enumerate() {
        let reward = if i < top_k {
            Some(sim.reward(&h.tokens, &input.tags)?.reward)
        } else {
            None
        };
        candidates.push(ScoredCandidate {
            score: h.score(),
            hypothesis: h,
            reward,
        });
    }
    Ok(Rerank {
        chosen: select(&candidates),
        candidates,
    })
}

fn select(candidates: &[ScoredCandidate]) -> usize {
    let mut chosen = 0;
    let mut best = 0.0;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(r) = c.reward {
            // Strict comparison: the earlier, better-scored candidate keeps ties.
            if r > best {
                best = r;
                chosen = i;
            }
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::{nll_loss, sequence_log_prob};
    use crate::text::PAD_ID;

    fn vocab() -> (SlotSchema, Vocabulary) {
        let schema = SlotSchema::coffee();
        let vocab = Vocabulary::with_tokens(&schema, &["hot", "grande", "latte", "?", "what", "size"]).unwrap();
        (schema, vocab)
    }

    #[test]
    fn encodes_tags_then_separator_then_utterance() {
        let (schema, vocab) = vocab();
        let mut tags = SlotState::new();
        tags.insert("temperature", "hot");
        let input = AgentInput {
            tags,
            user_text: tokenize("grande"),
        };
        let ids = encode_agent_input(&input, &vocab, &schema, 30, true);
        let expected = vec![
            vocab.marker_id("temperature").unwrap(),
            vocab.id("hot").unwrap(),
            SEP_ID,
            vocab.id("grande").unwrap(),
            EOS_ID,
        ];
        assert_eq!(ids, expected);
        assert_eq!(
            encode_agent_input(&input, &vocab, &schema, 30, false),
            vec![SEP_ID, vocab.id("grande").unwrap(), EOS_ID]
        );
    }

    #[test]
    fn truncation_keeps_every_tag() {
        let (schema, vocab) = vocab();
        let tags: SlotState = [
            ("taste", "latte"),
            ("size", "medium"),
            ("temperature", "hot"),
            ("address", "<num> tonglinge road"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let input = AgentInput {
            tags,
            user_text: vec!["hot".to_string(); 40],
        };
        let ids = encode_agent_input(&input, &vocab, &schema, 30, true);
        assert_eq!(ids.len(), 30);
        assert_eq!(*ids.last().unwrap(), EOS_ID);
        for slot in ["taste", "size", "temperature", "address"] {
            assert!(ids.contains(&vocab.marker_id(slot).unwrap()));
        }
        let sep = ids.iter().position(|&t| t == SEP_ID).unwrap();
        assert!(sep < 29);
    }

    #[test]
    fn samples_pair_user_turns_with_agent_replies() {
        let sessions = crate::corpus::generate_corpus(&SlotSchema::coffee(), 20, 5).unwrap();
        for s in agent_samples(&sessions) {
            assert!(!s.response.is_empty());
            assert!(!s.input.user_text.is_empty());
        }
        let total: usize = sessions
            .iter()
            .map(|s| s.turns.iter().filter(|t| t.role == Role::Agent).count())
            .sum();
        assert_eq!(agent_samples(&sessions).len(), total);
    }

    fn tiny(vocab: usize, seed: u64) -> Seq2SeqParams {
        Seq2SeqParams::init(
            Dims {
                vocab,
                embed: 4,
                hidden: 6,
                attention: 5,
            },
            seed,
        )
    }

    #[test]
    fn policy_gradient_is_reward_scaled_nll_gradient() {
        let params = tiny(9, 3);
        let input = [6, 7, 8];
        let seq = vec![4, 6, EOS_ID];
        let r = 0.75;
        let mut pg = Gradients::zeros(params.dims);
        policy_gradient(&params, &input, &[(seq.clone(), r)], &mut pg, 1.0).unwrap();
        let (_, mut nll_grad) = nll_loss(&params, &input, &seq).unwrap();
        nll_grad.scale(r);
        for ((name, a), (_, b)) in pg.tensors().into_iter().zip(nll_grad.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-10, "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_rewards_do_not_move_parameters() {
        let params = tiny(9, 4);
        let mut grad = Gradients::zeros(params.dims);
        policy_gradient(&params, &[6], &[(vec![4, EOS_ID], 0.0), (vec![5, EOS_ID], 0.0)], &mut grad, 1.0).unwrap();
        assert!(grad.is_zero());
    }

    #[test]
    fn bandit_probability_rises_monotonically() {
        // V = 3 (PAD, BOS, EOS); two-step sequences, only [PAD, EOS] pays.
        let mut params = tiny(3, 8);
        let input = [PAD_ID];
        let good = vec![PAD_ID, EOS_ID];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut prev = sequence_log_prob(&params, &input, &good).unwrap().exp();
        let start = prev;
        for _ in 0..200 {
            let h = sample(&params, &input, 2, &mut rng).unwrap();
            let r = if h.tokens == good { 1.0 } else { 0.0 };
            let mut grad = Gradients::zeros(params.dims);
            policy_gradient(&params, &input, &[(h.tokens, r)], &mut grad, 1.0).unwrap();
            if !grad.is_zero() {
                sgd_update(&mut params, &grad, 0.1, 5.0).unwrap();
            }
            let p = sequence_log_prob(&params, &input, &good).unwrap().exp();
            assert!(p >= prev, "{p} < {prev}");
            prev = p;
        }
        assert!(prev > start + 0.3, "{start} -> {prev}");
    }

    fn candidate(score: f64, reward: Option<f64>) -> ScoredCandidate {
        ScoredCandidate {
            hypothesis: Hypothesis {
                tokens: vec![EOS_ID],
                log_prob: score,
                finished: true,
            },
            score,
            reward,
        }
    }

    #[test]
    fn selection_rules() {
        let one = [
            candidate(-0.1, Some(0.0)),
            candidate(-0.3, Some(1.0)),
            candidate(-0.5, Some(0.0)),
            candidate(-0.9, None),
        ];
        assert_eq!(select(&one), 1);
        let none = [candidate(-0.1, Some(0.0)), candidate(-0.3, Some(0.0))];
        assert_eq!(select(&none), 0);
        let tie = [candidate(-0.05, Some(0.0)), candidate(-0.2, Some(1.0)), candidate(-0.9, Some(1.0))];
        assert_eq!(select(&tie), 1);
        let r = Rerank {
            candidates: tie.to_vec(),
            chosen: 1,
        };
        assert_eq!(r.ranking(), vec![1, 2, 0]);
    }

    #[test]
    fn untagged_input_is_the_tagged_input_after_the_separator() {
        let (schema, vocab) = vocab();
        let mut tags = SlotState::new();
        tags.insert("taste", "latte");
        tags.insert("temperature", "hot");
        let input = AgentInput {
            tags,
            user_text: tokenize("grande ?"),
        };
        let tagged = encode_agent_input(&input, &vocab, &schema, 30, true);
        let plain = encode_agent_input(&input, &vocab, &schema, 30, false);
        let sep = tagged.iter().position(|&t| t == SEP_ID).unwrap();
        assert_eq!(&tagged[sep..], plain.as_slice());
    }

    #[test]
    fn quick_question_answer_is_learnable() {
        let schema = SlotSchema::coffee();
        let words = tokenize("how long will it take ? usually about one hour .");
        let vocab = Vocabulary::with_tokens(&schema, &words).unwrap();
        let input = AgentInput {
            tags: SlotState::new(),
            user_text: tokenize("How long will it take?"),
        };
        let example = Example {
            input: encode_agent_input(&input, &vocab, &schema, 30, true),
            target: encode(&tokenize("Usually about one hour."), &vocab, 30),
        };
        let mut params = tiny(vocab.len(), 12);
        for _ in 0..300 {
            crate::seq2seq::supervised_step(&mut params, &[&example], 0.5, 5.0).unwrap();
        }
        let ppl = crate::seq2seq::perplexity(&params, std::slice::from_ref(&example)).unwrap();
        assert!(ppl < 2.0, "{ppl}");
    }

    /// A small corpus, vocabulary and user model for schedule tests.
    fn joint_fixture() -> (SlotSchema, Vocabulary, Vec<Example>, Vec<RlInput>, Seq2SeqParams) {
        let schema = SlotSchema::coffee();
        let sessions = crate::corpus::generate_corpus(&schema, 6, 3).unwrap();
        let vocab = crate::text::build_vocab(&sessions, &schema, 1).unwrap();
        let samples = agent_samples(&sessions);
        let examples = agent_examples(&samples, &vocab, &schema, 12, true);
        let inputs = rl_inputs(&samples, &vocab, &schema, 12, true);
        let user = tiny(vocab.len(), 30);
        (schema, vocab, examples, inputs, user)
    }

    fn schedule(ratio: (usize, usize)) -> (TrainConfig, RlConfig, JointConfig) {
        let sl = TrainConfig {
            batch_size: 3,
            learning_rate: 0.3,
            ..TrainConfig::default()
        };
        let rl = RlConfig {
            learning_rate: 0.2,
            clip_norm: 5.0,
            batch_size: 3,
            samples_per_input: 1,
            horizon: 1,
            max_len: 12,
        };
        let joint = JointConfig {
            sl_rl_ratio: ratio,
            rounds: 7,
            fluency_gate: f64::INFINITY,
            eval_every: 3,
            seed: 4,
        };
        (sl, rl, joint)
    }

    #[test]
    fn supervised_only_schedule_is_plain_supervised_training() {
        let (schema, vocab, examples, inputs, user) = joint_fixture();
        let (sl, rl, joint) = schedule((1, 0));
        let init = tiny(vocab.len(), 31);
        let mut sim = UserSimulator::new(&user, &vocab, &schema, 3, 12, 0.0);
        let out = joint_train(init.clone(), &examples, &examples, &inputs, &mut sim, true, &sl, &rl, &joint).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(joint.seed);
        let mut sl_order: Vec<usize> = (0..examples.len()).collect();
        let mut rl_order: Vec<usize> = (0..inputs.len()).collect();
        sl_order.shuffle(&mut rng);
        rl_order.shuffle(&mut rng);
        let mut at = 0;
        let mut params = init;
        for _ in 0..joint.rounds {
            let batch = next_batch(&mut sl_order, &mut at, sl.batch_size, &mut rng);
            let refs: Vec<&Example> = batch.iter().map(|&i| &examples[i]).collect();
            crate::seq2seq::supervised_step(&mut params, &refs, sl.learning_rate, sl.clip_norm).unwrap();
        }
        assert_eq!(out.params, params);
        assert!(out.trace.iter().all(|t| t.mean_reward == 0.0));
    }

    #[test]
    fn rl_only_schedule_is_a_plain_rl_step_loop() {
        let (schema, vocab, examples, inputs, user) = joint_fixture();
        let (sl, rl, joint) = schedule((0, 1));
        let init = tiny(vocab.len(), 32);
        let mut sim = UserSimulator::new(&user, &vocab, &schema, 3, 12, 0.0);
        let out = joint_train(init.clone(), &examples, &examples, &inputs, &mut sim, true, &sl, &rl, &joint).unwrap();
        assert_ne!(out.params, init, "no RL update happened");

        let mut rng = ChaCha8Rng::seed_from_u64(joint.seed);
        let mut sl_order: Vec<usize> = (0..examples.len()).collect();
        let mut rl_order: Vec<usize> = (0..inputs.len()).collect();
        sl_order.shuffle(&mut rng);
        rl_order.shuffle(&mut rng);
        let mut at = 0;
        let mut params = init;
        let mut sim = UserSimulator::new(&user, &vocab, &schema, 3, 12, 0.0);
        for _ in 0..joint.rounds {
            let batch = next_batch(&mut rl_order, &mut at, rl.batch_size, &mut rng);
            let refs: Vec<&RlInput> = batch.iter().map(|&i| &inputs[i]).collect();
            rl_step(&mut params, &refs, &mut sim, true, &rl, &mut rng).unwrap();
        }
        assert_eq!(out.params, params);
    }

    #[test]
    fn closed_gate_keeps_rl_off() {
        let (schema, vocab, examples, inputs, user) = joint_fixture();
        let (sl, rl, mut joint) = schedule((0, 1));
        joint.fluency_gate = 0.0;
        let init = tiny(vocab.len(), 33);
        let mut sim = UserSimulator::new(&user, &vocab, &schema, 3, 12, 0.0);
        let out = joint_train(init.clone(), &examples, &examples, &inputs, &mut sim, true, &sl, &rl, &joint).unwrap();
        assert_eq!(out.params, init);
        assert!(out.trace.iter().all(|t| !t.rl_active));
    }
}
