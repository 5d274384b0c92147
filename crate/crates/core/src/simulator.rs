//! Whole-dialogue rollouts and the rule-based evaluation user.
//!
//! The rule user is independent of the learned user model. It recognises a
//! question about a slot when the agent turn contains `?` and one of the
//! slot's keywords: the slot name, any lexicon surface form except
//! addresses, and a few built-in synonyms. It answers with its goal value.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent_model::{encode_agent_input, rerank_infer, AgentInput, RlInput, UserSimulator};
use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::seq2seq::{beam_search, Seq2SeqParams};
use crate::slots::{extract_slots, indicator, merge, SlotSchema, SlotState};
use crate::text::{decode, tokenize, Vocabulary};

pub const NULL_REPLY: &str = "sorry ?";
pub const ACK_REPLY: &str = "ok , thanks .";

/// Agent questions the rule user knows how to answer.
pub const RULE_FAQ: &[(&[&str], &str)] = &[
    (&["anything", "else"], "no , that is all ."),
    (&["is", "that", "all"], "yes , that is all ."),
    (&["can", "help"], "i want to order coffee ."),
];

/// Words that mark an agent turn as an order confirmation.
const CONFIRMATION_WORDS: &[&str] = &["confirmed", "placed"];

fn synonyms(slot: &str) -> &'static [&'static str] {
    match slot {
        "taste" => &["drink", "coffee", "kind", "flavor"],
        "size" => &["cup", "big"],
        "temperature" => &["temperature"],
        "address" => &["where", "address", "send", "deliver"],
        _ => &[],
    }
}

/// A scripted customer with a fixed, fully specified order.
#[derive(Debug, Clone)]
pub struct RuleUser<'a> {
    goal: SlotState,
    schema: &'a SlotSchema,
    keywords: Vec<(String, Vec<String>)>,
}

impl<'a> RuleUser<'a> {
    pub fn new(goal: SlotState, schema: &'a SlotSchema) -> Result<Self> {
        if let Some(missing) = schema.vacant(&goal).next() {
            return Err(Error::InvalidArgument(format!("goal has no value for slot {missing}")));
        }
        let address = schema.address_pattern().map(|p| p.slot.as_str());
        let keywords = schema
            .slots()
            .iter()
            .map(|spec| {
                let mut words = vec![spec.name.clone()];
                words.extend(synonyms(&spec.name).iter().map(|w| w.to_string()));
                if Some(spec.name.as_str()) != address {
                    for v in &spec.values {
                        for form in v.surface_forms() {
                            words.extend(tokenize(form));
                        }
                    }
                }
                (spec.name.clone(), words)
            })
            .collect();
        Ok(Self { goal, schema, keywords })
    }

    /// A goal that keeps every value in `tags` and draws the rest uniformly.
    pub fn random_goal<R: Rng + ?Sized>(schema: &SlotSchema, tags: &SlotState, rng: &mut R) -> SlotState {
        let mut goal = SlotState::new();
        for spec in schema.slots() {
            let value = match tags.get(&spec.name) {
                Some(v) => v.to_string(),
                None => spec.values[rng.random_range(0..spec.values.len())].value.clone(),
            };
            goal.insert(spec.name.clone(), value);
        }
        goal
    }

    pub fn goal(&self) -> &SlotState {
        &self.goal
    }

    /// Slots the agent turn asks about, in schema order.
    pub fn asked_slots<S: AsRef<str>>(&self, agent: &[S]) -> Vec<&str> {
        if !agent.iter().any(|t| t.as_ref() == "?") {
            return Vec::new();
        }
        self.keywords
            .iter()
            .filter(|(_, words)| agent.iter().any(|t| words.iter().any(|w| w == t.as_ref())))
            .map(|(slot, _)| slot.as_str())
            .collect()
    }

    pub fn reply<S: AsRef<str>>(&self, agent: &[S]) -> Vec<String> {
        let asked = self.asked_slots(agent);
        if !asked.is_empty() {
            let parts: Vec<String> = asked
                .iter()
                .map(|s| format!("{} .", self.goal.get(s).unwrap_or_default()))
                .collect();
            return tokenize(&parts.join(" "));
        }
        let has = |w: &str| agent.iter().any(|t| t.as_ref() == w);
        if has("?") {
            if let Some((_, answer)) = RULE_FAQ.iter().find(|(keys, _)| keys.iter().all(|k| has(k))) {
                return tokenize(answer);
            }
        } else if is_confirmation(agent) {
            return tokenize(ACK_REPLY);
        }
        tokenize(NULL_REPLY)
    }

    /// Opening turn volunteering a random subset of the goal.
    pub fn opening<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        let mut slots: Vec<&str> = self.schema.slot_names().collect();
        slots.shuffle(rng);
        slots.truncate(rng.random_range(0..slots.len().min(3) + 1));
        if slots.is_empty() {
            return tokenize("i want to order coffee .");
        }
        let address = self.schema.address_pattern().map(|p| p.slot.as_str());
        let mut parts = Vec::new();
        for spec in self.schema.slots() {
            if slots.contains(&spec.name.as_str()) {
                let v = self.goal.get(&spec.name).unwrap_or_default();
                parts.push(if Some(spec.name.as_str()) == address {
                    format!("send to {v}")
                } else {
                    v.to_string()
                });
            }
        }
        tokenize(&format!("i'd like {} .", parts.join(" , ")))
    }
}

pub fn is_confirmation<S: AsRef<str>>(agent: &[S]) -> bool {
    !agent.iter().any(|t| t.as_ref() == "?")
        && agent.iter().any(|t| CONFIRMATION_WORDS.contains(&t.as_ref()))
}

/// Reward of one agent response against the rule user: whether the
/// response and the rule user's reply fill a slot missing from the input's
/// tags.
pub fn criterion_reward<S: AsRef<str>>(response: &[S], input: &AgentInput, user: &RuleUser<'_>) -> f64 {
    let reply = user.reply(response);
    f64::from(indicator(response, &reply, &input.tags, user.schema))
}

/// Anything that can play the agent in a rollout.
pub trait AgentPolicy {
    fn respond(&mut self, tags: &SlotState, user_text: &[String]) -> Result<Vec<String>>;
}

/// Asks for the first vacant slot; confirms once nothing is vacant.
pub struct ScriptedAgent<'a> {
    pub schema: &'a SlotSchema,
}

impl AgentPolicy for ScriptedAgent<'_> {
    fn respond(&mut self, tags: &SlotState, _user_text: &[String]) -> Result<Vec<String>> {
        Ok(match self.schema.vacant(tags).next() {
            Some(slot) => tokenize(&format!("what {slot} would you like ?")),
            None => tokenize("your order has been confirmed ."),
        })
    }
}

/// Says the same thing every turn.
pub struct FixedAgent(pub Vec<String>);

impl AgentPolicy for FixedAgent {
    fn respond(&mut self, _tags: &SlotState, _user_text: &[String]) -> Result<Vec<String>> {
        Ok(self.0.clone())
    }
}

/// A trained agent decoded by beam top-1, or reranked with the user model
/// when `simulator` is set.
pub struct ModelAgent<'a> {
    pub params: &'a Seq2SeqParams,
    pub vocab: &'a Vocabulary,
    pub schema: &'a SlotSchema,
    pub with_tags: bool,
    pub beam_width: usize,
    pub top_k: usize,
    pub max_len: usize,
    pub simulator: Option<UserSimulator<'a>>,
}

impl AgentPolicy for ModelAgent<'_> {
    fn respond(&mut self, tags: &SlotState, user_text: &[String]) -> Result<Vec<String>> {
        let input = AgentInput {
            tags: tags.clone(),
            user_text: user_text.to_vec(),
        };
        let ids = encode_agent_input(&input, self.vocab, self.schema, self.max_len, self.with_tags);
        let tokens = match self.simulator.as_mut() {
            Some(sim) => {
                let rl = RlInput {
                    ids,
                    tags: tags.clone(),
                };
                let r = rerank_infer(self.params, sim, &rl, self.beam_width, self.top_k, self.max_len)?;
                r.chosen().tokens.clone()
            }
            None => beam_search(self.params, &ids, self.beam_width, self.max_len)?
                .into_iter()
                .next()
                .map(|h| h.tokens)
                .unwrap_or_default(),
        };
        Ok(decode(&tokens, self.vocab))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub goal: SlotState,
    pub turns: Vec<TranscriptTurn>,
    /// Indicator value of each (agent, user) exchange.
    pub rewards: Vec<u8>,
    pub final_tags: SlotState,
}

impl Transcript {
    pub fn total_reward(&self) -> u32 {
        self.rewards.iter().map(|&r| u32::from(r)).sum()
    }
}

/// Plays `agent` against `user` from the user's opening until the agent
/// confirms, every slot is filled, or `max_turns` exchanges have passed.
pub fn rollout<R: Rng + ?Sized>(
    agent: &mut dyn AgentPolicy,
    user: &RuleUser<'_>,
    max_turns: usize,
    rng: &mut R,
) -> Result<Transcript> {
    if max_turns < 1 {
        return Err(Error::InvalidArgument("max_turns must be at least 1".into()));
    }
    let schema = user.schema;
    let opening = user.opening(rng);
    let mut tags = extract_slots(&opening, schema);
    let mut turns = vec![TranscriptTurn {
        role: Role::User,
        text: opening.join(" "),
    }];
    let mut rewards = Vec::new();
    let mut last_user = opening;
    for _ in 0..max_turns {
        if schema.is_complete(&tags) {
            break;
        }
        let a = agent.respond(&tags, &last_user)?;
        let o = user.reply(&a);
        rewards.push(indicator(&a, &o, &tags, schema));
        tags = merge(&tags, &merge(&extract_slots(&a, schema), &extract_slots(&o, schema)));
        turns.push(TranscriptTurn {
            role: Role::Agent,
            text: a.join(" "),
        });
        turns.push(TranscriptTurn {
            role: Role::User,
            text: o.join(" "),
        });
        if is_confirmation(&a) {
            break;
        }
        last_user = o;
    }
    Ok(Transcript {
        goal: user.goal.clone(),
        turns,
        rewards,
        final_tags: tags,
    })
}

pub const TRANSCRIPT_FORMAT: &str = "dialogue-transcripts";

/// One JSON record per episode after a format header line.
pub fn save_transcripts(path: &Path, transcripts: &[Transcript]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", serde_json::json!({"format": TRANSCRIPT_FORMAT, "version": 1}))?;
    for t in transcripts {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            what: "transcripts",
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
