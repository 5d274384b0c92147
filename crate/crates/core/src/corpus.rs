//! Synthetic multi-turn coffee-ordering sessions with per-turn slot tags.
//!
//! Corpus file format (UTF-8, one JSON record per line):
//!
//! ```text
//! {"format":"dialogue-corpus","version":1}
//! {"id":"s000001","turns":[{"role":"user","text":"i want to order coffee .","tags_before":{},"tags_after":{}}, ...],"order":{...}}
//! ```
//!
//! `text` is the space-joined token sequence. Tags map slot names to
//! canonical values.

mod templates;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::slots::{extract_slots, merge, SlotSchema, SlotSpec, SlotState};
use crate::text::tokenize;

pub use templates::{CONFIRMATIONS, FAQ, NULL_REPLY, THANKS};

pub const CORPUS_FORMAT: &str = "dialogue-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    #[serde(serialize_with = "join_tokens", deserialize_with = "split_tokens")]
    pub text: Vec<String>,
    pub tags_before: SlotState,
    pub tags_after: SlotState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub turns: Vec<Turn>,
    pub order: SlotState,
}

fn join_tokens<S: Serializer>(tokens: &[String], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&tokens.join(" "))
}

fn split_tokens<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    let raw = String::deserialize(d)?;
    Ok(raw.split_whitespace().map(str::to_string).collect())
}

/// Behavioural knobs of the simulated human agents and customers.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusProfile {
    /// P(0, 1, 2, 3 slots volunteered in the opening).
    pub volunteered: [f64; 4],
    pub quick_question_rate: f64,
    /// P(user thanks the agent after the confirmation), if no quick question.
    pub thanks_rate: f64,
    /// P(agent confirms while slots are still vacant).
    pub premature_confirm_rate: f64,
    /// P(agent confirms when exactly one slot is still vacant), at most
    /// once per session.
    pub forget_last_rate: f64,
    /// P(agent asks again about a filled slot).
    pub redundant_question_rate: f64,
    /// At most this many premature or redundant agent turns per session.
    pub max_noise_turns: usize,
    /// P(agent asks the first vacant slot in schema order).
    pub ordered_ask_rate: f64,
    /// P(agent asks two slots in one turn), when two are vacant.
    pub double_ask_rate: f64,
    /// P(user names a value by its alias rather than the canonical form).
    pub alias_rate: f64,
    /// P(agent reads back a drink detail the user just gave before going on).
    pub read_back_rate: f64,
}

impl Default for CorpusProfile {
    fn default() -> Self {
        Self {
            volunteered: [0.35, 0.3, 0.25, 0.1],
            quick_question_rate: 0.2,
            thanks_rate: 0.3,
            premature_confirm_rate: 0.05,
            forget_last_rate: 0.5,
            redundant_question_rate: 0.08,
            max_noise_turns: 2,
            ordered_ask_rate: 0.2,
            double_ask_rate: 0.3,
            alias_rate: 0.1,
            read_back_rate: 0.35,
        }
    }
}

pub fn generate_corpus(schema: &SlotSchema, n_sessions: usize, seed: u64) -> Result<Vec<Session>> {
    generate_corpus_with(schema, n_sessions, seed, &CorpusProfile::default())
}

pub fn generate_corpus_with(
    schema: &SlotSchema,
    n_sessions: usize,
    seed: u64,
    profile: &CorpusProfile,
) -> Result<Vec<Session>> {
    if n_sessions < 1 {
        return Err(Error::InvalidArgument("n_sessions must be at least 1".into()));
    }
    if let Some(s) = schema.slots().iter().find(|s| s.values.is_empty()) {
        return Err(Error::InvalidSchema(format!("slot {} has an empty lexicon", s.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_sessions)
        .map(|i| SessionWriter::new(schema, profile, &mut rng).run(format!("s{i:06}")))
        .collect()
}

/// Goal value preferences for the built-in slots; other slots are uniform.
fn value_weights(slot: &str) -> Option<&'static [f64]> {
    match slot {
        "taste" => Some(&[0.55, 0.15, 0.12, 0.1, 0.08]),
        "size" => Some(&[0.2, 0.65, 0.15]),
        "temperature" => Some(&[0.8, 0.2]),
        "address" => Some(&[0.4, 0.2, 0.15, 0.1, 0.1, 0.05]),
        _ => None,
    }
}

fn weighted_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn fill(template: &str, key: &str, value: &str) -> String {
    template.replace(key, value)
}

struct SessionWriter<'a, R: Rng> {
    schema: &'a SlotSchema,
    profile: &'a CorpusProfile,
    rng: &'a mut R,
    goal: Vec<(usize, usize)>,
    turns: Vec<Turn>,
    tags: SlotState,
    forgot: bool,
}

enum AgentMove {
    Ask(Vec<usize>),
    Premature,
    /// Premature confirmation with only one slot left.
    Forget,
    Redundant(usize),
}

impl<'a, R: Rng> SessionWriter<'a, R> {
    fn new(schema: &'a SlotSchema, profile: &'a CorpusProfile, rng: &'a mut R) -> Self {
        let goal = schema
            .slots()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let v = match value_weights(&spec.name) {
                    Some(w) if w.len() == spec.values.len() => weighted_index(rng, w),
                    _ => rng.random_range(0..spec.values.len()),
                };
                (i, v)
            })
            .collect();
        Self {
            schema,
            profile,
            rng,
            goal,
            turns: Vec::new(),
            tags: SlotState::new(),
            forgot: false,
        }
    }

    fn spec(&self, slot: usize) -> &'a SlotSpec {
        &self.schema.slots()[slot]
    }

    fn goal_value(&self, slot: usize) -> &'a str {
        &self.spec(slot).values[self.goal[slot].1].value
    }

    /// How the user names the goal value this time.
    fn surface(&mut self, slot: usize) -> String {
        let value = &self.spec(slot).values[self.goal[slot].1];
        if !value.aliases.is_empty() && self.rng.random_bool(self.profile.alias_rate) {
            value.aliases[self.rng.random_range(0..value.aliases.len())].clone()
        } else {
            value.value.clone()
        }
    }

    fn say(&mut self, role: Role, utterance: &str) {
        let text = tokenize(utterance);
        let before = self.tags.clone();
        self.tags = merge(&before, &extract_slots(&text, self.schema));
        self.turns.push(Turn {
            role,
            text,
            tags_before: before,
            tags_after: self.tags.clone(),
        });
    }

    fn slot_index(&self, name: &str) -> usize {
        self.schema.slots().iter().position(|s| s.name == name).expect("schema slot")
    }

    fn vacant(&self) -> Vec<usize> {
        self.schema.vacant(&self.tags).map(|n| self.slot_index(n)).collect()
    }

    fn filled(&self) -> Vec<usize> {
        (0..self.schema.len()).filter(|&i| self.tags.contains(&self.spec(i).name)).collect()
    }

    fn opening(&mut self) -> String {
        let n = self.schema.len();
        let k = weighted_index(self.rng, &self.profile.volunteered).min(n);
        let mut chosen: Vec<usize> = (0..n).collect();
        chosen.shuffle(self.rng);
        chosen.truncate(k);
        chosen.sort_unstable();
        if chosen.is_empty() {
            return templates::pick(self.rng, templates::OPENINGS_EMPTY).to_string();
        }
        let address = chosen.iter().copied().find(|&i| self.spec(i).name == "address");
        let mut item = Vec::new();
        for name in ["size", "temperature", "taste"] {
            if let Some(&i) = chosen.iter().find(|&&i| self.spec(i).name == name) {
                item.push(self.surface(i));
            }
        }
        let others: Vec<usize> = chosen
            .iter()
            .copied()
            .filter(|&i| !matches!(self.spec(i).name.as_str(), "size" | "temperature" | "taste" | "address"))
            .collect();
        let addr = address.map(|i| self.surface(i));
        let mut out = if item.is_empty() && others.is_empty() {
            let t = templates::pick(self.rng, templates::OPENING_ADDRESS_ONLY);
            return fill(t, "{addr}", addr.as_deref().unwrap_or_default());
        } else {
            let prefix = templates::pick(self.rng, templates::OPENING_PREFIXES);
            let has_taste = chosen.iter().any(|&i| self.spec(i).name == "taste");
            if !has_taste && !item.is_empty() {
                item.push("coffee".into());
            }
            if item.is_empty() {
                item.push("coffee".into());
            }
            format!("{prefix} a {}", item.join(" "))
        };
        for i in others {
            let v = self.surface(i);
            out.push_str(&format!(" , {} {v}", self.spec(i).name));
        }
        if let Some(addr) = addr {
            let t = templates::pick(self.rng, templates::OPENING_ADDRESS);
            out.push(' ');
            out.push_str(&fill(t, "{addr}", &addr));
        }
        out.push_str(" .");
        out
    }

    fn question(&mut self, slot: usize) -> String {
        let name = self.spec(slot).name.clone();
        let q = match templates::agent_questions(&name) {
            Some(options) => templates::pick_weighted(self.rng, options, &templates::AGENT_FORM_WEIGHTS).to_string(),
            None => fill(templates::pick_uniform(self.rng, templates::GENERIC_QUESTIONS), "{slot}", &name),
        };
        q
    }

    fn with_prefix(&mut self, utterance: String) -> String {
        let prefix = templates::pick_weighted(self.rng, templates::AGENT_PREFIXES, &templates::AGENT_FORM_WEIGHTS);
        if prefix.is_empty() {
            utterance
        } else {
            format!("{prefix} {utterance}")
        }
    }

    /// The user's answer and the value surface it used.
    fn answer(&mut self, slot: usize) -> (String, String) {
        let v = self.surface(slot);
        let t = templates::pick_weighted(
            self.rng,
            templates::user_answers(&self.spec(slot).name),
            &templates::USER_ANSWER_WEIGHTS,
        );
        (fill(t, "{v}", &v), v)
    }

    fn read_back(&mut self, surface: &str) {
        let q = fill(templates::pick(self.rng, templates::READ_BACKS), "{v}", surface);
        self.say(Role::Agent, &q);
        self.say(Role::User, &fill(templates::READ_BACK_REPLY, "{v}", surface));
    }

    fn choose_move(&mut self, noise_left: usize) -> AgentMove {
        let vacant = self.vacant();
        let filled = self.filled();
        if vacant.len() == 1 && !self.forgot && self.rng.random_bool(self.profile.forget_last_rate) {
            self.forgot = true;
            return AgentMove::Forget;
        }
        if noise_left > 0 {
            let u = self.rng.random::<f64>();
            let p = self.profile.premature_confirm_rate;
            if u < p {
                return AgentMove::Premature;
            }
            if u < p + self.profile.redundant_question_rate && !filled.is_empty() {
                return AgentMove::Redundant(filled[self.rng.random_range(0..filled.len())]);
            }
        }
        let first = if self.rng.random_bool(self.profile.ordered_ask_rate) {
            0
        } else {
            self.rng.random_range(0..vacant.len())
        };
        let mut ask = vec![vacant[first]];
        if vacant.len() >= 2 && self.rng.random_bool(self.profile.double_ask_rate) {
            let rest: Vec<usize> = vacant.iter().copied().filter(|&v| v != vacant[first]).collect();
            ask.push(rest[0]);
        }
        AgentMove::Ask(ask)
    }

    fn run(mut self, id: String) -> Result<Session> {
        let opening = self.opening();
        self.say(Role::User, &opening);
        let mut noise_left = self.profile.max_noise_turns;
        // Each exchange either fills a slot or spends noise budget.
        let guard = 2 * self.schema.len() + self.profile.max_noise_turns + 3;
        for _ in 0..guard {
            if self.schema.is_complete(&self.tags) {
                break;
            }
            let choice = self.choose_move(noise_left);
            match &choice {
                AgentMove::Ask(slots) => {
                    let q: Vec<String> = slots.iter().map(|&s| self.question(s)).collect();
                    let q = self.with_prefix(q.join(" "));
                    self.say(Role::Agent, &q);
                    let answers: Vec<(String, String)> = slots.iter().map(|&s| self.answer(s)).collect();
                    let a: Vec<&str> = answers.iter().map(|(text, _)| text.as_str()).collect();
                    self.say(Role::User, &a.join(" "));
                    let detail = slots
                        .iter()
                        .zip(&answers)
                        .find(|(&s, _)| self.spec(s).name != "address")
                        .map(|(_, (_, v))| v.clone());
                    if let Some(v) = detail {
                        if self.rng.random_bool(self.profile.read_back_rate) {
                            self.read_back(&v);
                        }
                    }
                }
                AgentMove::Premature | AgentMove::Forget => {
                    if matches!(choice, AgentMove::Premature) {
                        noise_left -= 1;
                    }
                    let c = templates::pick_uniform(self.rng, CONFIRMATIONS);
                    self.say(Role::Agent, c);
                    let c = templates::pick(self.rng, templates::INCOMPLETE_COMPLAINTS);
                    self.say(Role::User, c);
                }
                AgentMove::Redundant(slot) => {
                    noise_left -= 1;
                    let q = self.question(*slot);
                    let q = self.with_prefix(q);
                    self.say(Role::Agent, &q);
                    let (a, _) = self.answer(*slot);
                    self.say(Role::User, &a);
                }
            }
        }
        let c = templates::pick_uniform(self.rng, CONFIRMATIONS);
        self.say(Role::Agent, c);
        if self.rng.random_bool(self.profile.quick_question_rate) {
            let (q, answers) = FAQ[self.rng.random_range(0..FAQ.len())];
            self.say(Role::User, q);
            let a = answers[self.rng.random_range(0..answers.len())];
            self.say(Role::Agent, a);
        } else if self.rng.random_bool(self.profile.thanks_rate) {
            let t = templates::pick(self.rng, THANKS);
            self.say(Role::User, t);
            let c = templates::pick(self.rng, templates::CLOSINGS);
            self.say(Role::Agent, c);
        }
        let order: SlotState = (0..self.schema.len())
            .map(|i| (self.spec(i).name.clone(), self.goal_value(i).to_string()))
            .collect();
        if self.tags != order {
            return Err(Error::InvalidSchema(format!(
                "session {id}: final tags {:?} disagree with the order {:?}",
                self.tags, order
            )));
        }
        Ok(Session {
            id,
            turns: self.turns,
            order,
        })
    }
}

/// Session-level split; each part gets at least one session.
pub fn split_corpus(
    sessions: &[Session],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Session>, Vec<Session>, Vec<Session>)> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(0.0..=1.0).contains(r))
        || (r_train + r_val + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must sum to 1")));
    }
    let n = sessions.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 sessions to split, got {n}")));
    }
    let mut n_val = ((n as f64 * r_val).round() as usize).max(1);
    let mut n_test = ((n as f64 * r_test).round() as usize).max(1);
    while n_val + n_test > n - 1 {
        if n_val >= n_test {
            n_val -= 1;
        } else {
            n_test -= 1;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: &[usize]| {
        let mut part = range.to_vec();
        part.sort_unstable();
        part.into_iter().map(|i| sessions[i].clone()).collect::<Vec<_>>()
    };
    let n_train = n - n_val - n_test;
    Ok((
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_val]),
        take(&idx[n_train + n_val..]),
    ))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn save_corpus(path: &Path, sessions: &[Session]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let header = Header {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for session in sessions {
        serde_json::to_writer(&mut out, session)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn parse_error(line: usize, err: serde_json::Error) -> Error {
    let msg = err.to_string();
    // serde reports positions relative to the record; keep only the column.
    let msg = match msg.rfind(" at line ") {
        Some(at) => format!("{} (column {})", &msg[..at], err.column()),
        None => msg,
    };
    Error::Parse {
        what: "corpus",
        line,
        message: msg,
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<Session>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut sessions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            if let Ok(header) = serde_json::from_str::<Header>(&line) {
                if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
                    return Err(Error::Parse {
                        what: "corpus",
                        line: 1,
                        message: format!("unsupported format {} v{}", header.format, header.version),
                    });
                }
                continue;
            }
        }
        sessions.push(serde_json::from_str(&line).map_err(|e| parse_error(line_no, e))?);
    }
    Ok(sessions)
}
