//! Tokenization and the shared vocabulary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::slots::SlotSchema;

pub type TokenId = usize;

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const NUM_ID: TokenId = 4;
pub const SEP_ID: TokenId = 5;

pub const NUM_TOKEN: &str = "<num>";
const FIXED_SPECIALS: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<unk>", NUM_TOKEN, "<sep>"];

pub const VOCAB_HEADER: &str = "#dialogue-vocab v1";

/// Lowercases, splits punctuation into separate tokens and maps every digit
/// run (and the literal `<NUM>` placeholder) to `<num>`.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '<' && chars[i..].starts_with(&['<', 'n', 'u', 'm', '>']) {
            flush(&mut word, &mut out);
            out.push(NUM_TOKEN.to_string());
            i += 5;
        } else if c.is_ascii_digit() {
            flush(&mut word, &mut out);
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            out.push(NUM_TOKEN.to_string());
        } else if c.is_alphabetic() || (c == '\'' && !word.is_empty()) {
            word.push(c);
            i += 1;
        } else if c.is_whitespace() {
            flush(&mut word, &mut out);
            i += 1;
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_string());
            i += 1;
        }
    }
    flush(&mut word, &mut out);
    out
}

pub fn marker_token(slot: &str) -> String {
    format!("<slot:{slot}>")
}

/// Bijection between tokens and ids. Special tokens occupy the lowest ids:
/// the six fixed specials, then one marker per schema slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    n_special: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, n_special: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            n_special,
        })
    }

    /// Specials only; useful for tests and for seeding a vocabulary by hand.
    pub fn with_tokens<S: AsRef<str>>(schema: &SlotSchema, words: &[S]) -> Result<Self> {
        let mut tokens = special_tokens(schema);
        let n_special = tokens.len();
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_tokens(tokens, n_special)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_special(&self) -> usize {
        self.n_special
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn marker_id(&self, slot: &str) -> Option<TokenId> {
        self.id(&marker_token(slot))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over the token list; checkpoints record it.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{VOCAB_HEADER} specials={}", self.n_special).unwrap();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Line 1 is the header; the token on line `n + 2` has id `n`.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)?;
        let mut lines = raw.lines();
        let header = lines.next().unwrap_or_default();
        let n_special = header
            .strip_prefix(VOCAB_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("specials="))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                what: "vocabulary",
                line: 1,
                message: format!("expected header `{VOCAB_HEADER} specials=<n>`"),
            })?;
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        for (i, fixed) in FIXED_SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*fixed) {
                return Err(Error::Parse {
                    what: "vocabulary",
                    line: i + 2,
                    message: format!("expected special token {fixed}"),
                });
            }
        }
        Self::from_tokens(tokens, n_special)
    }
}

fn special_tokens(schema: &SlotSchema) -> Vec<String> {
    FIXED_SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(schema.slot_names().map(marker_token))
        .collect()
}

/// Counts every token in turn text and in tag values; keeps those seen at
/// least `min_freq` times, ordered by frequency (descending) then
/// lexicographically.
pub fn build_vocab(sessions: &[Session], schema: &SlotSchema, min_freq: usize) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::InvalidArgument("min_freq must be at least 1".into()));
    }
    if sessions.is_empty() {
        return Err(Error::InvalidArgument("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut value_tokens = Vec::new();
    for session in sessions {
        for turn in &session.turns {
            for tok in &turn.text {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
            for (_, value) in turn.tags_before.iter() {
                value_tokens.extend(tokenize(value));
            }
        }
    }
    for tok in &value_tokens {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    let specials = special_tokens(schema);
    let mut words: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(tok, n)| *n >= min_freq && !specials.iter().any(|s| s == tok))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let words: Vec<&str> = words.into_iter().map(|(t, _)| t).collect();
    Vocabulary::with_tokens(schema, &words)
}

pub fn encode_tokens<S: AsRef<str>>(text: &[S], vocab: &Vocabulary) -> Vec<TokenId> {
    text.iter().map(|t| vocab.id_or_unk(t.as_ref())).collect()
}

/// Maps tokens to ids, truncates to `max_len - 1` and appends EOS.
pub fn encode<S: AsRef<str>>(text: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<TokenId> {
    let keep = max_len.saturating_sub(1).max(1).min(text.len());
    let mut ids = encode_tokens(&text[..keep], vocab);
    ids.push(EOS_ID);
    ids
}

/// Inverse of [`encode`]: stops at the first EOS.
pub fn decode(ids: &[TokenId], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .take_while(|&&id| id != EOS_ID)
        .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
        .collect()
}
