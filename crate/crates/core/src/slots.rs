//! Slot schema, slot state, pattern-matching extraction and the reward
//! indicator.
//!
//! Extraction is an exact longest-match scan over every surface form in the
//! schema. Addresses not present in the lexicon are recognized by pattern: a
//! `<num>` token followed, within a short window, by a street or building
//! keyword.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, NUM_TOKEN};

pub const SCHEMA_FORMAT: &str = "dialogue-schema";
pub const SCHEMA_VERSION: u32 = 1;

/// One canonical value and the extra surface forms that mean the same thing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValue {
    pub value: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl SlotValue {
    pub fn new(value: &str) -> Self {
        Self {
            value: value.to_string(),
            aliases: Vec::new(),
        }
    }

    pub fn with_aliases(value: &str, aliases: &[&str]) -> Self {
        Self {
            value: value.to_string(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        }
    }

    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.value.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub values: Vec<SlotValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressPattern {
    pub slot: String,
    pub keywords: Vec<String>,
    /// The keyword must be among the first `window` tokens after `<num>`.
    pub window: usize,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    format: String,
    version: u32,
    slots: Vec<SlotSpec>,
    address_pattern: Option<AddressPattern>,
}

#[derive(Debug, Clone)]
struct SurfaceForm {
    tokens: Vec<String>,
    slot: usize,
    value: String,
}

/// The slot universe of the task, in a fixed order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct SlotSchema {
    slots: Vec<SlotSpec>,
    address_pattern: Option<AddressPattern>,
    /// Longest first.
    forms: Vec<SurfaceForm>,
}

impl PartialEq for SlotSchema {
    fn eq(&self, other: &Self) -> bool {
        self.slots == other.slots && self.address_pattern == other.address_pattern
    }
}

impl TryFrom<SchemaFile> for SlotSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        if file.format != SCHEMA_FORMAT || file.version != SCHEMA_VERSION {
            return Err(Error::InvalidSchema(format!(
                "unsupported schema format {} v{}",
                file.format, file.version
            )));
        }
        SlotSchema::new(file.slots, file.address_pattern)
    }
}

impl From<SlotSchema> for SchemaFile {
    fn from(schema: SlotSchema) -> Self {
        SchemaFile {
            format: SCHEMA_FORMAT.to_string(),
            version: SCHEMA_VERSION,
            slots: schema.slots,
            address_pattern: schema.address_pattern,
        }
    }
}

impl SlotSchema {
    pub fn new(slots: Vec<SlotSpec>, address_pattern: Option<AddressPattern>) -> Result<Self> {
        let mut names = HashSet::new();
        let mut seen: BTreeMap<Vec<String>, String> = BTreeMap::new();
        let mut forms = Vec::new();
        for (idx, spec) in slots.iter().enumerate() {
            if spec.name.is_empty() || !names.insert(spec.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate or empty slot name {:?}",
                    spec.name
                )));
            }
            if spec.values.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "slot {} has an empty lexicon",
                    spec.name
                )));
            }
            for value in &spec.values {
                for surface in value.surface_forms() {
                    let tokens = text::tokenize(surface);
                    if tokens.is_empty() {
                        return Err(Error::InvalidSchema(format!(
                            "empty surface form in slot {}",
                            spec.name
                        )));
                    }
                    if let Some(owner) = seen.get(&tokens) {
                        if owner != &spec.name {
                            return Err(Error::InvalidSchema(format!(
                                "surface form {surface:?} appears in slots {owner} and {}",
                                spec.name
                            )));
                        }
                        continue;
                    }
                    seen.insert(tokens.clone(), spec.name.clone());
                    forms.push(SurfaceForm {
                        tokens,
                        slot: idx,
                        value: value.value.clone(),
                    });
                }
            }
        }
        if let Some(pattern) = &address_pattern {
            if !names.contains(pattern.slot.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "address pattern refers to unknown slot {}",
                    pattern.slot
                )));
            }
            if pattern.keywords.is_empty() {
                return Err(Error::InvalidSchema("address pattern has no keywords".into()));
            }
        }
        // Stable sort keeps schema order among equal lengths.
        forms.sort_by_key(|f| std::cmp::Reverse(f.tokens.len()));
        Ok(Self {
            slots,
            address_pattern,
            forms,
        })
    }

    /// Taste, size, temperature and address for the coffee-ordering task.
    pub fn coffee() -> Self {
        let slots = vec![
            SlotSpec {
                name: "taste".into(),
                values: ["latte", "americano", "cappuccino", "mocha", "caramel macchiato"]
                    .iter()
                    .map(|v| SlotValue::new(v))
                    .collect(),
            },
            SlotSpec {
                name: "size".into(),
                values: vec![
                    SlotValue::with_aliases("small", &["tall"]),
                    SlotValue::with_aliases("medium", &["grande"]),
                    SlotValue::with_aliases("large", &["venti"]),
                ],
            },
            SlotSpec {
                name: "temperature".into(),
                values: vec![
                    SlotValue::with_aliases("hot", &["warm"]),
                    SlotValue::with_aliases("cold", &["iced"]),
                ],
            },
            SlotSpec {
                name: "address".into(),
                values: ADDRESS_TEMPLATES.iter().map(|v| SlotValue::new(v)).collect(),
            },
        ];
        let pattern = AddressPattern {
            slot: "address".into(),
            keywords: ["road", "street", "building", "avenue", "tower", "plaza", "park"]
                .iter()
                .map(|k| k.to_string())
                .collect(),
            window: 4,
        };
        Self::new(slots, Some(pattern)).expect("built-in schema is valid")
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn address_pattern(&self) -> Option<&AddressPattern> {
        self.address_pattern.as_ref()
    }

    pub fn is_complete(&self, state: &SlotState) -> bool {
        self.slot_names().all(|n| state.contains(n))
    }

    pub fn vacant<'a>(&'a self, state: &'a SlotState) -> impl Iterator<Item = &'a str> + 'a {
        self.slot_names().filter(move |n| !state.contains(n))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push('\n');
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            what: "schema",
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Address lexicon; `<num>` stands for any digit run.
pub const ADDRESS_TEMPLATES: &[&str] = &[
    "no. <num> building , software park , zhongguancun",
    "no. <num> middle dongfeng road , yuexiu",
    "<num> tonglinge road",
    "room <num> , jinmao tower , pudong",
    "<num> century avenue",
    "no. <num> xueyuan road , haidian",
];

/// Filled slots: slot name to canonical value. Absent means vacant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotState(BTreeMap<String, String>);

impl SlotState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }

    pub fn contains(&self, slot: &str) -> bool {
        self.0.contains_key(slot)
    }

    pub fn insert(&mut self, slot: impl Into<String>, value: impl Into<String>) {
        self.0.insert(slot.into(), value.into());
    }

    pub fn remove(&mut self, slot: &str) -> Option<String> {
        self.0.remove(slot)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Key-set inclusion.
    pub fn is_subset_of(&self, other: &SlotState) -> bool {
        self.0.keys().all(|k| other.0.contains_key(k))
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for SlotState {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

/// Union of two states; on conflict `new` wins.
pub fn merge(tags: &SlotState, new: &SlotState) -> SlotState {
    let mut out = tags.clone();
    for (k, v) in new.iter() {
        out.insert(k, v);
    }
    out
}

/// Longest-match scan; when a slot is mentioned more than once the last
/// mention wins.
pub fn extract_slots<S: AsRef<str>>(text: &[S], schema: &SlotSchema) -> SlotState {
    let tokens: Vec<&str> = text.iter().map(AsRef::as_ref).collect();
    let mut state = SlotState::new();
    let mut i = 0;
    while i < tokens.len() {
        if let Some(form) = schema.forms.iter().find(|f| starts_with(&tokens[i..], &f.tokens)) {
            state.insert(schema.slots[form.slot].name.clone(), form.value.clone());
            i += form.tokens.len();
            continue;
        }
        if let Some((value, end)) = match_address(&tokens, i, schema) {
            let slot = &schema.address_pattern.as_ref().expect("matched").slot;
            state.insert(slot.clone(), value);
            i = end;
            continue;
        }
        i += 1;
    }
    state
}

fn starts_with(haystack: &[&str], needle: &[String]) -> bool {
    haystack.len() >= needle.len() && haystack.iter().zip(needle).all(|(a, b)| *a == b)
}

/// Matches `[no .] <num> w1 .. wk`, where `wk` is an address keyword and
/// `k <= window`. Returns the matched span and the index past it.
fn match_address(tokens: &[&str], i: usize, schema: &SlotSchema) -> Option<(String, usize)> {
    let pattern = schema.address_pattern.as_ref()?;
    let (start, num_at) = if tokens[i] == "no"
        && tokens.get(i + 1) == Some(&".")
        && tokens.get(i + 2) == Some(&NUM_TOKEN)
    {
        (i, i + 2)
    } else if tokens[i] == NUM_TOKEN {
        (i, i)
    } else {
        return None;
    };
    let limit = (num_at + 1 + pattern.window).min(tokens.len());
    let keyword_at = (num_at + 1..limit)
        .rev()
        .find(|&j| pattern.keywords.iter().any(|k| k == tokens[j]))?;
    Some((tokens[start..=keyword_at].join(" "), keyword_at + 1))
}

/// Reward indicator: 1 iff the agent/user pair mentions a slot that is
/// vacant in `tags`.
pub fn indicator<A: AsRef<str>, O: AsRef<str>>(
    agent_text: &[A],
    user_text: &[O],
    tags: &SlotState,
    schema: &SlotSchema,
) -> u8 {
    // Extract each side separately so no match straddles the boundary.
    let found = merge(&extract_slots(agent_text, schema), &extract_slots(user_text, schema));
    let any_new = found.keys().any(|k| !tags.contains(k));
    u8::from(any_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn state(pairs: &[(&str, &str)]) -> SlotState {
        pairs.iter().copied().collect()
    }

    #[test]
    fn table_one_answer() {
        let schema = SlotSchema::coffee();
        let got = extract_slots(&tokenize("Caramel Macchiato, the medium size"), &schema);
        assert_eq!(got, state(&[("taste", "caramel macchiato"), ("size", "medium")]));
    }

    #[test]
    fn nothing_to_extract() {
        let schema = SlotSchema::coffee();
        assert!(extract_slots(&tokenize("OK, thanks."), &schema).is_empty());
    }

    #[test]
    fn repetition_is_idempotent() {
        let schema = SlotSchema::coffee();
        let got = extract_slots(&tokenize("hot hot hot"), &schema);
        assert_eq!(got, state(&[("temperature", "hot")]));
    }

    #[test]
    fn aliases_map_to_canonical_value() {
        let schema = SlotSchema::coffee();
        let got = extract_slots(&tokenize("a grande iced latte"), &schema);
        assert_eq!(
            got,
            state(&[("size", "medium"), ("temperature", "cold"), ("taste", "latte")])
        );
    }

    #[test]
    fn address_from_lexicon_and_pattern() {
        let schema = SlotSchema::coffee();
        let got = extract_slots(&tokenize("No.12 Building, Software park, Zhongguancun"), &schema);
        assert_eq!(got.get("address"), Some(ADDRESS_TEMPLATES[0]));

        let got = extract_slots(&tokenize("send it to 88 Lujiazui Street please"), &schema);
        assert_eq!(got.get("address"), Some("<num> lujiazui street"));

        // A bare number is a duration, not an address.
        let got = extract_slots(&tokenize("about 30 minutes"), &schema);
        assert!(got.is_empty());
    }

    #[test]
    fn last_mention_wins() {
        let schema = SlotSchema::coffee();
        let got = extract_slots(&tokenize("hot or cold ?"), &schema);
        assert_eq!(got.get("temperature"), Some("cold"));
    }

    // The three simulation outcomes: new information, information already
    // in the tags, and a repeated question about a filled slot.
    #[test]
    fn indicator_new_information_about_size() {
        let schema = SlotSchema::coffee();
        let tags = state(&[("taste", "latte"), ("temperature", "hot")]);
        let a = tokenize("What size would you like?");
        assert_eq!(indicator(&a, &tokenize("Grande"), &tags, &schema), 1);
    }

    #[test]
    fn indicator_same_information_as_tags() {
        let schema = SlotSchema::coffee();
        let tags = state(&[("taste", "latte"), ("size", "medium")]);
        let a = tokenize("What size would you like?");
        assert_eq!(indicator(&a, &tokenize("Grande"), &tags, &schema), 0);
    }

    #[test]
    fn indicator_repeated_temperature() {
        let schema = SlotSchema::coffee();
        let tags = state(&[("temperature", "hot")]);
        let a = tokenize("Would you like it warm?");
        assert_eq!(indicator(&a, &tokenize("Hot"), &tags, &schema), 0);
    }

    #[test]
    fn merge_rules() {
        let empty = SlotState::new();
        let tall = state(&[("size", "tall")]);
        let grande = state(&[("size", "grande")]);
        assert_eq!(merge(&empty, &tall), tall);
        assert_eq!(merge(&tall, &empty), tall);
        assert_eq!(merge(&tall, &grande), grande);
    }

    #[test]
    fn schema_rejects_shared_surface_form() {
        let slots = vec![
            SlotSpec {
                name: "a".into(),
                values: vec![SlotValue::new("hot")],
            },
            SlotSpec {
                name: "b".into(),
                values: vec![SlotValue::with_aliases("warm", &["hot"])],
            },
        ];
        assert!(matches!(SlotSchema::new(slots, None), Err(Error::InvalidSchema(_))));
    }

    #[test]
    fn schema_rejects_empty_lexicon_and_duplicate_names() {
        let empty = vec![SlotSpec {
            name: "a".into(),
            values: vec![],
        }];
        assert!(SlotSchema::new(empty, None).is_err());
        let dup = vec![
            SlotSpec {
                name: "a".into(),
                values: vec![SlotValue::new("x")],
            },
            SlotSpec {
                name: "a".into(),
                values: vec![SlotValue::new("y")],
            },
        ];
        assert!(SlotSchema::new(dup, None).is_err());
    }

    #[test]
    fn schema_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        let schema = SlotSchema::coffee();
        schema.save(&path).unwrap();
        assert_eq!(SlotSchema::load(&path).unwrap(), schema);
    }

    fn contains_run(text: &[String], form: &[String]) -> bool {
        text.windows(form.len()).any(|w| w == form)
    }

    /// Slots present in `text`, found by checking every surface form and
    /// every `<num> .. keyword` span independently.
    fn naive_slots(text: &[String], schema: &SlotSchema) -> Vec<String> {
        let mut out = Vec::new();
        for spec in schema.slots() {
            let hit = spec
                .values
                .iter()
                .flat_map(|v| v.surface_forms())
                .any(|f| contains_run(text, &tokenize(f)));
            if hit {
                out.push(spec.name.clone());
            }
        }
        let p = schema.address_pattern().unwrap();
        let addr = text.iter().enumerate().any(|(i, t)| {
            t == NUM_TOKEN && text[i + 1..].iter().take(p.window).any(|w| p.keywords.contains(w))
        });
        if addr && !out.contains(&p.slot) {
            out.push(p.slot.clone());
        }
        out
    }

    fn random_utterance(rng: &mut rand_chacha::ChaCha8Rng, schema: &SlotSchema) -> Vec<String> {
        use rand::seq::IndexedRandom;
        use rand::Rng;
        const FILLER: &[&str] = &["what", "would", "you", "like", "?", "ok", "please", ",", "the", "a", "."];
        const INNER: &[&str] = &["middle", "dongfeng", "xueyuan", ","];
        let mut out = Vec::new();
        for _ in 0..rng.random_range(0..5) {
            match rng.random_range(0..4) {
                0 => {
                    let spec = &schema.slots()[rng.random_range(0..3)];
                    let forms: Vec<&str> = spec.values.iter().flat_map(|v| v.surface_forms()).collect();
                    out.extend(tokenize(forms.choose(rng).unwrap()));
                }
                1 => {
                    if rng.random_bool(0.3) {
                        out.extend(["no".to_string(), ".".to_string()]);
                    }
                    out.push(NUM_TOKEN.to_string());
                    // Up to 5 inner words, so some spans are too long to match.
                    for _ in 0..rng.random_range(0..6) {
                        out.push(INNER.choose(rng).unwrap().to_string());
                    }
                    if rng.random_bool(0.8) {
                        let kw = &schema.address_pattern().unwrap().keywords;
                        out.push(kw.choose(rng).unwrap().clone());
                    }
                }
                _ => out.push(FILLER.choose(rng).unwrap().to_string()),
            }
        }
        out
    }

    #[test]
    fn indicator_agrees_with_naive_extraction() {
        use rand::seq::IndexedRandom;
        use rand::{Rng, SeedableRng};
        let schema = SlotSchema::coffee();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut ones = 0;
        for _ in 0..1000 {
            let a = random_utterance(&mut rng, &schema);
            let o = random_utterance(&mut rng, &schema);
            let mut tags = SlotState::new();
            for spec in schema.slots() {
                if rng.random_bool(0.5) {
                    tags.insert(spec.name.clone(), spec.values.choose(&mut rng).unwrap().value.clone());
                }
            }
            let mut found = naive_slots(&a, &schema);
            found.extend(naive_slots(&o, &schema));
            let expected = u8::from(found.iter().any(|s| !tags.contains(s)));
            assert_eq!(indicator(&a, &o, &tags, &schema), expected, "A={a:?} O={o:?} tags={tags:?}");
            ones += usize::from(expected);
        }
        // Both outcomes are well represented.
        assert!((200..800).contains(&ones), "{ones}");
    }
}
