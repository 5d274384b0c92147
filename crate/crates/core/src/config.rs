//! Experiment configuration, read from a TOML file. Unknown keys are
//! rejected by name. Defaults are desk-scale; where the original setup used
//! a different value it is noted next to the field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent_model::{JointConfig, RlConfig};
use crate::error::{Error, Result};
use crate::seq2seq::{Dims, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub seeds: Seeds,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub rl: RlSection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seeds: Seeds::default(),
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            rl: RlSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub train: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 1,
            train: 1,
            eval: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub sessions: usize,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub min_freq: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            sessions: 2000,
            split: (0.8, 0.1, 0.1),
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Originally 1024.
    pub hidden: usize,
    /// Originally 256.
    pub embed: usize,
    pub attention: usize,
    /// Originally 50.
    pub max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 32,
            attention: 32,
            max_len: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            clip_norm: t.clip_norm,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            lr_decay: t.lr_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlSection {
    /// User-model beam width when simulating a reply. Originally 20.
    pub user_beam: usize,
    /// Reward baseline r-bar. Originally 0.
    pub baseline: f64,
    /// Supervised and RL batches per round.
    pub sl_rl_ratio: (usize, usize),
    pub rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Responses sampled per input. Originally 1.
    pub samples_per_input: usize,
    /// Simulated exchanges per reward. Originally 1.
    pub horizon: usize,
    /// RL starts below this multiple of the pre-trained validation perplexity.
    pub fluency_gate_factor: f64,
    /// Absolute perplexity gate; overrides the factor when set.
    pub fluency_gate: Option<f64>,
    pub eval_every: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            user_beam: 20,
            baseline: 0.0,
            sl_rl_ratio: (3, 1),
            rounds: 300,
            batch_size: 16,
            learning_rate: 0.1,
            clip_norm: 5.0,
            samples_per_input: 1,
            horizon: 1,
            fluency_gate_factor: 1.5,
            fluency_gate: None,
            eval_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Agent beam width. Originally 20.
    pub beam_width: usize,
    /// Candidates passed to the user model when reranking. Originally 5.
    pub rerank_top: usize,
    pub repeats: usize,
    pub max_turns: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            beam_width: 20,
            rerank_top: 5,
            repeats: 5,
            max_turns: 12,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.version != CONFIG_VERSION {
            return bad(&format!("unsupported version {}", self.version));
        }
        let (a, b, c) = self.corpus.split;
        if (a + b + c - 1.0).abs() > 1e-9 {
            return bad("corpus.split must sum to 1");
        }
        if self.model.max_len < 2 {
            return bad("model.max_len must be at least 2");
        }
        if self.model.hidden == 0 || self.model.embed == 0 || self.model.attention == 0 {
            return bad("model dimensions must be positive");
        }
        if self.train.batch_size == 0 || self.rl.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.eval.beam_width == 0 || self.rl.user_beam == 0 {
            return bad("beam widths must be positive");
        }
        if self.eval.rerank_top == 0 || self.eval.rerank_top > self.eval.beam_width {
            return bad("eval.rerank_top must be between 1 and eval.beam_width");
        }
        if self.eval.repeats == 0 {
            return bad("eval.repeats must be positive");
        }
        if self.rl.sl_rl_ratio == (0, 0) {
            return bad("rl.sl_rl_ratio must not be [0, 0]");
        }
        Ok(())
    }

    pub fn dims(&self, vocab: usize) -> Dims {
        Dims {
            vocab,
            embed: self.model.embed,
            hidden: self.model.hidden,
            attention: self.model.attention,
        }
    }

    /// Supervised settings; each model gets its own initialization seed.
    pub fn train_config(&self, model_offset: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            clip_norm: self.train.clip_norm,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            lr_decay: self.train.lr_decay,
            seed: self.seeds.train.wrapping_mul(1000).wrapping_add(model_offset),
        }
    }

    pub fn rl_config(&self) -> RlConfig {
        RlConfig {
            learning_rate: self.rl.learning_rate,
            clip_norm: self.rl.clip_norm,
            batch_size: self.rl.batch_size,
            samples_per_input: self.rl.samples_per_input,
            horizon: self.rl.horizon,
            max_len: self.model.max_len,
        }
    }

    /// `pretrained_ppl` is the pre-trained agent's best validation
    /// perplexity, used when no absolute gate is configured.
    pub fn joint_config(&self, pretrained_ppl: f64) -> JointConfig {
        JointConfig {
            sl_rl_ratio: self.rl.sl_rl_ratio,
            rounds: self.rl.rounds,
            fluency_gate: self
                .rl
                .fluency_gate
                .unwrap_or(self.rl.fluency_gate_factor * pretrained_ppl),
            eval_every: self.rl.eval_every,
            seed: self.seeds.train.wrapping_mul(1000).wrapping_add(900),
        }
    }
}
