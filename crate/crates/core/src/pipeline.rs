//! Stage-by-stage orchestration shared by the CLI and the tests.

use std::fs;
use std::path::PathBuf;

use crate::agent_model::{
    agent_examples, agent_samples, joint_train, pretrain_agent, rl_inputs, AgentKind, AgentSample, JointOutcome,
    UserSimulator,
};
use crate::config::Config;
use crate::corpus::{generate_corpus, load_corpus, save_corpus, split_corpus, Session};
use crate::error::{Error, Result};
use crate::eval::{run_experiment, EvalData, InputCandidates, Models, Report};
use crate::seq2seq::{load_checkpoint, save_checkpoint, CheckpointHeader, Seq2SeqParams, TrainOutcome};
use crate::slots::SlotSchema;
use crate::text::{build_vocab, Vocabulary};
use crate::user_model::{extract_user_pairs, train_user, UserPair};

/// Corpus splits and the vocabulary built from the training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub schema: SlotSchema,
    pub train: Vec<Session>,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
    pub vocab: Vocabulary,
}

impl Prepared {
    pub fn from_sessions(cfg: &Config, schema: SlotSchema, sessions: Vec<Session>) -> Result<Self> {
        let (train, valid, test) = split_corpus(&sessions, cfg.corpus.split, cfg.seeds.corpus.wrapping_add(1))?;
        let vocab = build_vocab(&train, &schema, cfg.corpus.min_freq)?;
        Ok(Self {
            schema,
            train,
            valid,
            test,
            vocab,
        })
    }

    pub fn generate(cfg: &Config) -> Result<Self> {
        let schema = SlotSchema::coffee();
        let sessions = generate_corpus(&schema, cfg.corpus.sessions, cfg.seeds.corpus)?;
        Self::from_sessions(cfg, schema, sessions)
    }

    pub fn user_pairs(&self) -> (Vec<UserPair>, Vec<UserPair>, Vec<UserPair>) {
        (
            extract_user_pairs(&self.train),
            extract_user_pairs(&self.valid),
            extract_user_pairs(&self.test),
        )
    }

    pub fn agent_samples(&self) -> (Vec<AgentSample>, Vec<AgentSample>, Vec<AgentSample>) {
        (
            agent_samples(&self.train),
            agent_samples(&self.valid),
            agent_samples(&self.test),
        )
    }
}

pub fn train_user_model(cfg: &Config, prep: &Prepared) -> Result<TrainOutcome> {
    let (train, valid, _) = prep.user_pairs();
    train_user(
        &train,
        &valid,
        &prep.vocab,
        cfg.dims(prep.vocab.len()),
        cfg.model.max_len,
        &cfg.train_config(1),
    )
}

pub fn train_agent_model(cfg: &Config, prep: &Prepared, kind: AgentKind) -> Result<TrainOutcome> {
    let (train, valid, _) = prep.agent_samples();
    let offset = match kind {
        AgentKind::Slnt => 2,
        AgentKind::Slt => 3,
    };
    pretrain_agent(
        &train,
        &valid,
        &prep.vocab,
        &prep.schema,
        cfg.dims(prep.vocab.len()),
        cfg.model.max_len,
        kind,
        &cfg.train_config(offset),
    )
}

/// Joint supervised + REINFORCE training starting from the SLT agent.
pub fn rl_finetune(
    cfg: &Config,
    prep: &Prepared,
    slt: &Seq2SeqParams,
    slt_valid_ppl: f64,
    user: &Seq2SeqParams,
) -> Result<JointOutcome> {
    let (train, valid, _) = prep.agent_samples();
    let max_len = cfg.model.max_len;
    let sl_train = agent_examples(&train, &prep.vocab, &prep.schema, max_len, true);
    let sl_valid = agent_examples(&valid, &prep.vocab, &prep.schema, max_len, true);
    let rl_data = rl_inputs(&train, &prep.vocab, &prep.schema, max_len, true);
    let mut sim = UserSimulator::new(user, &prep.vocab, &prep.schema, cfg.rl.user_beam, max_len, cfg.rl.baseline);
    let sl_cfg = cfg.train_config(4);
    joint_train(
        slt.clone(),
        &sl_train,
        &sl_valid,
        &rl_data,
        &mut sim,
        true,
        &sl_cfg,
        &cfg.rl_config(),
        &cfg.joint_config(slt_valid_ppl),
    )
}

/// All four trained models.
#[derive(Debug, Clone)]
pub struct Trained {
    pub user: TrainOutcome,
    pub slnt: TrainOutcome,
    pub slt: TrainOutcome,
    pub samia: JointOutcome,
}

impl Trained {
    pub fn models(&self) -> Models<'_> {
        Models {
            user: &self.user.params,
            slnt: &self.slnt.params,
            slt: &self.slt.params,
            samia: &self.samia.params,
        }
    }
}

pub fn train_all(cfg: &Config, prep: &Prepared) -> Result<Trained> {
    let user = train_user_model(cfg, prep)?;
    let slnt = train_agent_model(cfg, prep, AgentKind::Slnt)?;
    let slt = train_agent_model(cfg, prep, AgentKind::Slt)?;
    let samia = rl_finetune(cfg, prep, &slt.params, slt.best_valid_perplexity, &user.params)?;
    Ok(Trained { user, slnt, slt, samia })
}

pub fn evaluate(cfg: &Config, prep: &Prepared, models: &Models<'_>) -> Result<(Report, Vec<InputCandidates>)> {
    let (_, _, user_test) = prep.user_pairs();
    let (_, _, agent_test) = prep.agent_samples();
    let data = EvalData {
        schema: &prep.schema,
        vocab: &prep.vocab,
        agent_test: &agent_test,
        user_test: &user_test,
    };
    run_experiment(cfg, &data, models)
}

/// File layout of one experiment directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    /// Read the corpus from here instead of the directory.
    pub corpus_file: Option<PathBuf>,
}

/// Checkpoint roles, in training order.
pub const ROLES: [&str; 4] = ["user", "slnt", "slt", "samia"];

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            corpus_file: None,
        }
    }

    pub fn corpus(&self) -> PathBuf {
        self.corpus_file.clone().unwrap_or_else(|| self.dir.join("corpus.jsonl"))
    }

    pub fn schema(&self) -> PathBuf {
        self.dir.join("schema.json")
    }

    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }

    pub fn checkpoint(&self, role: &str) -> PathBuf {
        self.dir.join(format!("{role}.ckpt"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.dir.join("report.txt")
    }

    pub fn plot_data(&self) -> PathBuf {
        self.dir.join("plot.tsv")
    }

    pub fn candidates(&self) -> PathBuf {
        self.dir.join("candidates.jsonl")
    }

    pub fn trace(&self, role: &str) -> PathBuf {
        self.dir.join(format!("{role}.trace.json"))
    }

    fn require(path: PathBuf) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact(path))
        }
    }

    pub fn write_corpus(&self, cfg: &Config) -> Result<Vec<Session>> {
        fs::create_dir_all(&self.dir)?;
        let schema = SlotSchema::coffee();
        let sessions = generate_corpus(&schema, cfg.corpus.sessions, cfg.seeds.corpus)?;
        schema.save(&self.schema())?;
        save_corpus(&self.corpus(), &sessions)?;
        Ok(sessions)
    }

    /// Loads the corpus and schema and rebuilds the splits.
    pub fn prepared(&self, cfg: &Config) -> Result<Prepared> {
        let schema = SlotSchema::load(&Self::require(self.schema())?)?;
        let sessions = load_corpus(&Self::require(self.corpus())?)?;
        let prep = Prepared::from_sessions(cfg, schema, sessions)?;
        if let Ok(path) = Self::require(self.vocab()) {
            let saved = Vocabulary::load(&path)?;
            if saved != prep.vocab {
                return Err(Error::VocabMismatch {
                    expected: saved.hash(),
                    found: prep.vocab.hash(),
                });
            }
        }
        Ok(prep)
    }

    pub fn write_vocab(&self, cfg: &Config) -> Result<Vocabulary> {
        let schema = SlotSchema::load(&Self::require(self.schema())?)?;
        let sessions = load_corpus(&Self::require(self.corpus())?)?;
        let prep = Prepared::from_sessions(cfg, schema, sessions)?;
        prep.vocab.save(&self.vocab())?;
        Ok(prep.vocab)
    }

    pub fn save_model(&self, cfg: &Config, role: &str, params: &Seq2SeqParams, vocab: &Vocabulary) -> Result<()> {
        let header = CheckpointHeader {
            role: role.to_string(),
            dims: params.dims,
            vocab_hash: vocab.hash(),
            max_len: cfg.model.max_len,
        };
        save_checkpoint(&self.checkpoint(role), params, &header)
    }

    pub fn load_model(&self, role: &str, vocab: &Vocabulary) -> Result<Seq2SeqParams> {
        let (header, params) = load_checkpoint(&Self::require(self.checkpoint(role))?, vocab)?;
        if header.role != role {
            return Err(Error::Checkpoint(format!(
                "{} holds a {} model, expected {role}",
                self.checkpoint(role).display(),
                header.role
            )));
        }
        Ok(params)
    }

    pub fn write_trace<T: serde::Serialize>(&self, role: &str, trace: &T) -> Result<()> {
        fs::write(self.trace(role), serde_json::to_string_pretty(trace)?)?;
        Ok(())
    }

    pub fn write_report(&self, report: &Report, candidates: &[InputCandidates]) -> Result<()> {
        fs::write(self.report_json(), report.to_json() + "\n")?;
        fs::write(self.report_text(), report.to_text())?;
        fs::write(self.plot_data(), report.plot_data())?;
        let mut lines = String::new();
        for c in candidates {
            lines.push_str(&serde_json::to_string(c)?);
            lines.push('\n');
        }
        fs::write(self.candidates(), lines)?;
        Ok(())
    }
}

/// Fails with the first missing checkpoint, in training order.
pub fn require_checkpoints(art: &Artifacts) -> Result<()> {
    for role in ROLES {
        let path = art.checkpoint(role);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
    }
    Ok(())
}
