use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dialogue_core::agent_model::{agent_examples, encode_agent_input, rerank_infer, AgentInput, AgentKind, RlInput, UserSimulator};
use dialogue_core::config::Config;
use dialogue_core::error::{Error, Result};
use dialogue_core::pipeline::{self, require_checkpoints, Artifacts, Prepared};
use dialogue_core::seq2seq::{load_checkpoint, perplexity, Seq2SeqParams};
use dialogue_core::simulator::is_confirmation;
use dialogue_core::slots::{extract_slots, merge, SlotState};
use dialogue_core::text::{decode, tokenize};

#[derive(Parser)]
#[command(name = "dialogue", version, about = "Train and evaluate slot-filling dialogue agents")]
struct Cli {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory.
    #[arg(long, global = true, default_value = "artifacts")]
    out: PathBuf,
    /// Corpus file, instead of `<out>/corpus.jsonl`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and slot schema.
    GenCorpus {
        /// Number of sessions.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Build the vocabulary from the training split.
    BuildVocab,
    /// Train the user model.
    TrainUser,
    /// Pre-train the supervised agents.
    TrainAgent {
        #[arg(long, value_enum, default_value_t = Which::Both)]
        kind: Which,
    },
    /// Fine-tune the tagged agent with joint supervised and policy-gradient updates.
    RlFinetune {
        /// Starting agent, instead of `<out>/slt.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare all systems on the test split and write the report.
    Evaluate,
    /// Talk to an agent on stdin; responses are reranked with the user model.
    Chat {
        /// Agent checkpoint, instead of `<out>/samia.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Slnt,
    Slt,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::GenCorpus { .. } => cfg.seeds.corpus = seed,
            Command::TrainUser | Command::TrainAgent { .. } | Command::RlFinetune { .. } => cfg.seeds.train = seed,
            Command::Evaluate | Command::Chat { .. } => cfg.seeds.eval = seed,
            Command::BuildVocab => {}
        }
    }
    if let Command::GenCorpus { n: Some(n) } = cli.command {
        cfg.corpus.sessions = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let art = Artifacts {
        dir: cli.out.clone(),
        corpus_file: cli.corpus.clone(),
    };
    match &cli.command {
        Command::GenCorpus { .. } => {
            let sessions = art.write_corpus(&cfg)?;
            eprintln!("wrote {} sessions to {}", sessions.len(), art.corpus().display());
        }
        Command::BuildVocab => {
            let vocab = art.write_vocab(&cfg)?;
            eprintln!("wrote {} tokens to {}", vocab.len(), art.vocab().display());
        }
        Command::TrainUser => {
            let prep = prepared(&art, &cfg)?;
            let out = pipeline::train_user_model(&cfg, &prep)?;
            art.save_model(&cfg, "user", &out.params, &prep.vocab)?;
            art.write_trace("user", &out.trace)?;
            eprintln!(
                "user model: best epoch {}, validation perplexity {:.4}",
                out.best_epoch, out.best_valid_perplexity
            );
        }
        Command::TrainAgent { kind } => {
            let prep = prepared(&art, &cfg)?;
            let kinds: &[AgentKind] = match kind {
                Which::Slnt => &[AgentKind::Slnt],
                Which::Slt => &[AgentKind::Slt],
                Which::Both => &[AgentKind::Slnt, AgentKind::Slt],
            };
            for &k in kinds {
                let out = pipeline::train_agent_model(&cfg, &prep, k)?;
                art.save_model(&cfg, k.name(), &out.params, &prep.vocab)?;
                art.write_trace(k.name(), &out.trace)?;
                eprintln!(
                    "{}: best epoch {}, validation perplexity {:.4}",
                    k.name(),
                    out.best_epoch,
                    out.best_valid_perplexity
                );
            }
        }
        Command::RlFinetune { checkpoint } => {
            let prep = prepared(&art, &cfg)?;
            let user = art.load_model("user", &prep.vocab)?;
            let slt = match checkpoint {
                Some(path) => load_agent(path, &prep)?.0,
                None => art.load_model("slt", &prep.vocab)?,
            };
            let (_, valid, _) = prep.agent_samples();
            let valid = agent_examples(&valid, &prep.vocab, &prep.schema, cfg.model.max_len, true);
            let slt_ppl = perplexity(&slt, &valid)?;
            let out = pipeline::rl_finetune(&cfg, &prep, &slt, slt_ppl, &user)?;
            art.save_model(&cfg, "samia", &out.params, &prep.vocab)?;
            art.write_trace("samia", &out.trace)?;
            if let Some(last) = out.trace.last() {
                eprintln!(
                    "samia: {} rounds, validation perplexity {:.4}, mean reward {:.4}",
                    last.round, last.valid_perplexity, last.mean_reward
                );
            }
        }
        Command::Evaluate => {
            let prep = prepared(&art, &cfg)?;
            require_checkpoints(&art)?;
            let user = art.load_model("user", &prep.vocab)?;
            let slnt = art.load_model("slnt", &prep.vocab)?;
            let slt = art.load_model("slt", &prep.vocab)?;
            let samia = art.load_model("samia", &prep.vocab)?;
            let models = dialogue_core::eval::Models {
                user: &user,
                slnt: &slnt,
                slt: &slt,
                samia: &samia,
            };
            let (report, candidates) = pipeline::evaluate(&cfg, &prep, &models)?;
            art.write_report(&report, &candidates)?;
            print!("{}", report.to_text());
        }
        Command::Chat { checkpoint } => {
            let prep = prepared(&art, &cfg)?;
            let path = checkpoint.clone().unwrap_or_else(|| art.checkpoint("samia"));
            let (agent, with_tags) = load_agent(&path, &prep)?;
            let user = art.load_model("user", &prep.vocab)?;
            let stdin = io::stdin();
            chat(&cfg, &prep, &agent, with_tags, &user, stdin.lock(), io::stdout())?;
        }
    }
    Ok(())
}

fn prepared(art: &Artifacts, cfg: &Config) -> Result<Prepared> {
    if !art.vocab().exists() {
        return Err(Error::MissingArtifact(art.vocab()));
    }
    art.prepared(cfg)
}

/// Loads an agent checkpoint; SLNT checkpoints take untagged input.
fn load_agent(path: &Path, prep: &Prepared) -> Result<(Seq2SeqParams, bool)> {
    let (header, params) = load_checkpoint(path, &prep.vocab)?;
    if header.role == "user" {
        return Err(Error::Checkpoint(format!("{} holds the user model, not an agent", path.display())));
    }
    Ok((params, header.role != AgentKind::Slnt.name()))
}

fn chat(
    cfg: &Config,
    prep: &Prepared,
    agent: &Seq2SeqParams,
    with_tags: bool,
    user: &Seq2SeqParams,
    input: impl BufRead,
    mut out: impl Write,
) -> Result<()> {
    let max_len = cfg.model.max_len;
    let mut sim = UserSimulator::new(user, &prep.vocab, &prep.schema, cfg.rl.user_beam, max_len, cfg.rl.baseline);
    let mut tags = SlotState::new();
    writeln!(out, "order a coffee; an empty line or EOF ends the chat")?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            break;
        }
        let user_text = tokenize(&line);
        tags = merge(&tags, &extract_slots(&user_text, &prep.schema));
        let agent_input = AgentInput {
            tags: tags.clone(),
            user_text,
        };
        let rl = RlInput {
            ids: encode_agent_input(&agent_input, &prep.vocab, &prep.schema, max_len, with_tags),
            tags: tags.clone(),
        };
        let rerank = rerank_infer(agent, &mut sim, &rl, cfg.eval.beam_width, cfg.eval.rerank_top, max_len)?;
        let response = decode(&rerank.chosen().tokens, &prep.vocab);
        tags = merge(&tags, &extract_slots(&response, &prep.schema));
        writeln!(out, "agent: {}", response.join(" "))?;
        let shown: Vec<String> = tags.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "tags: {{{}}}", shown.join(", "))?;
        if is_confirmation(&response) {
            break;
        }
    }
    Ok(())
}
