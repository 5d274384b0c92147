//! A task-oriented dialogue system in which a one-turn learned user model is
//! used to train and steer a tag-conditioned agent model.
//!
//! The pipeline is:
//!
//! 1. [`corpus`] generates a templated coffee-ordering corpus with per-turn
//!    slot annotations.
//! 2. [`text`] builds the shared vocabulary.
//! 3. [`user_model`] trains an attention encoder-decoder ([`seq2seq`]) that
//!    maps an agent utterance to the user's reply.
//! 4. [`agent_model`] pre-trains the agent on `(filled tags, user utterance)`
//!    and then fine-tunes it with REINFORCE, using simulated user replies and
//!    the slot indicator from [`slots`] as reward.
//! 5. [`eval`] compares the supervised baselines with the reinforced agent,
//!    with and without user-model reranking, using the rule-based user from
//!    [`simulator`].

pub mod agent_model;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod seq2seq;
pub mod simulator;
pub mod slots;
pub mod text;
pub mod user_model;

pub use error::{Error, Result};
