//! Meta-learning a small recurrent optimizer for reinforcement learning.
//!
//! The crate is organized around the two nested training loops:
//!
//! - the *inner loop* ([`ppo`]) trains an actor-critic agent ([`agent`]) on a
//!   desk-scale environment ([`env`]) using a pluggable optimizer, either a
//!   handcrafted baseline ([`optim::baseline`]) or the learned GRU optimizer
//!   ([`optim::open`]);
//! - the *outer loop* ([`es`]) trains the learned optimizer's weights with
//!   OpenAI-style evolution strategies, using the inner loop's final return as
//!   fitness.
//!
//! [`analysis`] computes post-hoc metrics over recorded updates, and
//! [`config`] / [`checkpoint`] back the `open-rl` command-line tool.

pub mod agent;
pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod es;
pub mod optim;
pub mod ppo;
pub mod rng;

/// Errors surfaced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
