//! Seed-only coordination between an optimizer and its rollout workers.
//!
//! The parameter vector is broadcast once per generation; everything else on
//! the channel is O(1) per rollout: tasks name perturbations by `(seed,
//! sign)` and results return `(seed, sign, reward, env_steps)`. Workers can
//! be in-process threads, remote TCP processes, or both at once, and every
//! execution path scores members through the same arithmetic, so the
//! optimizer sees bit-identical rewards regardless of where a rollout ran.

pub mod coordinator;
pub mod messages;
pub mod worker;

pub use coordinator::{LocalWorkerOptions, PoolConfig, WorkerPool};
pub use messages::{
    params_checksum, ResultMessage, TaskMessage, WireMessage, PROTOCOL_VERSION,
};
pub use worker::{serve_worker, WorkerRuntime};

/// Errors raised by either side of the worker protocol.
#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("policy spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("malformed protocol traffic: {0}")]
    Decode(String),
    #[error(
        "stale parameters: worker holds version {held_version:?}, task references {requested_version}"
    )]
    StaleParams {
        held_version: Option<u64>,
        requested_version: u64,
    },
    #[error("rollout failed: {0}")]
    Rollout(String),
    #[error("no live workers remain ({completed}/{total} rollouts finished): {diagnostics}")]
    AllWorkersDead {
        completed: usize,
        total: usize,
        diagnostics: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
