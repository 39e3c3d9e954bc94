//! Wire messages and framing for the coordinator/worker channel.
//!
//! Control traffic is newline-delimited JSON, one message per line. The only
//! bulk payload — the parameter vector — travels as the binary checkpoint
//! encoding framed by a little-endian `u64` byte-length prefix, announced by
//! a preceding [`WireMessage::Params`] line. Every JSON decoder here ignores
//! unknown fields, so older workers keep functioning when new fields appear.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::es::Perturbation;
use crate::nn::MlpSpec;

/// Version of the message schema; the handshake rejects mismatches.
pub const PROTOCOL_VERSION: u32 = 1;

/// Hard cap on an announced parameter-blob length, to bound allocation on a
/// corrupt or hostile stream.
const MAX_PARAMS_BYTES: u64 = 1 << 30;

/// One generation's work order for a worker: reconstruct each perturbation
/// from its seed, evaluate the perturbed policy on the listed episode seeds,
/// and send back one [`ResultMessage`] per perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMessage {
    pub generation: u64,
    pub perturbations: Vec<Perturbation>,
    pub sigma: f64,
    pub episode_seeds: Vec<u64>,
    pub theta_version: u64,
}

/// A finished rollout: the seed and sign are enough for the coordinator to
/// reconstruct the perturbation, so the message stays the same size no
/// matter how many parameters the policy has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMessage {
    pub generation: u64,
    pub seed: u64,
    pub sign: i8,
    pub reward: f64,
    pub env_steps: u64,
}

/// Control messages exchanged as newline-delimited JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    /// Worker → coordinator, first message on the stream. Carries the
    /// worker's environment so the coordinator can refuse a worker that
    /// would score rollouts under different dynamics.
    Hello { protocol: u32, env: EnvConfig },
    /// Coordinator → worker on a successful handshake; tells the worker
    /// which network shape the parameter broadcasts describe.
    Welcome { protocol: u32, spec: MlpSpec },
    /// Coordinator → worker when the handshake fails.
    Reject { reason: String },
    /// Coordinator → worker: the next bytes on the stream (after this line)
    /// are a length-prefixed binary checkpoint holding θ for `version`.
    Params { version: u64 },
    /// Worker → coordinator: θ installed; `checksum` lets both sides confirm
    /// the bytes survived the trip.
    ParamsAck { version: u64, checksum: u64 },
    Task(TaskMessage),
    Result(ResultMessage),
    /// Worker → coordinator: a task referenced a θ version the worker does
    /// not hold; the coordinator should re-broadcast.
    Stale {
        held_version: u64,
        requested_version: u64,
    },
    Shutdown,
}

/// FNV-1a over the exact checkpoint bytes; computed independently by sender
/// and receiver to confirm a parameter broadcast arrived intact.
pub fn params_checksum(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Serialize one control message as a JSON line.
pub fn write_message<W: Write>(writer: &mut W, message: &WireMessage) -> io::Result<()> {
    let mut line = serde_json::to_vec(message)?;
    line.push(b'\n');
    writer.write_all(&line)?;
    writer.flush()
}

/// Read one control message; `Ok(None)` on a cleanly closed stream.
pub fn read_message<R: BufRead>(reader: &mut R) -> io::Result<Option<WireMessage>> {
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        if line.trim().is_empty() {
            continue;
        }
        return serde_json::from_str(&line)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e));
    }
}

/// Write the parameter blob that a [`WireMessage::Params`] line announces.
pub fn write_params_blob<W: Write>(writer: &mut W, bytes: &[u8]) -> io::Result<()> {
    writer.write_all(&(bytes.len() as u64).to_le_bytes())?;
    writer.write_all(bytes)?;
    writer.flush()
}

/// Read a length-prefixed parameter blob.
pub fn read_params_blob<R: Read>(reader: &mut R) -> io::Result<Vec<u8>> {
    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes);
    if len > MAX_PARAMS_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("parameter blob of {len} bytes exceeds the {MAX_PARAMS_BYTES}-byte cap"),
        ));
    }
    let mut bytes = vec![0u8; len as usize];
    reader.read_exact(&mut bytes)?;
    Ok(bytes)
}
