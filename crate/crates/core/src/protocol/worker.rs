//! Worker-side execution: hold the latest broadcast θ, reconstruct
//! perturbations from seeds, run rollouts, and report scalar results.
//!
//! [`WorkerRuntime`] is the transport-free core; the in-process pool drives
//! it directly and [`serve_worker`] wraps it in a TCP client, so both paths
//! execute the same arithmetic.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;

use crate::envs::{EnvConfig, Environment};
use crate::es::{evaluate_member, Perturbation};
use crate::nn::checkpoint::{policy_from_bytes, policy_to_bytes};
use crate::nn::{MlpPolicy, MlpSpec, ParameterVector};

use super::messages::{
    params_checksum, read_message, read_params_blob, write_message, ResultMessage, TaskMessage,
    WireMessage, PROTOCOL_VERSION,
};
use super::ProtocolError;

/// Transport-free worker state: the policy spec agreed at handshake, one
/// environment instance for rollouts, and the most recent parameter
/// broadcast.
pub struct WorkerRuntime {
    spec: MlpSpec,
    env: Box<dyn Environment>,
    theta: Option<(u64, ParameterVector)>,
}

impl WorkerRuntime {
    pub fn new(spec: MlpSpec, env_config: &EnvConfig) -> Result<Self, ProtocolError> {
        if env_config.observation_dim() != spec.input_dim
            || env_config.num_actions() != spec.output_dim
        {
            return Err(ProtocolError::SpecMismatch(format!(
                "environment wants {}→{} but the policy spec is {}→{}",
                env_config.observation_dim(),
                env_config.num_actions(),
                spec.input_dim,
                spec.output_dim,
            )));
        }
        let env = env_config.make_env().map_err(|e| {
            ProtocolError::Handshake(format!("could not build worker environment: {e}"))
        })?;
        Ok(Self {
            spec,
            env,
            theta: None,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// θ version currently held, if any broadcast has arrived.
    pub fn held_version(&self) -> Option<u64> {
        self.theta.as_ref().map(|(v, _)| *v)
    }

    /// Install a parameter broadcast from its binary checkpoint bytes and
    /// return the checksum of those exact bytes for the acknowledgement.
    pub fn install_params_bytes(&mut self, version: u64, bytes: &[u8]) -> Result<u64, ProtocolError> {
        let policy = policy_from_bytes(bytes)
            .map_err(|e| ProtocolError::Decode(format!("parameter broadcast: {e}")))?;
        if policy.spec() != &self.spec {
            return Err(ProtocolError::SpecMismatch(format!(
                "broadcast carries spec {:?}, handshake agreed on {:?}",
                policy.spec(),
                self.spec
            )));
        }
        let checksum = params_checksum(bytes);
        self.theta = Some((version, policy.to_flat()));
        Ok(checksum)
    }

    /// In-process handoff: take the policy by reference, but compute the
    /// acknowledgement checksum over the same canonical bytes a remote
    /// worker would receive, so both paths verify the same thing.
    pub fn install_policy(&mut self, version: u64, policy: &MlpPolicy) -> Result<u64, ProtocolError> {
        if policy.spec() != &self.spec {
            return Err(ProtocolError::SpecMismatch(format!(
                "broadcast carries spec {:?}, worker was built for {:?}",
                policy.spec(),
                self.spec
            )));
        }
        let checksum = params_checksum(&policy_to_bytes(policy));
        self.theta = Some((version, policy.to_flat()));
        Ok(checksum)
    }

    /// Reconstruct each perturbation from its seed and score it on the
    /// listed episode seeds. One result per perturbation, in task order.
    pub fn evaluate_task(&mut self, task: &TaskMessage) -> Result<Vec<ResultMessage>, ProtocolError> {
        let (held_version, theta) = match &self.theta {
            Some((v, t)) => (*v, t),
            None => {
                return Err(ProtocolError::StaleParams {
                    held_version: None,
                    requested_version: task.theta_version,
                })
            }
        };
        if held_version != task.theta_version {
            return Err(ProtocolError::StaleParams {
                held_version: Some(held_version),
                requested_version: task.theta_version,
            });
        }
        if task.perturbations.is_empty() {
            return Err(ProtocolError::Decode(
                "task lists no perturbations".into(),
            ));
        }
        let mut results = Vec::with_capacity(task.perturbations.len());
        for &Perturbation { seed, sign } in &task.perturbations {
            let outcome = evaluate_member(
                self.env.as_mut(),
                &self.spec,
                theta,
                task.sigma,
                Perturbation { seed, sign },
                &task.episode_seeds,
            )
            .map_err(|e| ProtocolError::Rollout(e.to_string()))?;
            results.push(ResultMessage {
                generation: task.generation,
                seed,
                sign,
                reward: outcome.reward,
                env_steps: outcome.env_steps,
            });
        }
        Ok(results)
    }
}

/// Connect to a coordinator, handshake, and serve rollout tasks until the
/// coordinator shuts the stream down. Returns the number of tasks served.
pub fn serve_worker(addr: &str, env_config: &EnvConfig) -> Result<u64, ProtocolError> {
    let stream = TcpStream::connect(addr)
        .map_err(|e| ProtocolError::Handshake(format!("connect to {addr}: {e}")))?;
    stream.set_nodelay(true).ok();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);

    write_message(
        &mut writer,
        &WireMessage::Hello {
            protocol: PROTOCOL_VERSION,
            env: env_config.clone(),
        },
    )?;
    let spec = match read_message(&mut reader)? {
        Some(WireMessage::Welcome { protocol, spec }) => {
            if protocol != PROTOCOL_VERSION {
                return Err(ProtocolError::Handshake(format!(
                    "coordinator speaks protocol {protocol}, this worker speaks {PROTOCOL_VERSION}"
                )));
            }
            spec
        }
        Some(WireMessage::Reject { reason }) => {
            return Err(ProtocolError::Handshake(format!(
                "coordinator rejected the handshake: {reason}"
            )))
        }
        other => {
            return Err(ProtocolError::Handshake(format!(
                "expected welcome or reject, got {other:?}"
            )))
        }
    };

    let mut runtime = WorkerRuntime::new(spec, env_config)?;
    let mut tasks_served = 0u64;
    loop {
        match read_message(&mut reader)? {
            None | Some(WireMessage::Shutdown) => return Ok(tasks_served),
            Some(WireMessage::Params { version }) => {
                let bytes = read_params_blob(&mut reader)?;
                let checksum = runtime.install_params_bytes(version, &bytes)?;
                write_message(&mut writer, &WireMessage::ParamsAck { version, checksum })?;
            }
            Some(WireMessage::Task(task)) => match runtime.evaluate_task(&task) {
                Ok(results) => {
                    for result in results {
                        write_message(&mut writer, &WireMessage::Result(result))?;
                    }
                    tasks_served += 1;
                }
                Err(ProtocolError::StaleParams {
                    held_version,
                    requested_version,
                }) => {
                    write_message(
                        &mut writer,
                        &WireMessage::Stale {
                            held_version: held_version.unwrap_or(0),
                            requested_version,
                        },
                    )?;
                }
                Err(e) => return Err(e),
            },
            Some(other) => {
                return Err(ProtocolError::Decode(format!(
                    "unexpected message from coordinator: {other:?}"
                )))
            }
        }
    }
}
