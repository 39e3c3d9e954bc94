//! Coordinator side: a pool of rollout workers driven by seed-only messages.
//!
//! The pool owns generation state. Each generation is one parameter
//! broadcast followed by one task per population member; workers return one
//! [`ResultMessage`] per member. Results may arrive in any order and from
//! any worker — the pool re-orders them by population index, drops
//! duplicates from reassignment races (first arrival wins), and reassigns
//! tasks held by dead or straggling workers.

use std::collections::{HashMap, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::envs::EnvConfig;
use crate::es::{EvalError, EvalOutcome, MemberTask, PopulationEvaluator};
use crate::nn::checkpoint::policy_to_bytes;
use crate::nn::{MlpPolicy, MlpSpec, ParameterVector};

use super::messages::{
    params_checksum, read_message, write_message, write_params_blob, TaskMessage, WireMessage,
    PROTOCOL_VERSION,
};
use super::worker::WorkerRuntime;
use super::ProtocolError;

/// Pool construction knobs. `min_task_timeout` and `straggler_factor` set
/// the per-task reassignment deadline: `max(min_task_timeout,
/// straggler_factor × median task duration of the previous generation)`.
#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub local_workers: usize,
    /// Bind address for remote workers, e.g. `"127.0.0.1:0"`; `None`
    /// disables the listener.
    pub listen_addr: Option<String>,
    pub min_task_timeout: Duration,
    pub straggler_factor: f64,
    /// How long a parameter broadcast waits for acknowledgements before
    /// declaring unresponsive workers dead.
    pub ack_timeout: Duration,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            local_workers: 1,
            listen_addr: None,
            min_task_timeout: Duration::from_secs(5),
            straggler_factor: 10.0,
            ack_timeout: Duration::from_secs(10),
        }
    }
}

/// Fault-injection hooks for in-process workers, used by the failure and
/// straggler tests; production pools leave both unset.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalWorkerOptions {
    /// Serve this many tasks, then drop the connection without replying.
    pub fail_after_tasks: Option<u64>,
    /// Sleep this long before starting each task.
    pub synthetic_delay: Option<Duration>,
}

enum Event {
    Message { worker: usize, message: WireMessage },
    Disconnected { worker: usize, reason: String },
    NewRemote { stream: TcpStream, peer: String },
}

enum WorkerLink {
    Local(Sender<LocalCommand>),
    Remote(TcpStream),
}

enum LocalCommand {
    Params { version: u64, policy: Arc<MlpPolicy> },
    Task(TaskMessage),
    Shutdown,
}

#[derive(Debug, Clone, Copy)]
struct Inflight {
    index: usize,
    dispatched: Instant,
    deadline: Instant,
    reassigned: bool,
}

struct WorkerSlot {
    link: WorkerLink,
    label: String,
    alive: bool,
    acked_version: Option<u64>,
    inflight: Option<Inflight>,
}

/// A set of rollout workers — in-process threads and/or remote TCP
/// processes — that evaluates whole populations on request.
pub struct WorkerPool {
    spec: MlpSpec,
    env_config: EnvConfig,
    config: PoolConfig,
    slots: Vec<WorkerSlot>,
    events: Receiver<Event>,
    event_tx: Sender<Event>,
    listener_addr: Option<SocketAddr>,
    listener_shutdown: Arc<AtomicBool>,
    theta_version: u64,
    generation_counter: u64,
    last_broadcast: Option<(u64, Arc<MlpPolicy>, u64)>,
    prev_median_task: Option<Duration>,
    diagnostics: Vec<String>,
}

impl WorkerPool {
    pub fn new(
        spec: MlpSpec,
        env_config: EnvConfig,
        config: PoolConfig,
    ) -> Result<Self, ProtocolError> {
        spec.validate()?;
        env_config
            .validate()
            .map_err(|e| ProtocolError::Handshake(format!("invalid environment config: {e}")))?;
        let (event_tx, events) = mpsc::channel();
        let listener_shutdown = Arc::new(AtomicBool::new(false));
        let mut pool = Self {
            spec,
            env_config,
            config: config.clone(),
            slots: Vec::new(),
            events,
            event_tx,
            listener_addr: None,
            listener_shutdown,
            theta_version: 0,
            generation_counter: 0,
            last_broadcast: None,
            prev_median_task: None,
            diagnostics: Vec::new(),
        };
        if let Some(addr) = &config.listen_addr {
            pool.start_listener(addr)?;
        }
        for _ in 0..config.local_workers {
            pool.spawn_local_worker(LocalWorkerOptions::default())?;
        }
        Ok(pool)
    }

    /// Address remote workers should connect to, when a listener is active.
    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.listener_addr
    }

    pub fn live_workers(&self) -> usize {
        self.slots.iter().filter(|s| s.alive).count()
    }

    /// Worker deaths and other noteworthy pool events, oldest first.
    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    /// Add one in-process worker thread. The options exist for fault
    /// injection; defaults give an ordinary worker.
    pub fn spawn_local_worker(
        &mut self,
        options: LocalWorkerOptions,
    ) -> Result<usize, ProtocolError> {
        let id = self.slots.len();
        let (tx, rx) = mpsc::channel();
        let events = self.event_tx.clone();
        let spec = self.spec.clone();
        let env_config = self.env_config.clone();
        thread::Builder::new()
            .name(format!("rollout-worker-{id}"))
            .spawn(move || local_worker_loop(id, spec, env_config, options, rx, events))
            .map_err(ProtocolError::Io)?;
        self.slots.push(WorkerSlot {
            link: WorkerLink::Local(tx),
            label: format!("local-{id}"),
            alive: true,
            acked_version: None,
            inflight: None,
        });
        Ok(id)
    }

    fn start_listener(&mut self, addr: &str) -> Result<(), ProtocolError> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| ProtocolError::Handshake(format!("bind {addr}: {e}")))?;
        self.listener_addr = Some(listener.local_addr()?);
        let events = self.event_tx.clone();
        let spec = self.spec.clone();
        let env_config = self.env_config.clone();
        let shutdown = Arc::clone(&self.listener_shutdown);
        thread::Builder::new()
            .name("worker-listener".into())
            .spawn(move || listener_loop(listener, spec, env_config, shutdown, events))
            .map_err(ProtocolError::Io)?;
        Ok(())
    }

    /// Block until at least `count` remote workers have completed the
    /// handshake, or fail after `timeout`.
    pub fn wait_for_remote_workers(
        &mut self,
        count: usize,
        timeout: Duration,
    ) -> Result<(), ProtocolError> {
        let deadline = Instant::now() + timeout;
        loop {
            let remotes = self
                .slots
                .iter()
                .filter(|s| s.alive && matches!(s.link, WorkerLink::Remote(_)))
                .count();
            if remotes >= count {
                return Ok(());
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ProtocolError::Handshake(format!(
                    "waited {timeout:?} but only {remotes} of {count} remote workers connected"
                )));
            }
            match self.events.recv_timeout(deadline - now) {
                Ok(event) => self.handle_idle_event(event),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ProtocolError::Handshake(
                        "event channel closed while waiting for workers".into(),
                    ))
                }
            }
        }
    }

    /// Process an event that arrives outside a generation: registrations
    /// and deaths matter, stray rollout traffic from past generations does
    /// not.
    fn handle_idle_event(&mut self, event: Event) {
        match event {
            Event::NewRemote { stream, peer } => self.register_remote(stream, peer),
            Event::Disconnected { worker, reason } => self.mark_dead(worker, &reason),
            Event::Message { .. } => {}
        }
    }

    fn register_remote(&mut self, stream: TcpStream, peer: String) {
        let id = self.slots.len();
        let events = self.event_tx.clone();
        let reader_stream = match stream.try_clone() {
            Ok(s) => s,
            Err(e) => {
                self.diagnostics
                    .push(format!("remote {peer} dropped at registration: {e}"));
                return;
            }
        };
        let spawned = thread::Builder::new()
            .name(format!("worker-reader-{id}"))
            .spawn(move || remote_reader_loop(id, reader_stream, events));
        if let Err(e) = spawned {
            self.diagnostics
                .push(format!("remote {peer} dropped at registration: {e}"));
            return;
        }
        self.slots.push(WorkerSlot {
            link: WorkerLink::Remote(stream),
            label: format!("remote-{peer}"),
            alive: true,
            acked_version: None,
            inflight: None,
        });
    }

    fn mark_dead(&mut self, worker: usize, reason: &str) {
        if let Some(slot) = self.slots.get_mut(worker) {
            if slot.alive {
                slot.alive = false;
                self.diagnostics
                    .push(format!("worker {} died: {reason}", slot.label));
            }
        }
    }

    /// Send θ to one worker. Errors mark the worker dead rather than
    /// failing the broadcast.
    fn send_params(&mut self, worker: usize, version: u64, policy: &Arc<MlpPolicy>) {
        let slot = &mut self.slots[worker];
        if !slot.alive {
            return;
        }
        slot.acked_version = None;
        let outcome = match &mut slot.link {
            WorkerLink::Local(tx) => tx
                .send(LocalCommand::Params {
                    version,
                    policy: Arc::clone(policy),
                })
                .map_err(|_| "command channel closed".to_string()),
            WorkerLink::Remote(stream) => write_message(stream, &WireMessage::Params { version })
                .and_then(|()| write_params_blob(stream, &policy_to_bytes(policy)))
                .map_err(|e| e.to_string()),
        };
        if let Err(reason) = outcome {
            self.mark_dead(worker, &format!("parameter send failed: {reason}"));
        }
    }

    /// Broadcast θ to every live worker and wait for acknowledgements.
    /// Workers that fail to acknowledge in time are marked dead; the
    /// broadcast itself succeeds as long as θ encodes (zero live workers is
    /// a vacuous success).
    pub fn broadcast(&mut self, theta: &ParameterVector) -> Result<u64, ProtocolError> {
        // Absorb any queued registrations/deaths first.
        while let Ok(event) = self.events.try_recv() {
            self.handle_idle_event(event);
        }
        self.theta_version += 1;
        let version = self.theta_version;
        let policy = Arc::new(MlpPolicy::from_flat(self.spec.clone(), theta)?);
        let checksum = params_checksum(&policy_to_bytes(&policy));
        self.last_broadcast = Some((version, Arc::clone(&policy), checksum));

        for id in 0..self.slots.len() {
            self.send_params(id, version, &policy);
        }

        let deadline = Instant::now() + self.config.ack_timeout;
        loop {
            let unacked: Vec<usize> = self
                .slots
                .iter()
                .enumerate()
                .filter(|(_, s)| s.alive && s.acked_version != Some(version))
                .map(|(i, _)| i)
                .collect();
            if unacked.is_empty() {
                return Ok(version);
            }
            let now = Instant::now();
            if now >= deadline {
                for id in unacked {
                    self.mark_dead(id, "no acknowledgement before the broadcast deadline");
                }
                return Ok(version);
            }
            match self.events.recv_timeout(deadline - now) {
                Ok(Event::Message {
                    worker,
                    message: WireMessage::ParamsAck {
                        version: acked,
                        checksum: echoed,
                    },
                }) => {
                    if acked == version {
                        if echoed == checksum {
                            self.slots[worker].acked_version = Some(version);
                        } else {
                            self.mark_dead(
                                worker,
                                &format!(
                                    "checksum mismatch on broadcast {version}: \
                                     sent {checksum:#018x}, worker saw {echoed:#018x}"
                                ),
                            );
                        }
                    }
                }
                // Straggler traffic from a previous generation; ignore.
                Ok(Event::Message { .. }) => {}
                Ok(other) => self.handle_idle_event(other),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ProtocolError::Handshake(
                        "event channel closed during broadcast".into(),
                    ))
                }
            }
        }
    }

    fn task_timeout(&self) -> Duration {
        match self.prev_median_task {
            Some(median) => {
                let scaled = median.mul_f64(self.config.straggler_factor);
                scaled.max(self.config.min_task_timeout)
            }
            None => self.config.min_task_timeout,
        }
    }

    fn dispatch(
        &mut self,
        worker: usize,
        index: usize,
        task: &MemberTask,
        sigma: f64,
        generation: u64,
    ) -> bool {
        let version = self.theta_version;
        let timeout = self.task_timeout();
        let message = TaskMessage {
            generation,
            perturbations: vec![task.perturbation],
            sigma,
            episode_seeds: task.episode_seeds.clone(),
            theta_version: version,
        };
        let slot = &mut self.slots[worker];
        let outcome = match &mut slot.link {
            WorkerLink::Local(tx) => tx
                .send(LocalCommand::Task(message))
                .map_err(|_| "command channel closed".to_string()),
            WorkerLink::Remote(stream) => {
                write_message(stream, &WireMessage::Task(message)).map_err(|e| e.to_string())
            }
        };
        match outcome {
            Ok(()) => {
                let now = Instant::now();
                self.slots[worker].inflight = Some(Inflight {
                    index,
                    dispatched: now,
                    deadline: now + timeout,
                    reassigned: false,
                });
                true
            }
            Err(reason) => {
                self.mark_dead(worker, &format!("task send failed: {reason}"));
                false
            }
        }
    }

    /// Evaluate one population: exactly one outcome per task, ordered by
    /// population index, no matter how many workers are live or how results
    /// interleave. Requires a previous [`WorkerPool::broadcast`].
    pub fn run_generation(
        &mut self,
        sigma: f64,
        tasks: &[MemberTask],
    ) -> Result<Vec<EvalOutcome>, ProtocolError> {
        if tasks.is_empty() {
            return Ok(Vec::new());
        }
        let version = self.theta_version;
        let (_, policy, _) = self
            .last_broadcast
            .clone()
            .ok_or_else(|| ProtocolError::Handshake("run_generation before broadcast".into()))?;
        let generation = self.generation_counter;
        self.generation_counter += 1;
        // Forget dispatch bookkeeping from any earlier (possibly aborted)
        // generation; results for it are filtered out by the generation tag.
        for slot in &mut self.slots {
            slot.inflight = None;
        }

        let mut key_to_index = HashMap::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            let key = (task.perturbation.seed, task.perturbation.sign);
            if key_to_index.insert(key, i).is_some() {
                return Err(ProtocolError::Decode(format!(
                    "population lists perturbation (seed {}, sign {}) twice",
                    key.0, key.1
                )));
            }
        }

        let mut pending: VecDeque<usize> = (0..tasks.len()).collect();
        let mut results: Vec<Option<EvalOutcome>> = vec![None; tasks.len()];
        let mut done = 0usize;
        let mut durations: Vec<Duration> = Vec::with_capacity(tasks.len());
        let mut last_progress = Instant::now();

        while done < tasks.len() {
            // Dispatch to every idle worker holding the current θ; nudge
            // live workers that missed the broadcast.
            let mut made_progress = false;
            for id in 0..self.slots.len() {
                // Indices completed since being requeued need no new run.
                let index = loop {
                    match pending.pop_front() {
                        Some(i) if results[i].is_some() => continue,
                        other => break other,
                    }
                };
                let Some(index) = index else { break };
                let slot = &self.slots[id];
                if !slot.alive
                    || slot.inflight.is_some()
                    || slot.acked_version != Some(version)
                {
                    pending.push_front(index);
                    continue;
                }
                if self.dispatch(id, index, &tasks[index], sigma, generation) {
                    made_progress = true;
                } else {
                    pending.push_front(index);
                }
            }
            if made_progress {
                last_progress = Instant::now();
            }

            if self.live_workers() == 0 {
                return Err(self.all_dead_error(done, tasks.len()));
            }
            // Live workers exist but none is serviceable and nothing is in
            // flight: re-send θ so they can join, and give up if that stalls.
            let any_inflight = self.slots.iter().any(|s| s.inflight.is_some());
            if !any_inflight && !pending.is_empty() {
                for id in 0..self.slots.len() {
                    let slot = &self.slots[id];
                    if slot.alive && slot.acked_version != Some(version) {
                        self.send_params(id, version, &policy);
                    }
                }
                if last_progress.elapsed() > self.config.ack_timeout {
                    return Err(self.all_dead_error(done, tasks.len()));
                }
            }

            let wait = self
                .slots
                .iter()
                .filter_map(|s| s.inflight.as_ref())
                .map(|f| f.deadline.saturating_duration_since(Instant::now()))
                .min()
                .unwrap_or(Duration::from_millis(10))
                .min(Duration::from_millis(200));

            match self.events.recv_timeout(wait) {
                Ok(Event::Message { worker, message }) => match message {
                    WireMessage::Result(result) => {
                        if result.generation != generation {
                            continue; // straggler answer for an old generation
                        }
                        let key = (result.seed, result.sign);
                        let Some(&index) = key_to_index.get(&key) else {
                            self.diagnostics.push(format!(
                                "worker {} answered an unknown task (seed {}, sign {})",
                                self.slots[worker].label, result.seed, result.sign
                            ));
                            continue;
                        };
                        if let Some(inflight) = self.slots[worker].inflight.take() {
                            if results[index].is_none() {
                                durations.push(inflight.dispatched.elapsed());
                            }
                        }
                        if !result.reward.is_finite() {
                            return Err(ProtocolError::Rollout(format!(
                                "worker {} returned a non-finite reward for seed {} sign {}",
                                self.slots[worker].label, result.seed, result.sign
                            )));
                        }
                        if results[index].is_none() {
                            results[index] = Some(EvalOutcome {
                                reward: result.reward,
                                env_steps: result.env_steps,
                            });
                            done += 1;
                            last_progress = Instant::now();
                        }
                        // Duplicates from reassignment races: first wins.
                    }
                    WireMessage::Stale { .. } => {
                        // Worker missed the broadcast; restore its task to
                        // the queue and bring it up to date.
                        if let Some(inflight) = self.slots[worker].inflight.take() {
                            if results[inflight.index].is_none() {
                                pending.push_front(inflight.index);
                            }
                        }
                        self.send_params(worker, version, &policy);
                    }
                    WireMessage::ParamsAck {
                        version: acked,
                        checksum: echoed,
                    } => {
                        let (_, _, checksum) =
                            self.last_broadcast.as_ref().expect("broadcast happened");
                        if acked == version && echoed == *checksum {
                            self.slots[worker].acked_version = Some(version);
                            last_progress = Instant::now();
                        } else if acked == version {
                            self.mark_dead(worker, "checksum mismatch on re-broadcast");
                        }
                    }
                    other => {
                        self.diagnostics.push(format!(
                            "ignoring unexpected message from {}: {other:?}",
                            self.slots[worker].label
                        ));
                    }
                },
                Ok(Event::Disconnected { worker, reason }) => {
                    self.mark_dead(worker, &reason);
                    if let Some(inflight) = self.slots[worker].inflight.take() {
                        if results[inflight.index].is_none() {
                            pending.push_front(inflight.index);
                        }
                    }
                }
                Ok(Event::NewRemote { stream, peer }) => self.register_remote(stream, peer),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ProtocolError::Handshake(
                        "event channel closed mid-generation".into(),
                    ))
                }
            }

            // Straggler scan: reassign expired tasks once; the slow worker
            // keeps computing and the first result to arrive wins.
            let now = Instant::now();
            for slot in &mut self.slots {
                if let Some(inflight) = &mut slot.inflight {
                    if !inflight.reassigned
                        && now >= inflight.deadline
                        && results[inflight.index].is_none()
                    {
                        inflight.reassigned = true;
                        pending.push_back(inflight.index);
                        self.diagnostics.push(format!(
                            "task {} on {} passed its deadline; reassigning",
                            inflight.index, slot.label
                        ));
                    }
                }
            }
        }

        durations.sort();
        if !durations.is_empty() {
            let mid = durations.len() / 2;
            let median = if durations.len() % 2 == 1 {
                durations[mid]
            } else {
                (durations[mid - 1] + durations[mid]) / 2
            };
            self.prev_median_task = Some(median);
        }
        Ok(results
            .into_iter()
            .map(|r| r.expect("loop exits only when every index is filled"))
            .collect())
    }

    fn all_dead_error(&self, completed: usize, total: usize) -> ProtocolError {
        ProtocolError::AllWorkersDead {
            completed,
            total,
            diagnostics: if self.diagnostics.is_empty() {
                "no worker diagnostics recorded".into()
            } else {
                self.diagnostics.join("; ")
            },
        }
    }

    /// Politely stop every worker. Also runs on drop.
    pub fn shutdown(&mut self) {
        for slot in &mut self.slots {
            if !slot.alive {
                continue;
            }
            match &mut slot.link {
                WorkerLink::Local(tx) => {
                    let _ = tx.send(LocalCommand::Shutdown);
                }
                WorkerLink::Remote(stream) => {
                    let _ = write_message(stream, &WireMessage::Shutdown);
                    let _ = stream.shutdown(std::net::Shutdown::Both);
                }
            }
            slot.alive = false;
        }
        self.listener_shutdown.store(true, Ordering::SeqCst);
        if let Some(addr) = self.listener_addr {
            // Wake the accept loop so it can observe the shutdown flag.
            let _ = TcpStream::connect(addr);
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl PopulationEvaluator for WorkerPool {
    fn evaluate(
        &mut self,
        theta: &ParameterVector,
        sigma: f64,
        tasks: &[MemberTask],
    ) -> Result<Vec<EvalOutcome>, EvalError> {
        let fail = |e: ProtocolError| EvalError {
            seed: None,
            message: e.to_string(),
        };
        self.broadcast(theta).map_err(fail)?;
        self.run_generation(sigma, tasks).map_err(fail)
    }
}

fn local_worker_loop(
    id: usize,
    spec: MlpSpec,
    env_config: EnvConfig,
    options: LocalWorkerOptions,
    rx: Receiver<LocalCommand>,
    events: Sender<Event>,
) {
    let mut runtime = match WorkerRuntime::new(spec, &env_config) {
        Ok(r) => r,
        Err(e) => {
            let _ = events.send(Event::Disconnected {
                worker: id,
                reason: format!("worker setup failed: {e}"),
            });
            return;
        }
    };
    let mut served = 0u64;
    for command in rx {
        match command {
            LocalCommand::Params { version, policy } => {
                match runtime.install_policy(version, &policy) {
                    Ok(checksum) => {
                        if events
                            .send(Event::Message {
                                worker: id,
                                message: WireMessage::ParamsAck { version, checksum },
                            })
                            .is_err()
                        {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = events.send(Event::Disconnected {
                            worker: id,
                            reason: format!("parameter install failed: {e}"),
                        });
                        return;
                    }
                }
            }
            LocalCommand::Task(task) => {
                if let Some(limit) = options.fail_after_tasks {
                    if served >= limit {
                        let _ = events.send(Event::Disconnected {
                            worker: id,
                            reason: "injected fault: worker halted".into(),
                        });
                        return;
                    }
                }
                if let Some(delay) = options.synthetic_delay {
                    thread::sleep(delay);
                }
                match runtime.evaluate_task(&task) {
                    Ok(results) => {
                        served += 1;
                        for result in results {
                            if events
                                .send(Event::Message {
                                    worker: id,
                                    message: WireMessage::Result(result),
                                })
                                .is_err()
                            {
                                return;
                            }
                        }
                    }
                    Err(ProtocolError::StaleParams {
                        held_version,
                        requested_version,
                    }) => {
                        if events
                            .send(Event::Message {
                                worker: id,
                                message: WireMessage::Stale {
                                    held_version: held_version.unwrap_or(0),
                                    requested_version,
                                },
                            })
                            .is_err()
                        {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = events.send(Event::Disconnected {
                            worker: id,
                            reason: format!("rollout failed: {e}"),
                        });
                        return;
                    }
                }
            }
            LocalCommand::Shutdown => return,
        }
    }
}

fn remote_reader_loop(id: usize, stream: TcpStream, events: Sender<Event>) {
    let mut reader = std::io::BufReader::new(stream);
    loop {
        match read_message(&mut reader) {
            Ok(Some(message)) => {
                if events.send(Event::Message { worker: id, message }).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = events.send(Event::Disconnected {
                    worker: id,
                    reason: "connection closed".into(),
                });
                return;
            }
            Err(e) => {
                let _ = events.send(Event::Disconnected {
                    worker: id,
                    reason: format!("read error: {e}"),
                });
                return;
            }
        }
    }
}

fn listener_loop(
    listener: TcpListener,
    spec: MlpSpec,
    env_config: EnvConfig,
    shutdown: Arc<AtomicBool>,
    events: Sender<Event>,
) {
    for stream in listener.incoming() {
        if shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = stream else { continue };
        let peer = stream
            .peer_addr()
            .map(|a| a.to_string())
            .unwrap_or_else(|_| "unknown".into());
        match handshake(&stream, &spec, &env_config) {
            Ok(()) => {
                stream.set_nodelay(true).ok();
                if events.send(Event::NewRemote { stream, peer }).is_err() {
                    return;
                }
            }
            Err(reason) => {
                let mut w = &stream;
                let _ = write_message(&mut w, &WireMessage::Reject { reason });
            }
        }
    }
}

/// Server side of the handshake: require a hello with our protocol version
/// and an identical environment, then send the policy spec.
fn handshake(stream: &TcpStream, spec: &MlpSpec, env_config: &EnvConfig) -> Result<(), String> {
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .map_err(|e| e.to_string())?;
    let mut reader = std::io::BufReader::new(stream.try_clone().map_err(|e| e.to_string())?);
    let hello = read_message(&mut reader).map_err(|e| format!("reading hello: {e}"))?;
    let outcome = match hello {
        Some(WireMessage::Hello { protocol, env }) => {
            if protocol != PROTOCOL_VERSION {
                Err(format!(
                    "protocol mismatch: coordinator speaks {PROTOCOL_VERSION}, worker speaks {protocol}"
                ))
            } else if &env != env_config {
                Err("environment mismatch: worker would run different dynamics".into())
            } else {
                Ok(())
            }
        }
        other => Err(format!("expected hello, got {other:?}")),
    };
    outcome?;
    stream.set_read_timeout(None).map_err(|e| e.to_string())?;
    let mut w = stream;
    write_message(
        &mut w,
        &WireMessage::Welcome {
            protocol: PROTOCOL_VERSION,
            spec: spec.clone(),
        },
    )
    .map_err(|e| format!("sending welcome: {e}"))?;
    Ok(())
}
