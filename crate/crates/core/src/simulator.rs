//! Deterministic discrete-event driver for the protocol state machines.
//!
//! Virtual time: one gradient step costs one time unit, network latencies
//! are integers in the same unit, and a blocked client consumes no time
//! until the next broadcast reaches it. Events with equal time are ordered
//! by (class, sender, send sequence), where the classes run server
//! delivery, server processing, client delivery, client computation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objective::{Dataset, ModelVector, Objective};
use crate::protocol::{
    setup, Assignment, AuditReport, Auditor, BroadcastMessage, DpConfig, Event, Gate, ProtocolContext,
    StepOutcome, UpdateMessage,
};
use crate::rng::{stream, Purpose};
use crate::schedules::{DelayFunction, SampleSchedule, StepSchedule};

/// Latency law of one link direction.
#[derive(Clone, Debug, PartialEq)]
pub enum Latency {
    Fixed(u64),
    /// Uniform integer latency in `[lo, hi]`.
    Uniform { lo: u64, hi: u64 },
    /// Fixed latency per client.
    PerClient(Vec<u64>),
}

impl Latency {
    fn validate(&self, clients: usize) -> Result<()> {
        match self {
            Latency::Uniform { lo, hi } if lo > hi => {
                Err(Error::Domain(format!("uniform latency needs lo ≤ hi, got [{lo}, {hi}]")))
            }
            Latency::PerClient(table) if table.len() != clients => Err(Error::Domain(format!(
                "per-client latency table has {} entries for {clients} clients",
                table.len()
            ))),
            _ => Ok(()),
        }
    }

    fn draw(&self, client: usize, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Latency::Fixed(l) => *l,
            Latency::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            Latency::PerClient(table) => table[client],
        }
    }
}

/// Latencies of client→server (`uplink`) and server→client (`downlink`)
/// messages. Messages are never lost; delivery time alone decides order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub uplink: Latency,
    pub downlink: Latency,
}

impl NetworkModel {
    /// Zero latency in both directions.
    pub fn instant() -> Self {
        NetworkModel {
            uplink: Latency::Fixed(0),
            downlink: Latency::Fixed(0),
        }
    }
}

/// How the slots of every round are given to clients.
#[derive(Clone, Debug)]
pub enum Allocation {
    /// Each slot of `samples` goes to client c with probability `p[c]`.
    Random { samples: SampleSchedule, p: Vec<f64> },
    /// Prescribed sizes `sizes[i][c] = s_{i,c}`.
    PerClient(Vec<Vec<u64>>),
}

/// Everything a run needs.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub label: String,
    /// Training data of each client.
    pub train: Arc<Vec<Dataset>>,
    pub test: Arc<Dataset>,
    pub objective: Objective,
    pub allocation: Allocation,
    pub steps: StepSchedule,
    pub delay: DelayFunction,
    pub gate: Gate,
    pub dp: Option<DpConfig>,
    pub network: NetworkModel,
    pub seed: u64,
    /// Gradient budget K the schedule was built for.
    pub budget: u64,
    /// Run the consistency, gate and replay audits online.
    pub audit: bool,
    /// Keep the full event log in the output.
    pub log_events: bool,
    /// Evaluate losses every this many broadcasts (the final one is always
    /// evaluated).
    pub eval_every: usize,
}

/// One evaluated broadcast. Counters are cumulative.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// Broadcast counter k; record 0 is the initial model.
    pub round: usize,
    pub time: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub accuracy: f64,
    pub model_norm: f64,
    /// Client updates sent plus broadcast deliveries (one per client).
    pub messages: u64,
    pub scalars_sent: u64,
    pub noise_draws: u64,
}

/// Whole-run statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub label: String,
    /// Number of rounds T.
    pub rounds: usize,
    /// Gradient steps executed.
    pub total_steps: u64,
    pub budget: u64,
    /// Global sample sizes sᵢ.
    pub sizes: Vec<u64>,
    pub blocked_steps: u64,
    /// √T·σ·C, or 0 without DP.
    pub aggregated_noise: f64,
    pub final_time: u64,
    /// Client updates sent plus broadcast deliveries (one per client).
    pub messages: u64,
    pub noise_draws_per_client: Vec<u64>,
    pub audit: Option<AuditReport>,
}

/// Per-broadcast records plus the run summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTrace {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// CSV header of [`MetricsTrace::to_csv`].
pub const CSV_HEADER: &str = "round,time,train_loss,test_loss,accuracy,model_norm,messages,scalars_sent,noise_draws";

/// Formats a real with 15 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.14e}")
}

impl MetricsTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.round,
                r.time,
                fmt_real(r.train_loss),
                fmt_real(r.test_loss),
                fmt_real(r.accuracy),
                fmt_real(r.model_norm),
                r.messages,
                r.scalars_sent,
                r.noise_draws
            );
        }
        out
    }

    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("a trace holds the initial record")
    }
}

impl RunSummary {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "label = {}", self.label);
        let _ = writeln!(out, "rounds = {}", self.rounds);
        let _ = writeln!(out, "total_steps = {}", self.total_steps);
        let _ = writeln!(out, "budget = {}", self.budget);
        let _ = writeln!(out, "blocked_steps = {}", self.blocked_steps);
        let _ = writeln!(out, "aggregated_noise = {}", fmt_real(self.aggregated_noise));
        let _ = writeln!(out, "final_time = {}", self.final_time);
        let _ = writeln!(out, "messages = {}", self.messages);
        let draws: Vec<String> = self.noise_draws_per_client.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "noise_draws_per_client = {}", draws.join(","));
        if let Some(audit) = &self.audit {
            let _ = writeln!(out, "audit = {audit}");
        }
        out
    }
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: MetricsTrace,
    /// Full event log when `log_events` was set.
    pub events: Vec<Event>,
    pub final_model: ModelVector,
    pub assignment: Assignment,
}

/// Writes events as newline-delimited JSON.
pub fn events_to_ndjson(events: &[Event]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        let line = serde_json::to_string(e).map_err(|err| Error::Domain(format!("event encoding: {err}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parses newline-delimited JSON events; blank lines are skipped.
pub fn events_from_ndjson(text: &str, path: &std::path::Path) -> Result<Vec<Event>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

enum Action {
    ServerReceive(UpdateMessage),
    ServerProcess,
    ClientReceive(usize, Arc<BroadcastMessage>),
    ClientCompute(usize),
}

impl Action {
    fn class(&self) -> u8 {
        match self {
            Action::ServerReceive(_) => 0,
            Action::ServerProcess => 1,
            Action::ClientReceive(..) => 2,
            Action::ClientCompute(_) => 3,
        }
    }
}

struct Scheduled {
    key: (u64, u8, usize, u64),
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    /// Reversed so that `BinaryHeap` pops the earliest key.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.cmp(&self.key)
    }
}

struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time: u64, sender: usize, action: Action) {
        self.seq += 1;
        self.heap.push(Scheduled {
            key: (time, action.class(), sender, self.seq),
            action,
        });
    }
}

/// Receives every event of a run: feeds the online auditor and keeps the log.
struct Recorder {
    auditor: Option<Auditor>,
    log: Option<Vec<Event>>,
}

impl Recorder {
    fn wants_events(&self) -> bool {
        self.auditor.is_some() || self.log.is_some()
    }

    fn emit(&mut self, event: Event) -> Result<()> {
        if let Some(auditor) = &mut self.auditor {
            if let Some(violation) = auditor.observe(&event)? {
                return Err(Error::Audit(format!("{violation}; event: {event:?}")));
            }
        }
        if let Some(log) = &mut self.log {
            log.push(event);
        }
        Ok(())
    }
}

fn build_assignment(config: &SimConfig) -> Result<Assignment> {
    let mut rng = stream(config.seed, Purpose::Assignment, 0);
    match &config.allocation {
        Allocation::Random { samples, p } => Assignment::draw(samples, p, &mut rng),
        Allocation::PerClient(sizes) => Assignment::from_client_sizes(sizes, &mut rng),
    }
}

struct Evaluator {
    objective: Objective,
    train: Dataset,
    test: Arc<Dataset>,
}

impl Evaluator {
    fn record(&self, round: usize, time: u64, model: &ModelVector, counters: (u64, u64, u64)) -> Result<RoundRecord> {
        let (messages, scalars_sent, noise_draws) = counters;
        Ok(RoundRecord {
            round,
            time,
            train_loss: self.objective.loss(model, &self.train)?,
            test_loss: self.objective.loss(model, &self.test)?,
            accuracy: self.objective.accuracy(model, &self.test)?,
            model_norm: model.norm(),
            messages,
            scalars_sent,
            noise_draws,
        })
    }
}

/// Runs the protocol to completion.
///
/// Fails with a validation error before the first event, with
/// [`Error::Audit`] on the first audit violation, and with
/// [`Error::Protocol`] if the run stalls before every round is broadcast.
pub fn run(config: &SimConfig) -> Result<RunOutput> {
    let assignment = build_assignment(config)?;
    let clients = assignment.clients();
    if config.train.len() != clients {
        return Err(Error::Domain(format!(
            "{} client datasets for {clients} clients",
            config.train.len()
        )));
    }
    config.network.uplink.validate(clients)?;
    config.network.downlink.validate(clients)?;
    let samples = assignment.samples().clone();
    let steps = config.steps.round_steps(&samples)?;
    config.steps.validate(&samples)?;
    let context = ProtocolContext {
        assignment: assignment.clone(),
        steps: steps.clone(),
        delay: config.delay.clone(),
        gate: config.gate,
        dp: config.dp,
        objective: config.objective,
    };
    let mut state = setup(context, config.seed)?;
    let rounds = samples.rounds();
    let model_len = config.objective.model_len() as u64;
    let eval_every = config.eval_every.max(1);
    let evaluator = Evaluator {
        objective: config.objective,
        train: Dataset::union(&config.train)?.widened(config.objective.dimension())?,
        test: Arc::clone(&config.test),
    };
    let mut latency_rng = stream(config.seed, Purpose::Latency, 0);
    let mut recorder = Recorder {
        auditor: config.audit.then(|| Auditor::new(config.delay.clone(), Some(config.gate))),
        log: config.log_events.then(Vec::new),
    };
    recorder.emit(Event::Start {
        clients,
        model_len: model_len as usize,
        rounds,
    })?;

    let mut queue = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    let server_id = clients;
    for c in 0..clients {
        queue.push(0, c, Action::ClientCompute(c));
    }
    let mut blocked = vec![false; clients];
    let mut process_scheduled = false;
    let mut messages = 0u64;
    let mut blocked_steps = 0u64;
    let mut now = 0u64;
    let noise_total = |s: &crate::protocol::Setup| s.clients.iter().map(|c| c.noise_draws()).sum::<u64>();
    let mut records = vec![evaluator.record(0, 0, state.server.model(), (0, 0, 0))?];

    while let Some(Scheduled { key, action }) = queue.heap.pop() {
        now = key.0;
        match action {
            Action::ClientCompute(c) => match state.clients[c].step(&config.train[c])? {
                StepOutcome::Progress { step, message } => {
                    let mut done_at = now;
                    if let Some(rec) = step {
                        done_at = now + 1;
                        if recorder.wants_events() {
                            let t = assignment.rho(c, rec.round, rec.h)?;
                            recorder.emit(Event::Step {
                                time: now,
                                client: c,
                                round: rec.round,
                                h: rec.h,
                                t,
                                k: rec.k,
                                t_glob: rec.t_glob,
                                t_delay: rec.t_delay,
                            })?;
                        }
                    }
                    if let Some(msg) = message {
                        if recorder.wants_events() {
                            recorder.emit(Event::Send {
                                time: done_at,
                                client: c,
                                round: msg.round,
                            })?;
                        }
                        messages += 1;
                        let arrival = done_at + config.network.uplink.draw(c, &mut latency_rng);
                        queue.push(arrival, c, Action::ServerReceive(msg));
                    }
                    if !state.clients[c].is_terminated() {
                        queue.push(done_at, c, Action::ClientCompute(c));
                    }
                }
                StepOutcome::Blocked { .. } => {
                    blocked[c] = true;
                    blocked_steps += 1;
                    if recorder.wants_events() {
                        let client = &state.clients[c];
                        recorder.emit(Event::Blocked {
                            time: now,
                            client: c,
                            round: client.round(),
                            h: client.h(),
                        })?;
                    }
                }
                StepOutcome::Terminated => {}
            },
            Action::ClientReceive(c, msg) => {
                if state.clients[c].receive(&msg) && recorder.wants_events() {
                    recorder.emit(Event::Accept {
                        time: now,
                        client: c,
                        k: msg.k,
                    })?;
                }
                if blocked[c] {
                    blocked[c] = false;
                    queue.push(now, c, Action::ClientCompute(c));
                }
            }
            Action::ServerReceive(msg) => {
                state.server.receive(msg)?;
                if !process_scheduled {
                    process_scheduled = true;
                    queue.push(now, server_id, Action::ServerProcess);
                }
            }
            Action::ServerProcess => {
                process_scheduled = false;
                if let Some(out) = state.server.step(&steps)? {
                    if recorder.wants_events() {
                        recorder.emit(Event::Apply {
                            time: now,
                            client: out.applied.client,
                            round: out.applied.round,
                            eta: out.applied.eta,
                            update: out.update.0,
                        })?;
                    }
                    if let Some(b) = out.broadcast {
                        if recorder.wants_events() {
                            recorder.emit(Event::Broadcast {
                                time: now,
                                k: b.k,
                                pending: state.server.pending().iter().copied().collect(),
                                model: b.model.0.clone(),
                            })?;
                        }
                        messages += clients as u64;
                        if b.k % eval_every == 0 || b.k == rounds {
                            let counters = (messages, messages * model_len, noise_total(&state));
                            records.push(evaluator.record(b.k, now, &b.model, counters)?);
                        }
                        let b = Arc::new(b);
                        for c in 0..clients {
                            let arrival = now + config.network.downlink.draw(c, &mut latency_rng);
                            queue.push(arrival, server_id, Action::ClientReceive(c, Arc::clone(&b)));
                        }
                    }
                }
                if state.server.queue_len() > 0 {
                    process_scheduled = true;
                    queue.push(now, server_id, Action::ServerProcess);
                }
            }
        }
    }

    let unfinished: Vec<usize> = (0..clients).filter(|&c| !state.clients[c].is_terminated()).collect();
    if !unfinished.is_empty() || state.server.k() != rounds {
        return Err(Error::Protocol(format!(
            "run stalled at time {now}: server at round {} of {rounds}, unfinished clients {unfinished:?}",
            state.server.k()
        )));
    }
    let total_steps: u64 = state.clients.iter().map(|c| c.steps_executed()).sum();
    if total_steps != samples.total() {
        return Err(Error::Protocol(format!(
            "executed {total_steps} gradient steps, the assignment holds {}",
            samples.total()
        )));
    }
    let audit = match &mut recorder.auditor {
        Some(auditor) => {
            if let Some(violation) = auditor.check_final(state.server.model()) {
                return Err(Error::Audit(violation));
            }
            Some(auditor.report().clone())
        }
        None => None,
    };
    let aggregated_noise = match &config.dp {
        Some(dp) => (rounds as f64).sqrt() * dp.noise_std(),
        None => 0.0,
    };
    let summary = RunSummary {
        label: config.label.clone(),
        rounds,
        total_steps,
        budget: config.budget,
        sizes: samples.sizes().to_vec(),
        blocked_steps,
        aggregated_noise,
        final_time: now,
        messages,
        noise_draws_per_client: state.clients.iter().map(|c| c.noise_draws()).collect(),
        audit,
    };
    Ok(RunOutput {
        trace: MetricsTrace { records, summary },
        events: recorder.log.unwrap_or_default(),
        final_model: state.server.model().clone(),
        assignment,
    })
}

/// One row of [`compare_runs`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub messages: u64,
    pub aggregated_noise: f64,
}

/// Runs every configuration; all must declare the same budget K.
pub fn compare_runs(configs: &[SimConfig]) -> Result<Vec<ComparisonRow>> {
    if let Some(first) = configs.first() {
        let mismatched: Vec<String> = configs
            .iter()
            .filter(|c| c.budget != first.budget)
            .map(|c| format!("{} has K = {}, {} has K = {}", c.label, c.budget, first.label, first.budget))
            .collect();
        if !mismatched.is_empty() {
            return Err(Error::Validation(mismatched));
        }
    }
    configs
        .iter()
        .map(|config| {
            let out = run(config)?;
            let last = out.trace.final_record();
            Ok(ComparisonRow {
                label: config.label.clone(),
                rounds: out.trace.summary.rounds,
                final_accuracy: last.accuracy,
                final_loss: last.train_loss,
                messages: out.trace.summary.messages,
                aggregated_noise: out.trace.summary.aggregated_noise,
            })
        })
        .collect()
}

/// Renders comparison rows as CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("label,rounds,final_accuracy,final_loss,messages,aggregated_noise\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.label,
            r.rounds,
            fmt_real(r.final_accuracy),
            fmt_real(r.final_loss),
            r.messages,
            fmt_real(r.aggregated_noise)
        );
    }
    out
}
