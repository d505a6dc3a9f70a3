//! Execution logs and the audits run over them: consistency of every local
//! model with the delay function, the per-step gate invariant, and exact
//! replay of the server model from the applied updates.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::client::Gate;
use crate::error::Result;
use crate::objective::ModelVector;
use crate::schedules::DelayFunction;

/// One record of an execution log. Times are virtual time units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// Run header.
    Start { clients: usize, model_len: usize, rounds: usize },
    /// A gradient step at global iteration `t` using the model of broadcast `k`.
    Step {
        time: u64,
        client: usize,
        round: usize,
        h: u64,
        t: u64,
        k: usize,
        t_glob: u64,
        t_delay: u64,
    },
    /// The gate was closed.
    Blocked { time: u64, client: usize, round: usize, h: u64 },
    /// A client finished a round and sent its update.
    Send { time: u64, client: usize, round: usize },
    /// The server applied an update: v̂ ← v̂ − η̄·U.
    Apply {
        time: u64,
        client: usize,
        round: usize,
        eta: f64,
        update: Vec<f64>,
    },
    /// The server broadcast model k; `pending` lists processed
    /// (round, client) pairs of rounds ≥ k already folded into the model.
    Broadcast {
        time: u64,
        k: usize,
        pending: Vec<(usize, usize)>,
        model: Vec<f64>,
    },
    /// A client accepted broadcast k.
    Accept { time: u64, client: usize, k: usize },
}

/// Update indices contained in the local model used at global iteration t:
/// every index below `prefix` plus the listed `extra` indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepContents {
    pub t: u64,
    pub prefix: u64,
    pub extra: Vec<u64>,
}

/// First step whose model misses an index the delay function requires.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsistencyViolation {
    pub t: u64,
    /// The model must contain every index below `required`.
    pub required: u64,
    /// Smallest index that is absent.
    pub missing: u64,
}

impl fmt::Display for ConsistencyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step t = {} misses update {} (needs all updates below {})",
            self.t, self.missing, self.required
        )
    }
}

/// Number of leading update indices `{0, …, t−τ(t)−1}` that iteration t must see.
pub fn required_prefix(delay: &DelayFunction, t: u64) -> Result<u64> {
    let lag = t as f64 - delay.eval(t as f64)?;
    Ok(if lag > 0.0 { lag.floor() as u64 } else { 0 })
}

/// Checks `{0, …, t−τ(t)−1} ⊆ 𝒰(t)` for every record; returns the first
/// violation, if any.
pub fn audit_consistency(records: &[StepContents], delay: &DelayFunction) -> Result<Option<ConsistencyViolation>> {
    for rec in records {
        let required = required_prefix(delay, rec.t)?;
        let extra: HashSet<u64> = rec.extra.iter().copied().collect();
        let mut mex = rec.prefix;
        while mex < required && extra.contains(&mex) {
            mex += 1;
        }
        if mex < required {
            return Ok(Some(ConsistencyViolation {
                t: rec.t,
                required,
                missing: mex,
            }));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, Default)]
struct LocalView {
    prefix: u64,
    extra: HashSet<u64>,
    mex: u64,
    round: usize,
    round_steps: Vec<u64>,
}

impl LocalView {
    fn reset(&mut self, prefix: u64, extra: impl IntoIterator<Item = u64>) {
        self.prefix = prefix;
        self.extra = extra.into_iter().filter(|&t| t >= prefix).collect();
        self.extra.extend(self.round_steps.iter().copied().filter(|&t| t >= prefix));
        self.mex = prefix;
        self.advance();
    }

    fn advance(&mut self) {
        while self.extra.remove(&self.mex) {
            self.mex += 1;
        }
    }

    fn add(&mut self, t: u64) {
        if t >= self.mex {
            self.extra.insert(t);
            self.advance();
        }
    }
}

/// Audit outcome.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AuditReport {
    pub steps_checked: u64,
    pub broadcasts_checked: u64,
    pub updates_replayed: u64,
    pub violation: Option<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.violation {
            None => write!(
                f,
                "audit passed: {} steps consistent, {} updates replayed, {} broadcasts matched",
                self.steps_checked, self.updates_replayed, self.broadcasts_checked
            ),
            Some(v) => write!(f, "audit failed: {v}"),
        }
    }
}

/// Incremental auditor fed with [`Event`]s in log order. It tracks which
/// update indices each client's local model contains, checks consistency
/// and (optionally) the gate invariant at every step, and replays the
/// server model exactly.
#[derive(Clone, Debug)]
pub struct Auditor {
    delay: DelayFunction,
    gate: Option<Gate>,
    views: Vec<LocalView>,
    /// Step indices per (round, client).
    pair_steps: HashMap<(usize, usize), Vec<u64>>,
    /// Steps executed per round.
    round_counts: Vec<u64>,
    /// (prefix, extra) contents of every broadcast model.
    broadcasts: HashMap<usize, (u64, Vec<u64>)>,
    replay: Option<ModelVector>,
    report: AuditReport,
}

impl Auditor {
    pub fn new(delay: DelayFunction, gate: Option<Gate>) -> Self {
        Auditor {
            delay,
            gate,
            views: Vec::new(),
            pair_steps: HashMap::new(),
            round_counts: Vec::new(),
            broadcasts: HashMap::new(),
            replay: None,
            report: AuditReport::default(),
        }
    }

    pub fn report(&self) -> &AuditReport {
        &self.report
    }

    /// Final server model according to the replay.
    pub fn replayed_model(&self) -> Option<&ModelVector> {
        self.replay.as_ref()
    }

    fn fail(&mut self, message: String) -> Option<String> {
        self.report.violation = Some(message.clone());
        Some(message)
    }

    /// Feeds one event; returns a description of the first violation.
    /// After a violation further events are ignored.
    pub fn observe(&mut self, event: &Event) -> Result<Option<String>> {
        if self.report.violation.is_some() {
            return Ok(None);
        }
        match event {
            Event::Start { clients, model_len, .. } => {
                self.views = vec![LocalView::default(); *clients];
                self.replay = Some(ModelVector::zeros(*model_len));
            }
            Event::Step {
                client,
                round,
                t,
                k,
                t_glob,
                t_delay,
                ..
            } => {
                let (client, round, t) = (*client, *round, *t);
                if let Some(gate) = self.gate {
                    let ok = match gate {
                        Gate::ExactDelay => (*t_delay as f64) <= self.delay.eval(*t_glob as f64)?,
                        Gate::RoundLag(d) => round <= k + d as usize,
                    };
                    if !ok {
                        return Ok(self.fail(format!(
                            "gate invariant broken at t = {t}: client {client}, round {round}, k = {k}, \
                             t_glob = {t_glob}, t_delay = {t_delay}"
                        )));
                    }
                }
                let required = required_prefix(&self.delay, t)?;
                let view = self.view(client);
                if view.round != round {
                    view.round = round;
                    view.round_steps.clear();
                }
                if view.mex < required {
                    let v = ConsistencyViolation {
                        t,
                        required,
                        missing: view.mex,
                    };
                    return Ok(self.fail(format!("client {client}: {v}")));
                }
                view.add(t);
                view.round_steps.push(t);
                self.pair_steps.entry((round, client)).or_default().push(t);
                if self.round_counts.len() <= round {
                    self.round_counts.resize(round + 1, 0);
                }
                self.round_counts[round] += 1;
                self.report.steps_checked += 1;
            }
            Event::Send { client, round, .. } => {
                let view = self.view(*client);
                view.round = round + 1;
                view.round_steps.clear();
            }
            Event::Apply { eta, update, .. } => {
                let model = self.replay.get_or_insert_with(|| ModelVector::zeros(update.len()));
                model.sub_scaled(*eta, &ModelVector(update.clone()));
                self.report.updates_replayed += 1;
            }
            Event::Broadcast { k, pending, model, .. } => {
                if let Some(replayed) = &self.replay {
                    let same = replayed.0.len() == model.len()
                        && replayed.0.iter().zip(model).all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        return Ok(self.fail(format!(
                            "broadcast {k}: server model differs from the replay of applied updates"
                        )));
                    }
                }
                let prefix = self.round_counts.iter().take(*k).sum();
                let extra = pending
                    .iter()
                    .flat_map(|pair| self.pair_steps.get(pair).into_iter().flatten().copied())
                    .collect();
                self.broadcasts.insert(*k, (prefix, extra));
                self.report.broadcasts_checked += 1;
            }
            Event::Accept { client, k, .. } => {
                let Some((prefix, extra)) = self.broadcasts.get(k).cloned() else {
                    return Ok(self.fail(format!("client {client} accepted unknown broadcast {k}")));
                };
                self.view(*client).reset(prefix, extra);
            }
            Event::Blocked { .. } => {}
        }
        Ok(None)
    }

    fn view(&mut self, client: usize) -> &mut LocalView {
        if self.views.len() <= client {
            self.views.resize(client + 1, LocalView::default());
        }
        &mut self.views[client]
    }

    /// Compares the replayed model with a final server model.
    pub fn check_final(&mut self, model: &ModelVector) -> Option<String> {
        let same = self
            .replay
            .as_ref()
            .is_some_and(|r| r.0.iter().zip(&model.0).all(|(a, b)| a.to_bits() == b.to_bits()));
        if same || self.report.violation.is_some() {
            None
        } else {
            self.fail("final server model differs from the replay of applied updates".into())
        }
    }
}

/// Runs an [`Auditor`] over a complete log.
pub fn replay_audit(events: &[Event], delay: &DelayFunction, gate: Option<Gate>) -> Result<AuditReport> {
    let mut auditor = Auditor::new(delay.clone(), gate);
    for e in events {
        if auditor.observe(e)?.is_some() {
            break;
        }
    }
    Ok(auditor.report().clone())
}
