//! Client and server state machines, the slot assignment and ρ mapping,
//! and the audits over execution logs.
//!
//! The state machines own their state and expose transition methods; a
//! driver (the simulator) serializes events for each of them.

mod assignment;
mod audit;
mod client;
mod server;

use std::sync::Arc;

pub use assignment::{validate_probabilities, Assignment, PROBABILITY_SUM_TOLERANCE};
pub use audit::{
    audit_consistency, replay_audit, required_prefix, AuditReport, Auditor, ConsistencyViolation, Event,
    StepContents,
};
pub use client::{ClientState, DpConfig, Gate, NoiseSign, StepOutcome, StepRecord};
pub use server::{Applied, ServerState, ServerStep};

use crate::error::{Error, Result};
use crate::objective::{ModelVector, Objective};
use crate::rng::{stream, Purpose};
use crate::schedules::DelayFunction;

/// Update `(i, c, U)` sent by a client at the end of round i.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateMessage {
    pub round: usize,
    pub client: usize,
    pub update: ModelVector,
}

/// Global model `(v̂, k)` broadcast by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastMessage {
    pub model: ModelVector,
    pub k: usize,
}

/// Parameters shared by every participant.
#[derive(Clone, Debug)]
pub struct ProtocolContext {
    pub assignment: Assignment,
    /// Round step sizes η̄ᵢ, one per round of the assignment.
    pub steps: Vec<f64>,
    pub delay: DelayFunction,
    pub gate: Gate,
    pub dp: Option<DpConfig>,
    pub objective: Objective,
}

impl ProtocolContext {
    pub fn rounds(&self) -> usize {
        self.assignment.rounds()
    }

    pub fn clients(&self) -> usize {
        self.assignment.clients()
    }
}

/// Initial states of a run.
#[derive(Clone, Debug)]
pub struct Setup {
    pub context: Arc<ProtocolContext>,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

/// Creates the server and client states sharing `v̂₀ = 0`. Each client gets
/// its own sampling and noise streams derived from `seed`.
pub fn setup(context: ProtocolContext, seed: u64) -> Result<Setup> {
    if context.clients() == 0 {
        return Err(Error::Domain("at least one client is required".into()));
    }
    if context.steps.len() != context.rounds() {
        return Err(Error::Domain(format!(
            "{} step sizes for {} rounds",
            context.steps.len(),
            context.rounds()
        )));
    }
    let context = Arc::new(context);
    let v0 = ModelVector::zeros(context.objective.model_len());
    let clients = (0..context.clients())
        .map(|c| {
            ClientState::new(
                Arc::clone(&context),
                c,
                v0.clone(),
                stream(seed, Purpose::Sampling, c as u64),
                stream(seed, Purpose::Noise, c as u64),
            )
        })
        .collect();
    Ok(Setup {
        server: ServerState::new(context.clients(), v0),
        clients,
        context,
    })
}
