//! Server state machine: queues client updates, applies them to the global
//! model and broadcasts once every client's update for the oldest open
//! round has been applied.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use super::{BroadcastMessage, UpdateMessage};
use crate::error::{Error, Result};
use crate::objective::ModelVector;

/// One processed update, reported by [`ServerState::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Applied {
    pub round: usize,
    pub client: usize,
    pub eta: f64,
}

/// Result of one [`ServerState::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct ServerStep {
    pub applied: Applied,
    /// The update that was applied.
    pub update: ModelVector,
    pub broadcast: Option<BroadcastMessage>,
}

/// State of the server.
#[derive(Clone, Debug)]
pub struct ServerState {
    clients: usize,
    v_hat: ModelVector,
    k: usize,
    queue: VecDeque<UpdateMessage>,
    /// Processed (round, client) pairs not yet covered by a broadcast.
    pending: BTreeSet<(usize, usize)>,
    /// Number of pending clients per round.
    pending_per_round: BTreeMap<usize, usize>,
    received: HashSet<(usize, usize)>,
}

impl ServerState {
    pub fn new(clients: usize, v0: ModelVector) -> Self {
        ServerState {
            clients,
            v_hat: v0,
            k: 0,
            queue: VecDeque::new(),
            pending: BTreeSet::new(),
            pending_per_round: BTreeMap::new(),
            received: HashSet::new(),
        }
    }

    /// Global model v̂.
    pub fn model(&self) -> &ModelVector {
        &self.v_hat
    }

    /// Broadcast counter k.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Processed (round, client) pairs not yet covered by a broadcast.
    pub fn pending(&self) -> &BTreeSet<(usize, usize)> {
        &self.pending
    }

    /// Enqueues a client update. Delivering the same (round, client) pair
    /// twice is a protocol violation.
    pub fn receive(&mut self, msg: UpdateMessage) -> Result<()> {
        if msg.client >= self.clients {
            return Err(Error::Protocol(format!("update from unknown client {}", msg.client)));
        }
        if !self.received.insert((msg.round, msg.client)) {
            return Err(Error::Protocol(format!(
                "duplicate update for round {} from client {}",
                msg.round, msg.client
            )));
        }
        self.queue.push_back(msg);
        Ok(())
    }

    /// Processes the oldest queued update: `v̂ ← v̂ − η̄ᵢ·U`. When every
    /// client's update for round k has been applied, k advances (repeatedly,
    /// if later rounds are also complete) and the new model is broadcast.
    /// Returns `None` when the queue is empty.
    pub fn step(&mut self, steps: &[f64]) -> Result<Option<ServerStep>> {
        let Some(msg) = self.queue.pop_front() else {
            return Ok(None);
        };
        let eta = *steps.get(msg.round).ok_or_else(|| {
            Error::Protocol(format!("update for round {} beyond the schedule", msg.round))
        })?;
        self.v_hat.sub_scaled(eta, &msg.update);
        self.pending.insert((msg.round, msg.client));
        *self.pending_per_round.entry(msg.round).or_insert(0) += 1;

        let mut advanced = false;
        while self.pending_per_round.get(&self.k) == Some(&self.clients) {
            self.pending_per_round.remove(&self.k);
            for c in 0..self.clients {
                self.pending.remove(&(self.k, c));
            }
            self.k += 1;
            advanced = true;
        }
        let broadcast = advanced.then(|| BroadcastMessage {
            model: self.v_hat.clone(),
            k: self.k,
        });
        Ok(Some(ServerStep {
            update: msg.update,
            applied: Applied {
                round: msg.round,
                client: msg.client,
                eta,
            },
            broadcast,
        }))
    }
}
