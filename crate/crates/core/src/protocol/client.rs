//! Client state machine: local SGD rounds, the delay gate, optional
//! clipping and Gaussian noise, and acceptance of fresher broadcasts.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BroadcastMessage, ProtocolContext, UpdateMessage};
use crate::error::{Error, Result};
use crate::objective::{clip_in_place, Dataset, ModelVector};

/// Wait condition applied before every gradient step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    /// Block while τ(t_glob) ≤ t_delay.
    ExactDelay,
    /// Block while the round index runs more than `d` rounds ahead of the
    /// newest accepted broadcast (i − k > d).
    RoundLag(u32),
}

/// Sign applied to the noise when it is folded into the local model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseSign {
    /// ŵ ← ŵ + η̄ᵢ·n while the server subtracts η̄ᵢ·U with U containing +n.
    #[default]
    AsPrinted,
    /// ŵ ← ŵ − η̄ᵢ·n, matching the server.
    Symmetric,
}

/// Differential-privacy settings of the clients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpConfig {
    /// Clipping norm C (may be +∞).
    pub clip: f64,
    /// Noise multiplier σ; the noise has standard deviation C·σ.
    pub sigma: f64,
    pub noise_sign: NoiseSign,
}

impl DpConfig {
    /// Per-coordinate standard deviation C·σ, taken as 0 when σ = 0.
    pub fn noise_std(&self) -> f64 {
        if self.sigma == 0.0 {
            0.0
        } else {
            self.clip * self.sigma
        }
    }
}

/// One executed gradient step, as seen by the client.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub client: usize,
    pub round: usize,
    pub h: u64,
    /// Broadcast counter of the model the step used.
    pub k: usize,
    pub t_glob: u64,
    pub t_delay: u64,
}

/// Result of [`ClientState::step`].
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// A gradient step ran (if `step` is set) and/or a round finished (if
    /// `message` is set). A round with zero assigned samples finishes
    /// without a step.
    Progress {
        step: Option<StepRecord>,
        message: Option<UpdateMessage>,
    },
    /// The gate is closed; nothing changed.
    Blocked { t_glob: u64, t_delay: u64 },
    /// All rounds are done.
    Terminated,
}

/// State of one client.
#[derive(Clone, Debug)]
pub struct ClientState {
    ctx: Arc<ProtocolContext>,
    id: usize,
    round: usize,
    h: u64,
    k_old: usize,
    w_hat: ModelVector,
    update: ModelVector,
    gradient: ModelVector,
    sampling: ChaCha8Rng,
    noise: ChaCha8Rng,
    noise_draws: u64,
    steps: u64,
}

impl ClientState {
    pub fn new(ctx: Arc<ProtocolContext>, id: usize, v0: ModelVector, sampling: ChaCha8Rng, noise: ChaCha8Rng) -> Self {
        let len = v0.len();
        ClientState {
            ctx,
            id,
            round: 0,
            h: 0,
            k_old: 0,
            w_hat: v0,
            update: ModelVector::zeros(len),
            gradient: ModelVector::zeros(len),
            sampling,
            noise,
            noise_draws: 0,
            steps: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn h(&self) -> u64 {
        self.h
    }

    /// Counter of the newest accepted broadcast.
    pub fn k_old(&self) -> usize {
        self.k_old
    }

    /// Local model ŵ.
    pub fn model(&self) -> &ModelVector {
        &self.w_hat
    }

    /// Running update U of the current round.
    pub fn pending_update(&self) -> &ModelVector {
        &self.update
    }

    pub fn noise_draws(&self) -> u64 {
        self.noise_draws
    }

    pub fn steps_executed(&self) -> u64 {
        self.steps
    }

    pub fn is_terminated(&self) -> bool {
        self.round >= self.ctx.rounds()
    }

    /// `(t_glob, t_delay)` for the next step of the current round:
    /// `t_glob = Σ_{j≤i} s_j − (s_{i,c} − h) − 1`,
    /// `t_delay = Σ_{j=k}^{i} s_j − (s_{i,c} − h)`.
    ///
    /// `t_glob` is clamped at 0: a client owning every slot of round 0
    /// would otherwise start at −1.
    pub fn delay_indices(&self) -> (u64, u64) {
        let samples = self.ctx.assignment.samples();
        let remaining = self.ctx.assignment.client_size(self.round, self.id) - self.h;
        let through = samples.cumulative(self.round);
        let t_glob = (through - remaining).saturating_sub(1);
        let t_delay = through - samples.prefix(self.k_old.min(self.round)) - remaining;
        (t_glob, t_delay)
    }

    fn gate_open(&self, t_glob: u64, t_delay: u64) -> Result<bool> {
        Ok(match self.ctx.gate {
            Gate::ExactDelay => self.ctx.delay.eval(t_glob as f64)? > t_delay as f64,
            Gate::RoundLag(d) => self.round <= self.k_old + d as usize,
        })
    }

    /// Handles a broadcast: a message fresher than the last accepted one
    /// replaces ŵ by `v̂ − η̄ᵢ·U`; stale messages are ignored. Returns whether
    /// the message was accepted.
    pub fn receive(&mut self, msg: &BroadcastMessage) -> bool {
        if msg.k <= self.k_old {
            return false;
        }
        let mut w = msg.model.clone();
        if !self.is_terminated() {
            w.sub_scaled(self.ctx.steps[self.round], &self.update);
        }
        self.w_hat = w;
        self.k_old = msg.k;
        true
    }

    /// Attempts one gradient step on `data`.
    pub fn step(&mut self, data: &Dataset) -> Result<StepOutcome> {
        if self.is_terminated() {
            return Ok(StepOutcome::Terminated);
        }
        let size = self.ctx.assignment.client_size(self.round, self.id);
        if size == 0 {
            let message = self.finish_round()?;
            return Ok(StepOutcome::Progress {
                step: None,
                message: Some(message),
            });
        }
        let (t_glob, t_delay) = self.delay_indices();
        if !self.gate_open(t_glob, t_delay)? {
            return Ok(StepOutcome::Blocked { t_glob, t_delay });
        }
        if data.is_empty() {
            return Err(Error::Domain(format!("client {} has no training data", self.id)));
        }
        let record = StepRecord {
            client: self.id,
            round: self.round,
            h: self.h,
            k: self.k_old,
            t_glob,
            t_delay,
        };
        let idx = self.sampling.random_range(0..data.len());
        let example = &data.examples()[idx];
        self.ctx.objective.grad_into(&self.w_hat, example, &mut self.gradient);
        if let Some(dp) = &self.ctx.dp {
            clip_in_place(&mut self.gradient, dp.clip);
        }
        let eta = self.ctx.steps[self.round];
        self.update.add_assign(&self.gradient);
        self.w_hat.sub_scaled(eta, &self.gradient);
        self.h += 1;
        self.steps += 1;
        let message = if self.h == size {
            Some(self.finish_round()?)
        } else {
            None
        };
        Ok(StepOutcome::Progress {
            step: Some(record),
            message,
        })
    }

    fn finish_round(&mut self) -> Result<UpdateMessage> {
        let eta = self.ctx.steps[self.round];
        if let Some(dp) = &self.ctx.dp {
            let normal = Normal::new(0.0, dp.noise_std())
                .map_err(|e| Error::Domain(format!("noise distribution: {e}")))?;
            let noise = ModelVector((0..self.update.len()).map(|_| normal.sample(&mut self.noise)).collect());
            self.noise_draws += 1;
            match dp.noise_sign {
                NoiseSign::AsPrinted => self.w_hat.axpy(eta, &noise),
                NoiseSign::Symmetric => self.w_hat.sub_scaled(eta, &noise),
            }
            self.update.add_assign(&noise);
        }
        let len = self.update.len();
        let update = std::mem::replace(&mut self.update, ModelVector::zeros(len));
        let message = UpdateMessage {
            round: self.round,
            client: self.id,
            update,
        };
        self.round += 1;
        self.h = 0;
        Ok(message)
    }
}
