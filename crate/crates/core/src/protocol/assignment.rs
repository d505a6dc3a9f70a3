//! Slot-to-client assignment a(i, t) and the ρ mapping onto global
//! iteration indices.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::schedules::SampleSchedule;

/// Tolerance on the sum of the client probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

/// Assignment of the sᵢ slots of every round to clients.
#[derive(Clone, Debug)]
pub struct Assignment {
    clients: usize,
    samples: SampleSchedule,
    /// `slots[i][t] = a(i, t)`.
    slots: Vec<Vec<u32>>,
    /// `rank[i][t]` = number of earlier slots of round i owned by `a(i, t)`.
    rank: Vec<Vec<u32>>,
    /// `positions[i][c]` = slots of round i owned by client c, ascending.
    positions: Vec<Vec<Vec<u32>>>,
}

/// Checks that `p` is a probability vector summing to 1 within 10⁻¹².
pub fn validate_probabilities(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain("client probability vector is empty".into()));
    }
    if let Some((c, &v)) = p.iter().enumerate().find(|&(_, &v)| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("p[{c}] = {v} is not a probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(Error::Domain(format!("client probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

impl Assignment {
    /// Draws every slot independently with `P(a(i,t) = c) = p[c]`.
    pub fn draw<R: Rng + ?Sized>(samples: &SampleSchedule, p: &[f64], rng: &mut R) -> Result<Self> {
        validate_probabilities(p)?;
        let dist = WeightedIndex::new(p).map_err(|e| Error::Domain(format!("client probabilities: {e}")))?;
        let slots = samples
            .sizes()
            .iter()
            .map(|&s| (0..s).map(|_| dist.sample(rng) as u32).collect())
            .collect();
        Ok(Self::from_slots(p.len(), samples.clone(), slots))
    }

    /// Builds an assignment with prescribed per-client sizes
    /// `sizes[i][c] = s_{i,c}`; the slot order within each round is a seeded
    /// shuffle.
    pub fn from_client_sizes<R: Rng + ?Sized>(sizes: &[Vec<u64>], rng: &mut R) -> Result<Self> {
        let clients = sizes.first().map_or(0, Vec::len);
        if clients == 0 {
            return Err(Error::Domain("per-client size table is empty".into()));
        }
        if let Some(i) = sizes.iter().position(|row| row.len() != clients) {
            return Err(Error::Domain(format!("round {i} lists a different number of clients")));
        }
        let totals: Vec<u64> = sizes.iter().map(|row| row.iter().sum()).collect();
        let samples = SampleSchedule::from_sizes(totals)?;
        let slots = sizes
            .iter()
            .map(|row| {
                let mut round: Vec<u32> = row
                    .iter()
                    .enumerate()
                    .flat_map(|(c, &s)| std::iter::repeat_n(c as u32, s as usize))
                    .collect();
                round.shuffle(rng);
                round
            })
            .collect();
        Ok(Self::from_slots(clients, samples, slots))
    }

    /// Builds an assignment from explicit slot owners.
    pub fn from_slots(clients: usize, samples: SampleSchedule, slots: Vec<Vec<u32>>) -> Self {
        let mut rank = Vec::with_capacity(slots.len());
        let mut positions = Vec::with_capacity(slots.len());
        for round in &slots {
            let mut seen = vec![0u32; clients];
            let mut pos = vec![Vec::new(); clients];
            let mut r = Vec::with_capacity(round.len());
            for (t, &c) in round.iter().enumerate() {
                r.push(seen[c as usize]);
                seen[c as usize] += 1;
                pos[c as usize].push(t as u32);
            }
            rank.push(r);
            positions.push(pos);
        }
        Assignment {
            clients,
            samples,
            slots,
            rank,
            positions,
        }
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn rounds(&self) -> usize {
        self.slots.len()
    }

    /// The global sample schedule {sᵢ}.
    pub fn samples(&self) -> &SampleSchedule {
        &self.samples
    }

    /// `a(i, t)`.
    pub fn owner(&self, i: usize, t: usize) -> u32 {
        self.slots[i][t]
    }

    /// `s_{i,c}`.
    pub fn client_size(&self, i: usize, c: usize) -> u64 {
        self.positions[i][c].len() as u64
    }

    /// Per-client sizes of every round.
    pub fn client_sizes(&self, c: usize) -> Vec<u64> {
        (0..self.rounds()).map(|i| self.client_size(i, c)).collect()
    }

    /// `ρ(c, i, h) = Σ_{l<i} s_l + slot of the (h+1)-st occurrence of c in a(i, ·)`.
    pub fn rho(&self, c: usize, i: usize, h: u64) -> Result<u64> {
        if i >= self.rounds() || c >= self.clients {
            return Err(Error::Domain(format!("(c, i) = ({c}, {i}) outside the assignment")));
        }
        let pos = &self.positions[i][c];
        let slot = pos.get(h as usize).ok_or_else(|| {
            Error::Domain(format!("h = {h} must be below s_(i,c) = {} for (c, i) = ({c}, {i})", pos.len()))
        })?;
        Ok(self.samples.prefix(i) + u64::from(*slot))
    }

    /// Inverse of [`Assignment::rho`]: `(c, i, h)` for global iteration `t`.
    pub fn rho_inverse(&self, t: u64) -> Result<(usize, usize, u64)> {
        let i = self
            .samples
            .round_of(t)
            .ok_or_else(|| Error::Domain(format!("t = {t} is beyond the schedule")))?;
        let slot = (t - self.samples.prefix(i)) as usize;
        Ok((self.slots[i][slot] as usize, i, u64::from(self.rank[i][slot])))
    }
}
