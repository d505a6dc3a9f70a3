//! Shared fixtures for the integration tests: synthetic LIBSVM data and
//! small simulator configurations.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use asyncfl::objective::{parse_libsvm, Dataset, Objective};
use asyncfl::protocol::Gate;
use asyncfl::schedules::{DelayFunction, SampleSchedule, StepSchedule};
use asyncfl::simulator::{Allocation, Latency, NetworkModel, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// LIBSVM text for a noisy linear classification problem: each of `dim`
/// features is present with probability ½ and takes a value of magnitude
/// in [0.05, 1]; labels follow the sign of a fixed random hyperplane plus
/// Gaussian-like noise. Feature values are never zero.
pub fn synthetic_libsvm(n: usize, dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut out = String::new();
    for _ in 0..n {
        let mut z = 0.3;
        let mut line = String::new();
        for (j, wj) in w.iter().enumerate() {
            if rng.random_bool(0.5) {
                let mag: f64 = rng.random_range(0.05..1.0);
                let x = if rng.random_bool(0.5) { mag } else { -mag };
                z += wj * x;
                line.push_str(&format!(" {}:{x}", j + 1));
            }
        }
        let noise: f64 = (0..4).map(|_| rng.random_range(-0.5..0.5)).sum();
        let label = if z + noise > 0.0 { "+1" } else { "-1" };
        out.push_str(label);
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn synthetic_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
    parse_libsvm(&synthetic_libsvm(n, dim, seed), Path::new("synthetic"), Some(dim)).unwrap()
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

/// A round-lag-gated configuration over identical client datasets with
/// uniform random latencies in `[0, max_latency]`.
pub fn small_config(
    clients: usize,
    samples: SampleSchedule,
    d: u32,
    max_latency: u64,
    seed: u64,
    data: &Dataset,
) -> SimConfig {
    let budget = samples.total();
    let delay = DelayFunction::round_lag(&samples, d);
    SimConfig {
        label: format!("seed{seed}"),
        train: Arc::new(vec![data.clone(); clients]),
        test: Arc::new(data.clone()),
        objective: Objective::new(data.dimension(), 1.0 / data.len() as f64, true).unwrap(),
        allocation: Allocation::Random {
            samples,
            p: vec![1.0 / clients as f64; clients],
        },
        steps: StepSchedule::InverseLinear { eta0: 0.1, beta: 0.001 },
        delay,
        gate: Gate::RoundLag(d),
        dp: None,
        network: NetworkModel {
            uplink: Latency::Uniform { lo: 0, hi: max_latency },
            downlink: Latency::Uniform { lo: 0, hi: max_latency },
        },
        seed,
        budget,
        audit: true,
        log_events: true,
        eval_every: 1,
    }
}
