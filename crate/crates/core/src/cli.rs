//! Command-line front end: experiment configuration files, privacy plan
//! files and the `run`, `plan`, `check-schedule`, `compare` and `audit`
//! subcommands.
//!
//! Configuration files are plain text with `[section]` headers and
//! `key = value` lines; `#` and `;` start comment lines. Relative paths are
//! resolved against the directory of the file that names them.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::objective::{load_libsvm, Dataset, Objective};
use crate::privacy::{plan_parameters, PlanCase, PlanInputs, PrivacyPlan, R0Policy};
use crate::protocol::{replay_audit, validate_probabilities, DpConfig, Gate, NoiseSign};
use crate::rng::{stream, Purpose};
use crate::schedules::{
    check_eq4, DelayFunction, Eq4Report, Gamma, Offset, SampleKind, SampleSchedule, StepSchedule,
};
use crate::simulator::{
    comparison_csv, compare_runs, events_from_ndjson, events_to_ndjson, fmt_real, run, Allocation, Latency,
    NetworkModel, SimConfig,
};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for usage, parse and validation errors.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for an audit violation.
pub const EXIT_AUDIT: i32 = 2;

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

/// A parsed configuration file: named sections of ordered entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Ini {
    path: PathBuf,
    sections: Vec<(String, Vec<Entry>)>,
}

impl Ini {
    /// Parses `[section]` / `key = value` text. Keys must belong to a
    /// section and may not repeat within it.
    pub fn parse(text: &str, path: &Path) -> Result<Ini> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut sections: Vec<(String, Vec<Entry>)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("unterminated section header `{trimmed}`")))?
                    .trim();
                if name.is_empty() {
                    return Err(err(line, "empty section name".into()));
                }
                if sections.iter().any(|(s, _)| s == name) {
                    return Err(err(line, format!("section [{name}] appears twice")));
                }
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, found `{trimmed}`")))?;
            let key = key.trim();
            let value = strip_inline_comment(value).trim();
            if key.is_empty() {
                return Err(err(line, "empty key".into()));
            }
            let Some((section, entries)) = sections.last_mut() else {
                return Err(err(line, format!("key `{key}` appears before any section header")));
            };
            if entries.iter().any(|e| e.key == key) {
                return Err(err(line, format!("key `{key}` repeats in section [{section}]")));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
            });
        }
        Ok(Ini {
            path: path.to_path_buf(),
            sections,
        })
    }

    /// Reads and parses a file.
    pub fn load(path: &Path) -> Result<Ini> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ini::parse(&text, path)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|(s, _)| s == name)
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .and_then(|(_, entries)| entries.iter().find(|e| e.key == key))
    }

    /// Raw value of `key` in `section`.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }
}

/// Drops a ` #` or ` ;` trailing comment.
fn strip_inline_comment(value: &str) -> &str {
    let bytes = value.as_bytes();
    for i in 1..bytes.len() {
        if (bytes[i] == b'#' || bytes[i] == b';') && bytes[i - 1].is_ascii_whitespace() {
            return &value[..i];
        }
    }
    value
}

/// Typed access to an [`Ini`] that collects every problem instead of
/// stopping at the first.
struct Reader<'a> {
    ini: &'a Ini,
    errors: Vec<String>,
    used: BTreeSet<(String, String)>,
}

impl<'a> Reader<'a> {
    fn new(ini: &'a Ini) -> Self {
        Reader {
            ini,
            errors: Vec::new(),
            used: BTreeSet::new(),
        }
    }

    fn location(&self, section: &str, key: &str) -> String {
        match self.ini.entry(section, key) {
            Some(e) => format!("{}:{}: [{section}] {key}", self.ini.path.display(), e.line),
            None => format!("{}: [{section}] {key}", self.ini.path.display()),
        }
    }

    fn error(&mut self, section: &str, key: &str, message: impl std::fmt::Display) {
        let loc = self.location(section, key);
        self.errors.push(format!("{loc}: {message}"));
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<&'a str> {
        self.used.insert((section.to_string(), key.to_string()));
        self.ini.get(section, key)
    }

    fn parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<T> {
        let raw = self.raw(section, key)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.error(section, key, format!("`{raw}` is not {what}"));
                None
            }
        }
    }

    fn real(&mut self, section: &str, key: &str) -> Option<f64> {
        let v: f64 = self.parsed(section, key, "a real number")?;
        if v.is_nan() {
            self.error(section, key, "NaN is not allowed");
            return None;
        }
        Some(v)
    }

    fn uint(&mut self, section: &str, key: &str) -> Option<u64> {
        self.parsed(section, key, "a non-negative integer")
    }

    fn boolean(&mut self, section: &str, key: &str) -> Option<bool> {
        let raw = self.raw(section, key)?;
        match raw {
            "true" | "yes" | "on" | "1" => Some(true),
            "false" | "no" | "off" | "0" => Some(false),
            _ => {
                self.error(section, key, format!("`{raw}` is not a boolean"));
                None
            }
        }
    }

    fn require_real(&mut self, section: &str, key: &str) -> Option<f64> {
        if self.ini.get(section, key).is_none() {
            self.error(section, key, "missing");
            return None;
        }
        self.real(section, key)
    }

    fn require_uint(&mut self, section: &str, key: &str) -> Option<u64> {
        if self.ini.get(section, key).is_none() {
            self.error(section, key, "missing");
            return None;
        }
        self.uint(section, key)
    }

    fn list<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<Vec<T>> {
        let raw = self.raw(section, key)?;
        let mut out = Vec::new();
        for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse::<T>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.error(section, key, format!("list item `{item}` is not {what}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn path(&mut self, section: &str, key: &str) -> Option<PathBuf> {
        let raw = self.raw(section, key)?;
        Some(resolve(&self.ini.path, raw))
    }

    /// Reports keys that no accessor asked for.
    fn unknown_keys(&mut self) {
        let mut found = Vec::new();
        for (section, entries) in &self.ini.sections {
            for e in entries {
                if !self.used.contains(&(section.clone(), e.key.clone())) {
                    found.push(format!(
                        "{}:{}: unknown key `{}` in section [{section}]",
                        self.ini.path.display(),
                        e.line,
                        e.key
                    ));
                }
            }
        }
        self.errors.extend(found);
    }
}

fn resolve(base_file: &Path, raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_absolute() {
        p
    } else {
        base_file.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

const KNOWN_SECTIONS: [&str; 10] = [
    "run", "data", "clients", "objective", "schedule", "steps", "delay", "gate", "dp", "network",
];

/// A validated experiment: a ready-to-run simulator configuration plus the
/// output locations named by the file.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub source: PathBuf,
    pub sim: SimConfig,
    /// Round lag d used by the gate and by the compatibility check.
    pub lag: u32,
    /// The delay function was derived from the round-lag gate
    /// (`[delay] kind = round_lag`) rather than given independently.
    pub delay_from_gate: bool,
    /// Global sizes sᵢ of the run (sums over clients for prescribed tables).
    pub samples: SampleSchedule,
    pub metrics_path: Option<PathBuf>,
    pub events_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Compatibility report over every checkable round, or `None` when
    /// the schedule has fewer than d+2 rounds or the delay was derived
    /// from the round-lag gate.
    pub fn eq4_report(&self) -> Result<Option<Eq4Report>> {
        if self.delay_from_gate {
            return Ok(None);
        }
        let i_max = self.samples.rounds().saturating_sub(1);
        if i_max < self.lag as usize + 1 {
            return Ok(None);
        }
        check_eq4(&self.samples, &self.sim.delay, self.lag, i_max).map(Some)
    }
}

/// A privacy plan read back from a plan file.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanFile {
    pub sigma: f64,
    pub sizes: Vec<u64>,
}

/// Reads the `sigma` and `sizes` entries of the `[plan]` section.
pub fn load_plan(path: &Path) -> Result<PlanFile> {
    let ini = Ini::load(path)?;
    let mut r = Reader::new(&ini);
    let sigma = r.require_real("plan", "sigma");
    let sizes = r.list::<u64>("plan", "sizes", "a non-negative integer");
    if sizes.is_none() && r.errors.is_empty() {
        r.error("plan", "sizes", "missing");
    }
    match (sigma, sizes) {
        (Some(sigma), Some(sizes)) if r.errors.is_empty() && !sizes.is_empty() => Ok(PlanFile { sigma, sizes }),
        _ => {
            if r.errors.is_empty() {
                r.error("plan", "sizes", "empty schedule");
            }
            Err(Error::Validation(r.errors))
        }
    }
}

/// Parses and validates an experiment configuration. `seed` overrides the
/// file's `[run] seed`; the seed drives the data split as well as every
/// random stream of the run.
pub fn parse_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let ini = Ini::load(path)?;
    let mut r = Reader::new(&ini);
    let mut errors = Vec::new();
    for (section, entries) in &ini.sections {
        if !KNOWN_SECTIONS.contains(&section.as_str()) {
            let line = entries.first().map_or(0, |e| e.line);
            errors.push(format!("{}:{line}: unknown section [{section}]", path.display()));
        }
    }

    // [run]
    let label = r.raw("run", "label").unwrap_or("run").to_string();
    let file_seed = r.uint("run", "seed").unwrap_or(1);
    let seed = seed.unwrap_or(file_seed);
    let audit = r.boolean("run", "audit").unwrap_or(true);
    let eval_every = r.uint("run", "eval_every").unwrap_or(1) as usize;
    let metrics_path = r.path("run", "metrics");
    let events_path = r.path("run", "events");
    let summary_path = r.path("run", "summary");

    // [gate]
    let lag = r.uint("gate", "d").unwrap_or(1) as u32;
    let gate = match r.raw("gate", "mode").unwrap_or("round_lag") {
        "exact" => Gate::ExactDelay,
        "round_lag" => Gate::RoundLag(lag),
        other => {
            r.error("gate", "mode", format!("`{other}` is not one of exact, round_lag"));
            Gate::RoundLag(lag)
        }
    };

    // [data] and [clients]
    let data = read_data(&mut r, seed);
    let n_clients = data.as_ref().map(|d| d.train.len());
    let p = r.list::<f64>("clients", "p", "a real number");

    // [objective]
    let bias = r.boolean("objective", "bias").unwrap_or(true);
    let lambda_raw = r.raw("objective", "lambda").unwrap_or("auto");
    let lambda = if lambda_raw == "auto" {
        None
    } else {
        match lambda_raw.parse::<f64>() {
            Ok(v) if v >= 0.0 => Some(v),
            _ => {
                r.error("objective", "lambda", format!("`{lambda_raw}` is neither `auto` nor a non-negative real"));
                Some(0.0)
            }
        }
    };

    // [dp]
    let dp_section = ini.has_section("dp");
    let dp_enabled = dp_section && r.boolean("dp", "enabled").unwrap_or(true);
    let plan = match r.path("dp", "plan") {
        Some(p) if dp_enabled => match load_plan(&p) {
            Ok(plan) => Some(plan),
            Err(e) => {
                r.error("dp", "plan", e);
                None
            }
        },
        _ => None,
    };
    let dp = if dp_enabled {
        let clip = r.require_real("dp", "clip");
        let sigma = r.real("dp", "sigma").or(plan.as_ref().map(|p| p.sigma));
        if sigma.is_none() {
            r.error("dp", "sigma", "missing (give sigma or a plan)");
        }
        let noise_sign = match r.raw("dp", "noise_sign").unwrap_or("as_printed") {
            "as_printed" => NoiseSign::AsPrinted,
            "symmetric" => NoiseSign::Symmetric,
            other => {
                r.error("dp", "noise_sign", format!("`{other}` is not one of as_printed, symmetric"));
                NoiseSign::AsPrinted
            }
        };
        match (clip, sigma) {
            (Some(clip), Some(sigma)) => {
                if !(clip > 0.0) {
                    r.error("dp", "clip", format!("clipping norm must be positive, got {clip}"));
                }
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    r.error("dp", "sigma", format!("σ must be a finite non-negative real, got {sigma}"));
                }
                Some(DpConfig { clip, sigma, noise_sign })
            }
            _ => None,
        }
    } else {
        None
    };

    // [schedule]
    let allocation_sizes: Option<(Allocation, SampleSchedule, u64)> = match (&plan, n_clients) {
        (Some(plan), Some(n)) => {
            if ini.has_section("schedule") {
                r.error("schedule", "kind", "a DP plan provides the schedule; remove the [schedule] section");
            }
            if p.is_some() {
                r.error("clients", "p", "per-client sizes come from the DP plan; remove p");
            }
            let rows: Vec<Vec<u64>> = plan.sizes.iter().map(|&s| vec![s; n]).collect();
            let totals: Vec<u64> = rows.iter().map(|row| row.iter().sum()).collect();
            match SampleSchedule::from_sizes(totals) {
                Ok(samples) => {
                    let budget = samples.total();
                    Some((Allocation::PerClient(rows), samples, budget))
                }
                Err(e) => {
                    r.error("dp", "plan", e);
                    None
                }
            }
        }
        (None, Some(n)) => read_schedule(&mut r).and_then(|(samples, budget)| {
            let p = match &p {
                Some(p) => p.clone(),
                None => {
                    let sizes: Vec<f64> = data.as_ref().map_or(vec![], |d| d.train.iter().map(|t| t.len() as f64).collect());
                    let total: f64 = sizes.iter().sum();
                    sizes.iter().map(|s| s / total).collect()
                }
            };
            if p.len() != n {
                r.error("clients", "p", format!("{} probabilities for {n} clients", p.len()));
                return None;
            }
            if let Err(e) = validate_probabilities(&p) {
                r.error("clients", "p", e);
                return None;
            }
            Some((Allocation::Random { samples: samples.clone(), p }, samples, budget))
        }),
        _ => None,
    };

    // [delay] and [steps]
    let samples = allocation_sizes.as_ref().map(|(_, s, _)| s.clone());
    let delay_from_gate = r.raw("delay", "kind") == Some("round_lag");
    let delay = read_delay(&mut r, samples.as_ref(), lag);
    let steps = delay.as_ref().and_then(|delay| read_steps(&mut r, delay));

    // [network]
    let uplink = read_latency(&mut r, "uplink", n_clients.unwrap_or(0));
    let downlink = read_latency(&mut r, "downlink", n_clients.unwrap_or(0));

    r.unknown_keys();
    errors.append(&mut r.errors);

    if let (Some(samples), Some(delay), Some(steps)) = (&samples, &delay, &steps) {
        if let Err(e) = steps.validate(samples) {
            errors.push(format!("{}: [steps]: {e}", path.display()));
        }
        if gate == Gate::ExactDelay {
            let i_max = samples.rounds().saturating_sub(1);
            if i_max > lag as usize {
                match check_eq4(samples, delay, lag, i_max) {
                    Ok(report) if !report.holds() => errors.push(format!(
                        "{}: schedule and delay are incompatible under the exact gate: {report}",
                        path.display()
                    )),
                    Ok(_) => {}
                    Err(e) => errors.push(format!("{}: compatibility check: {e}", path.display())),
                }
            }
        }
    }

    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let (data, (allocation, samples, budget), delay, steps) = match (data, allocation_sizes, delay, steps) {
        (Some(d), Some(a), Some(del), Some(s)) => (d, a, del, s),
        _ => return Err(Error::Validation(vec![format!("{}: incomplete configuration", path.display())])),
    };
    let train_size: usize = data.train.iter().map(Dataset::len).sum();
    let lambda = lambda.unwrap_or(1.0 / train_size as f64);
    let objective = Objective::new(data.dimension, lambda, bias)?;
    Ok(ExperimentConfig {
        source: path.to_path_buf(),
        sim: SimConfig {
            label,
            train: Arc::new(data.train),
            test: Arc::new(data.test),
            objective,
            allocation,
            steps,
            delay,
            gate,
            dp,
            network: NetworkModel {
                uplink: uplink.unwrap_or(Latency::Fixed(0)),
                downlink: downlink.unwrap_or(Latency::Fixed(0)),
            },
            seed,
            budget,
            audit,
            log_events: events_path.is_some(),
            eval_every,
        },
        lag,
        delay_from_gate,
        samples,
        metrics_path,
        events_path,
        summary_path,
    })
}

struct LoadedData {
    train: Vec<Dataset>,
    test: Dataset,
    dimension: usize,
}

fn read_data(r: &mut Reader<'_>, seed: u64) -> Option<LoadedData> {
    let hint = r.uint("data", "dimension").map(|d| d as usize);
    let train_fraction = r.real("data", "train_fraction").unwrap_or(0.8);
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        r.error("data", "train_fraction", format!("must lie in (0, 1], got {train_fraction}"));
    }
    let by_label = match r.raw("data", "partition").unwrap_or("iid") {
        "iid" => false,
        "by_label" => true,
        other => {
            r.error("data", "partition", format!("`{other}` is not one of iid, by_label"));
            false
        }
    };
    let n = r.uint("clients", "n");
    let load = |r: &mut Reader<'_>, key: &str, p: PathBuf| -> Option<Dataset> {
        match load_libsvm(&p, hint) {
            Ok(d) => Some(d),
            Err(e) => {
                r.error("data", key, e);
                None
            }
        }
    };
    let test = r.path("data", "test").and_then(|p| load(r, "test", p));
    let client_files: Option<Vec<String>> = r.list("data", "client_train", "a path");
    let global = r.path("data", "train");
    let (train, test) = match (global, client_files) {
        (Some(_), Some(_)) => {
            r.error("data", "client_train", "give either train or client_train, not both");
            return None;
        }
        (None, None) => {
            r.error("data", "train", "missing (give train or client_train)");
            return None;
        }
        (Some(p), None) => {
            let full = load(r, "train", p)?;
            let n = match n {
                Some(0) => {
                    r.error("clients", "n", "at least one client is required");
                    return None;
                }
                Some(n) => n as usize,
                None => 1,
            };
            let (train, test) = match test {
                Some(t) => (full, t),
                None if r.ini.get("data", "test").is_some() => return None,
                None => full.split(train_fraction, &mut stream(seed, Purpose::Data, 0)),
            };
            if train.len() < n {
                r.error("clients", "n", format!("{n} clients but only {} training examples", train.len()));
                return None;
            }
            (train.partition(n, by_label, &mut stream(seed, Purpose::Data, 1)), test)
        }
        (None, Some(files)) => {
            let base = r.ini.path.clone();
            let mut parts = Vec::new();
            for f in files {
                parts.push(load(r, "client_train", resolve(&base, &f))?);
            }
            if let Some(n) = n {
                if n as usize != parts.len() {
                    r.error("clients", "n", format!("n = {n} but client_train lists {} files", parts.len()));
                }
            }
            let Some(test) = test else {
                r.error("data", "test", "required with client_train");
                return None;
            };
            (parts, test)
        }
    };
    let dimension = train.iter().map(Dataset::dimension).chain([test.dimension()]).max().unwrap_or(1);
    let widen = |d: &Dataset| d.widened(dimension);
    let train: Result<Vec<Dataset>> = train.iter().map(widen).collect();
    match (train, widen(&test)) {
        (Ok(train), Ok(test)) => Some(LoadedData { train, test, dimension }),
        (Err(e), _) | (_, Err(e)) => {
            r.error("data", "train", e);
            None
        }
    }
}

fn read_gamma(r: &mut Reader<'_>, section: &str) -> Gamma {
    match r.raw(section, "gamma").unwrap_or("four_ln") {
        "four_ln" => Gamma::FourLn,
        other => match other.parse::<f64>() {
            Ok(c) if c > 0.0 => Gamma::Constant(c),
            _ => {
                r.error(section, "gamma", format!("`{other}` is neither `four_ln` nor a positive real"));
                Gamma::FourLn
            }
        },
    }
}

fn read_schedule(r: &mut Reader<'_>) -> Option<(SampleSchedule, u64)> {
    const S: &str = "schedule";
    let kind = match r.raw(S, "kind") {
        None => {
            r.error(S, "kind", "missing");
            return None;
        }
        Some("constant") => SampleKind::Constant { s: r.require_uint(S, "s")? },
        Some("linear") => SampleKind::Linear {
            a: r.require_real(S, "a")?,
            b: r.require_real(S, "b")?,
        },
        Some("power") => SampleKind::PowerLaw {
            a: r.require_real(S, "a")?,
            b: r.require_real(S, "b")?,
            c: r.require_real(S, "c")?,
        },
        Some("theorem5") => SampleKind::Theorem5 {
            d: r.require_uint(S, "d")? as u32,
            m: r.require_real(S, "m")?,
        },
        Some("lemma4") => SampleKind::Lemma4 {
            gamma: read_gamma(r, S),
            g: r.real(S, "g").unwrap_or(2.0),
            d: r.require_uint(S, "d")? as u32,
            m: r.require_real(S, "m")?,
        },
        Some("table") => SampleKind::Table(r.list(S, "sizes", "a non-negative integer")?),
        Some(other) => {
            r.error(
                S,
                "kind",
                format!("`{other}` is not one of constant, linear, power, theorem5, lemma4, table"),
            );
            return None;
        }
    };
    let budget = r.uint(S, "budget");
    let rounds = r.uint(S, "rounds");
    let built = match (budget, rounds, &kind) {
        (Some(_), Some(_), _) => {
            r.error(S, "rounds", "give either budget or rounds, not both");
            return None;
        }
        (Some(k), None, _) => SampleSchedule::covering(kind, k).map(|s| (s, k)),
        (None, Some(t), _) => SampleSchedule::with_rounds(kind, t as usize).map(|s| {
            let k = s.total();
            (s, k)
        }),
        (None, None, SampleKind::Table(sizes)) => SampleSchedule::from_sizes(sizes.clone()).map(|s| {
            let k = s.total();
            (s, k)
        }),
        (None, None, _) => {
            r.error(S, "budget", "missing (give budget or rounds)");
            return None;
        }
    };
    match built {
        Ok(v) => Some(v),
        Err(e) => {
            r.error(S, "kind", e);
            None
        }
    }
}

fn read_delay(r: &mut Reader<'_>, samples: Option<&SampleSchedule>, lag: u32) -> Option<DelayFunction> {
    const S: &str = "delay";
    let built = match r.raw(S, "kind").unwrap_or("unbounded") {
        "unbounded" => Ok(DelayFunction::Unbounded),
        "constant" => Ok(DelayFunction::Affine {
            m1: r.require_real(S, "m1")?,
            slope: 0.0,
        }),
        "affine" => Ok(DelayFunction::Affine {
            m1: r.require_real(S, "m1")?,
            slope: r.require_real(S, "slope")?,
        }),
        "sqrt_log" => Ok(DelayFunction::sqrt_log(r.require_real(S, "m0")?, r.require_real(S, "m1")?)),
        "theorem5" => DelayFunction::theorem5(
            r.require_uint(S, "d")? as u32,
            r.require_real(S, "m")?,
            r.real(S, "extra").unwrap_or(0.0),
        ),
        "lemma4" => {
            let gamma = read_gamma(r, S);
            let g = r.real(S, "g").unwrap_or(2.0);
            Ok(DelayFunction::lemma4(gamma, g, r.require_uint(S, "d")? as u32, r.require_real(S, "m")?))
        }
        "round_lag" => {
            let d = r.uint(S, "d").map_or(lag, |d| d as u32);
            Ok(DelayFunction::round_lag(samples?, d))
        }
        "table" => Ok(DelayFunction::Table(r.list(S, "values", "a real number")?)),
        other => {
            r.error(
                S,
                "kind",
                format!("`{other}` is not one of unbounded, constant, affine, sqrt_log, theorem5, lemma4, round_lag, table"),
            );
            return None;
        }
    };
    match built {
        Ok(d) => Some(d),
        Err(e) => {
            r.error(S, "kind", e);
            None
        }
    }
}

fn read_steps(r: &mut Reader<'_>, delay: &DelayFunction) -> Option<StepSchedule> {
    const S: &str = "steps";
    let positive = |r: &mut Reader<'_>, key: &str| -> Option<f64> {
        let v = r.require_real(S, key)?;
        if !(v > 0.0 && v.is_finite()) {
            r.error(S, key, format!("must be a positive real, got {v}"));
            return None;
        }
        Some(v)
    };
    match r.raw(S, "kind") {
        None => {
            r.error(S, "kind", "missing");
            None
        }
        Some("constant") => Some(StepSchedule::Constant { eta: positive(r, "eta")? }),
        Some("inverse_linear") => {
            let (eta0, beta) = (positive(r, "eta0"), r.require_real(S, "beta"));
            Some(StepSchedule::InverseLinear { eta0: eta0?, beta: beta? })
        }
        Some("inverse_sqrt") => {
            let (eta0, beta) = (positive(r, "eta0"), r.require_real(S, "beta"));
            Some(StepSchedule::InverseSqrt { eta0: eta0?, beta: beta? })
        }
        Some("theorem5") => Some(StepSchedule::theorem5(positive(r, "mu")?, delay.clone())),
        Some("round_diminishing") => {
            let a0 = positive(r, "a0")?;
            let q = r.real(S, "q").unwrap_or(1.0);
            let offset = match (r.real(S, "e0"), r.real(S, "offset_factor")) {
                (Some(e0), None) => Offset::Constant(e0),
                (None, Some(factor)) => Offset::ScaledDelay {
                    factor,
                    delay: delay.clone(),
                },
                _ => {
                    r.error(S, "e0", "give exactly one of e0 and offset_factor");
                    return None;
                }
            };
            Some(StepSchedule::RoundDiminishing { a0, q, offset })
        }
        Some(other) => {
            r.error(
                S,
                "kind",
                format!("`{other}` is not one of constant, inverse_linear, inverse_sqrt, theorem5, round_diminishing"),
            );
            None
        }
    }
}

/// Parses `fixed:L`, `uniform:LO:HI` or `per_client:L1,L2,…`.
pub fn parse_latency(text: &str) -> std::result::Result<Latency, String> {
    let (law, rest) = text.split_once(':').ok_or_else(|| format!("`{text}` lacks a `law:` prefix"))?;
    let int = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("`{s}` is not a non-negative integer"));
    match law.trim() {
        "fixed" => Ok(Latency::Fixed(int(rest)?)),
        "uniform" => {
            let (lo, hi) = rest.split_once(':').ok_or_else(|| format!("`{text}` needs uniform:LO:HI"))?;
            let (lo, hi) = (int(lo)?, int(hi)?);
            if lo > hi {
                return Err(format!("uniform latency needs LO ≤ HI, got {lo} > {hi}"));
            }
            Ok(Latency::Uniform { lo, hi })
        }
        "per_client" => Ok(Latency::PerClient(rest.split(',').map(int).collect::<std::result::Result<_, _>>()?)),
        other => Err(format!("`{other}` is not one of fixed, uniform, per_client")),
    }
}

fn read_latency(r: &mut Reader<'_>, key: &str, clients: usize) -> Option<Latency> {
    let raw = r.raw("network", key)?;
    match parse_latency(raw) {
        Ok(Latency::PerClient(t)) if t.len() != clients => {
            r.error("network", key, format!("{} latencies for {clients} clients", t.len()));
            None
        }
        Ok(l) => Some(l),
        Err(e) => {
            r.error("network", key, e);
            None
        }
    }
}

/// Parses `fixed_point`, `1/e` or a number in (0, 1/e].
pub fn parse_r0(text: &str) -> std::result::Result<R0Policy, String> {
    match text.trim() {
        "fixed" | "fixed_point" => Ok(R0Policy::FixedPoint),
        "1/e" => Ok(R0Policy::Explicit(std::f64::consts::E.recip())),
        other => other
            .parse::<f64>()
            .map(R0Policy::Explicit)
            .map_err(|_| format!("`{other}` is not `fixed_point`, `1/e` or a number")),
    }
}

fn parse_case(text: &str) -> std::result::Result<PlanCase, String> {
    match text.trim() {
        "1" => Ok(PlanCase::One),
        "2" => Ok(PlanCase::Two),
        other => Err(format!("case must be 1 or 2, got `{other}`")),
    }
}

/// Named plan quantities in output order.
fn plan_fields(plan: &PrivacyPlan) -> Vec<(&'static str, String)> {
    let i = &plan.inputs;
    let policy = match i.r0 {
        R0Policy::FixedPoint => "fixed_point",
        R0Policy::Explicit(_) => "explicit",
    };
    let mut fields = vec![
        ("s0c", fmt_real(i.s0c)),
        ("nc", fmt_real(i.n_c)),
        ("p", fmt_real(i.p)),
        ("epsilon", fmt_real(i.epsilon)),
        ("sigma", fmt_real(i.sigma)),
        ("k", fmt_real(i.k)),
        ("case", i.case.to_string()),
        ("r0_policy", policy.to_string()),
    ];
    if i.case == PlanCase::Two {
        fields.push(("k_factor", fmt_real(i.k_factor)));
    }
    fields.extend([
        ("r0", fmt_real(plan.r0)),
        ("r", fmt_real(plan.r)),
        ("q", fmt_real(plan.q)),
        ("m", fmt_real(plan.m)),
        ("t", plan.t.to_string()),
        ("rounds", plan.schedule.len().to_string()),
        ("scheduled_total", plan.schedule.iter().sum::<u64>().to_string()),
        ("gamma", fmt_real(plan.gamma)),
        ("budget", fmt_real(plan.budget)),
        ("delta", fmt_real(plan.delta)),
        ("a", fmt_real(plan.bounds.a)),
        ("b", fmt_real(plan.bounds.b)),
        ("d", fmt_real(plan.bounds.d)),
        ("k_minus", fmt_real(plan.bounds.k_minus)),
        ("k_plus", fmt_real(plan.bounds.k_plus)),
        ("k_star", fmt_real(plan.bounds.k_star)),
        ("c_hat_1", fmt_real(plan.c_hat_1)),
        ("iterations", plan.iterations.to_string()),
        ("sampling_rate_ok", plan.sampling_rate_ok.to_string()),
        ("t_const", plan.t_const.to_string()),
        ("reduction", fmt_real(plan.reduction)),
        ("aggregated_noise", fmt_real(plan.aggregated_noise)),
        ("baseline_noise", fmt_real(plan.baseline_noise)),
    ]);
    fields
}

/// Aligned, human-readable plan.
pub fn plan_text(plan: &PrivacyPlan) -> String {
    let fields = plan_fields(plan);
    let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in fields {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

/// `[plan]` section with `key = value` lines, readable by [`load_plan`].
pub fn plan_record(plan: &PrivacyPlan) -> String {
    let mut out = String::from("[plan]\n");
    for (k, v) in plan_fields(plan) {
        let _ = writeln!(out, "{k} = {v}");
    }
    let sizes: Vec<String> = plan.schedule.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "sizes = {}", sizes.join(","));
    out
}

#[derive(Parser, Debug)]
#[command(name = "asyncfl", version, about = "Asynchronous federated learning simulator and privacy planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the configuration file.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event log as newline-delimited JSON.
        #[arg(long = "log-events")]
        log_events: Option<PathBuf>,
        /// Metrics CSV path; overrides the configuration file. Without
        /// either, the CSV goes to standard output.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Select privacy parameters and a per-client schedule.
    Plan {
        #[arg(long)]
        s0c: f64,
        #[arg(long)]
        nc: f64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        k: f64,
        /// `fixed_point`, `1/e` or a number.
        #[arg(long, default_value = "fixed_point")]
        r0: String,
        /// 1 (K ≤ K⁻) or 2 (K ≥ K⁺).
        #[arg(long, default_value = "1")]
        case: String,
        /// Case-2 ratio K/K⁺.
        #[arg(long = "k-factor", default_value_t = 1.5)]
        k_factor: f64,
        /// Required δ; a plan that misses it is an error.
        #[arg(long)]
        delta: Option<f64>,
        /// Write the plan file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the schedule/delay compatibility report.
    CheckSchedule {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run several experiments with the same budget and tabulate them.
    Compare {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay an event log against a configuration's delay and gate.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        events: PathBuf,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn io_err(e: std::io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

/// Runs the command line `args` (including the program name) and returns
/// the exit status.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_INVALID
                }
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Audit(_) => EXIT_AUDIT,
                _ => EXIT_INVALID,
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Run {
            config,
            seed,
            log_events,
            metrics,
        } => {
            let mut exp = parse_config(&config, seed)?;
            let events_path = log_events.or(exp.events_path.take());
            exp.sim.log_events = events_path.is_some();
            let output = run(&exp.sim)?;
            let csv = output.trace.to_csv();
            match metrics.or(exp.metrics_path.take()) {
                Some(p) => {
                    write_file(&p, &csv)?;
                    write!(out, "{}", output.trace.summary.to_text()).map_err(io_err)?;
                }
                None => write!(out, "{csv}").map_err(io_err)?,
            }
            if let Some(p) = &exp.summary_path {
                write_file(p, &output.trace.summary.to_text())?;
            }
            if let Some(p) = events_path {
                write_file(&p, &events_to_ndjson(&output.events)?)?;
            }
            Ok(EXIT_OK)
        }
        Command::Plan {
            s0c,
            nc,
            p,
            eps,
            sigma,
            k,
            r0,
            case,
            k_factor,
            delta,
            out: plan_out,
        } => {
            let mut usage = Vec::new();
            let r0 = parse_r0(&r0).map_err(|e| usage.push(format!("--r0: {e}")));
            let case = parse_case(&case).map_err(|e| usage.push(format!("--case: {e}")));
            let (Ok(r0), Ok(case)) = (r0, case) else {
                return Err(Error::Validation(usage));
            };
            let inputs = PlanInputs {
                case,
                r0,
                k_factor,
                target_delta: delta,
                ..PlanInputs::new(s0c, nc, p, eps, sigma, k)
            };
            let plan = plan_parameters(inputs)?;
            write!(out, "{}\n{}", plan_text(&plan), plan_record(&plan)).map_err(io_err)?;
            if let Some(path) = plan_out {
                write_file(&path, &plan_record(&plan))?;
            }
            Ok(EXIT_OK)
        }
        Command::CheckSchedule { config } => {
            let exp = parse_config(&config, None)?;
            let sizes = exp.samples.sizes();
            writeln!(out, "rounds = {}", sizes.len()).map_err(io_err)?;
            writeln!(out, "total = {}", exp.samples.total()).map_err(io_err)?;
            if let (Some(first), Some(last)) = (sizes.first(), sizes.last()) {
                writeln!(out, "first_size = {first}\nlast_size = {last}").map_err(io_err)?;
            }
            match exp.eq4_report()? {
                Some(report) => {
                    writeln!(out, "{report}").map_err(io_err)?;
                    Ok(if report.holds() { EXIT_OK } else { EXIT_INVALID })
                }
                None if exp.delay_from_gate => {
                    writeln!(
                        out,
                        "delay derived from the round-lag gate with d = {}; compatible by construction",
                        exp.lag
                    )
                    .map_err(io_err)?;
                    Ok(EXIT_OK)
                }
                None => {
                    writeln!(out, "too few rounds to check with d = {}", exp.lag).map_err(io_err)?;
                    Ok(EXIT_OK)
                }
            }
        }
        Command::Compare {
            configs,
            seed,
            out: table_out,
        } => {
            let sims = configs
                .iter()
                .map(|c| parse_config(c, seed).map(|e| e.sim))
                .collect::<Result<Vec<_>>>()?;
            let table = comparison_csv(&compare_runs(&sims)?);
            match table_out {
                Some(p) => write_file(&p, &table)?,
                None => write!(out, "{table}").map_err(io_err)?,
            }
            Ok(EXIT_OK)
        }
        Command::Audit { config, events } => {
            let exp = parse_config(&config, None)?;
            let text = std::fs::read_to_string(&events).map_err(|e| Error::io(&events, e))?;
            let log = events_from_ndjson(&text, &events)?;
            let report = replay_audit(&log, &exp.sim.delay, Some(exp.sim.gate))?;
            writeln!(out, "{report}").map_err(io_err)?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_AUDIT })
        }
    }
}

/// Key/value pairs of one section.
pub fn section_keys(ini: &Ini, section: &str) -> HashMap<String, String> {
    ini.sections
        .iter()
        .filter(|(s, _)| s == section)
        .flat_map(|(_, entries)| entries.iter().map(|e| (e.key.clone(), e.value.clone())))
        .collect()
}
