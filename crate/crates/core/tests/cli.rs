//! Command-line behaviour: configuration validation, subcommands, output
//! files and exit codes.

mod common;

use std::path::{Path, PathBuf};

use asyncfl::cli::{load_plan, main_with_args, parse_config, EXIT_AUDIT, EXIT_INVALID, EXIT_OK};
use asyncfl::simulator::CSV_HEADER;
use tempfile::TempDir;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = main_with_args(std::iter::once("asyncfl").chain(args.iter().copied()), &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

const BASE: &str = "\
[run]
label = base
seed = 3

[data]
train = data.svm

[clients]
n = 3

[schedule]
kind = linear
a = 1
b = 5
budget = 800

[steps]
kind = inverse_linear
eta0 = 0.1
beta = 0.001

[gate]
mode = round_lag
d = 1

[delay]
kind = round_lag

[network]
uplink = uniform:0:3
downlink = fixed:1
";

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    common::write(dir.path(), "data.svm", &common::synthetic_libsvm(300, 8, 4));
    dir
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    common::write(dir, name, text)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn minimal_config_is_valid() {
    let dir = workspace();
    let path = config(dir.path(), "base.ini", BASE);
    let exp = parse_config(&path, None).unwrap();
    assert_eq!(exp.sim.train.len(), 3);
    assert_eq!(exp.sim.seed, 3);
    assert_eq!(exp.sim.budget, 800);
    assert!(exp.samples.total() >= 800);
    // λ = 1/N over the union of the clients' training sets.
    let n: usize = exp.sim.train.iter().map(|d| d.len()).sum();
    assert_eq!(n, 240);
    assert!((exp.sim.objective.lambda() - 1.0 / 240.0).abs() < 1e-18);
    assert_eq!(parse_config(&path, Some(11)).unwrap().sim.seed, 11);
}

#[test]
fn probabilities_must_sum_to_one() {
    let dir = workspace();
    let text = BASE.replace("n = 3", "n = 2\np = 0.5, 0.6");
    let path = config(dir.path(), "p.ini", &text);
    let r = cli(&["run", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_INVALID);
    assert!(r.stderr.contains("[clients] p"), "{}", r.stderr);
    assert!(r.stderr.contains("sum to 1.1"), "{}", r.stderr);
}

#[test]
fn every_problem_is_listed_with_its_line() {
    let dir = workspace();
    let text = BASE
        .replace("eta0 = 0.1", "eta0 = -1")
        .replace("mode = round_lag", "mode = sometimes")
        .replace("[network]", "[network]\ncolour = blue");
    let path = config(dir.path(), "bad.ini", &text);
    let r = cli(&["run", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_INVALID);
    for needle in ["[steps] eta0", "must be a positive real", "[gate] mode", "sometimes", "unknown key `colour`"] {
        assert!(r.stderr.contains(needle), "missing {needle:?} in {}", r.stderr);
    }
    assert!(r.stderr.contains("bad.ini:19:"), "{}", r.stderr);
}

#[test]
fn syntax_errors_name_the_line() {
    let dir = workspace();
    let path = config(dir.path(), "syntax.ini", "[run]\nseed = 1\nthis is not a pair\n");
    let r = cli(&["check-schedule", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_INVALID);
    assert!(r.stderr.contains("syntax.ini") && r.stderr.contains('3'), "{}", r.stderr);
}

#[test]
fn missing_data_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = config(dir.path(), "nodata.ini", BASE);
    let r = cli(&["run", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_INVALID);
    assert!(r.stderr.contains("data.svm"), "{}", r.stderr);
}

const EXACT_GATE: &str = "\
[gate]
mode = exact
d = 1

[delay]
kind = constant
m1 = 60
";

#[test]
fn exact_gate_rejects_incompatible_schedules() {
    let dir = workspace();
    // Window sums s_(i−1) + s_i grow past τ = 60 at round 26.
    let text = BASE.split("[gate]").next().unwrap().to_string() + EXACT_GATE;
    let path = config(dir.path(), "eq4.ini", &text);
    let r = cli(&["run", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_INVALID);
    assert!(r.stderr.contains("violated at round 26"), "{}", r.stderr);

    let r = cli(&["check-schedule", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_INVALID);

    let ok = text.replace("m1 = 60", "m1 = 1000");
    let path = config(dir.path(), "eq4_ok.ini", &ok);
    let r = cli(&["check-schedule", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("compatible"), "{}", r.stdout);
    assert!(r.stdout.contains("rounds = "), "{}", r.stdout);
}

#[test]
fn check_schedule_reports_round_lag_configs() {
    let dir = workspace();
    let path = config(dir.path(), "base.ini", BASE);
    let r = cli(&["check-schedule", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("total = "));
    assert!(r.stdout.contains("first_size = 5"), "{}", r.stdout);
    assert!(r.stdout.contains("compatible by construction"), "{}", r.stdout);
}

#[test]
fn run_is_reproducible_for_a_seed() {
    let dir = workspace();
    let path = config(dir.path(), "base.ini", BASE);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    assert_eq!(cli(&["run", "--config", s(&path), "--seed", "7", "--metrics", s(&a)]).code, EXIT_OK);
    assert_eq!(cli(&["run", "--config", s(&path), "--seed", "7", "--metrics", s(&b)]).code, EXIT_OK);
    assert_eq!(cli(&["run", "--config", s(&path), "--seed", "8", "--metrics", s(&c)]).code, EXIT_OK);
    let (a, b, c) = (
        std::fs::read_to_string(a).unwrap(),
        std::fs::read_to_string(b).unwrap(),
        std::fs::read_to_string(c).unwrap(),
    );
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().next(), Some(CSV_HEADER));
}

#[test]
fn run_without_metrics_path_prints_csv() {
    let dir = workspace();
    let path = config(dir.path(), "base.ini", BASE);
    let r = cli(&["run", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.starts_with(CSV_HEADER));
    let rows = r.stdout.lines().count();
    assert!(rows > 10, "{rows}");
}

#[test]
fn run_writes_files_named_in_the_config() {
    let dir = workspace();
    let text = BASE.replace("seed = 3", "seed = 3\nmetrics = out/m.csv\nsummary = out/s.txt\nevents = out/e.ndjson");
    std::fs::create_dir(dir.path().join("out")).unwrap();
    let path = config(dir.path(), "files.ini", &text);
    let r = cli(&["run", "--config", s(&path)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("total_steps = "), "{}", r.stdout);
    for f in ["m.csv", "s.txt", "e.ndjson"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("out/s.txt")).unwrap();
    assert!(summary.contains("audit = audit passed"), "{summary}");
}

#[test]
fn audit_accepts_genuine_logs_and_rejects_tampered_ones() {
    let dir = workspace();
    let path = config(dir.path(), "base.ini", BASE);
    let log = dir.path().join("events.ndjson");
    let r = cli(&["run", "--config", s(&path), "--log-events", s(&log), "--metrics", s(&dir.path().join("m.csv"))]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let r = cli(&["audit", "--config", s(&path), "--events", s(&log)]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("audit passed"));

    // Claim a late step used the initial model.
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let idx = lines
        .iter()
        .rposition(|l| l.contains("\"event\":\"step\"") && !l.contains("\"k\":0,"))
        .unwrap();
    let k_field = lines[idx].split("\"k\":").nth(1).unwrap().split(',').next().unwrap().to_string();
    lines[idx] = lines[idx].replace(&format!("\"k\":{k_field},"), "\"k\":0,");
    let tampered = dir.path().join("tampered.ndjson");
    std::fs::write(&tampered, lines.join("\n")).unwrap();
    let r = cli(&["audit", "--config", s(&path), "--events", s(&tampered)]);
    assert_eq!(r.code, EXIT_AUDIT, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("audit failed"), "{}", r.stdout);

    let garbage = dir.path().join("garbage.ndjson");
    std::fs::write(&garbage, "{\"event\":\"start\"}\nnot json\n").unwrap();
    let r = cli(&["audit", "--config", s(&path), "--events", s(&garbage)]);
    assert_eq!(r.code, EXIT_INVALID);
}

#[test]
fn plan_prints_parameters_and_writes_a_plan_file() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.ini");
    let r = cli(&[
        "plan", "--s0c", "16", "--nc", "10000", "--p", "1", "--eps", "1", "--sigma", "8", "--k", "25000", "--r0", "1/e",
        "--out", s(&plan),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let value = |key: &str| -> f64 {
        let line = r.stdout.lines().find(|l| l.split_whitespace().next() == Some(key)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!((value("q") - 1.3216327772100012e-4).abs() / 1.3216e-4 < 5e-3);
    assert!((value("m") - 12.106).abs() / 12.106 < 5e-3);
    assert!((value("t") - 195.0).abs() <= 2.0);
    assert!((value("budget") - 5.78195582192962).abs() / 5.78 < 5e-3);
    let file = load_plan(&plan).unwrap();
    assert_eq!(file.sigma, 8.0);
    assert_eq!(file.sizes[0], 16);
    let total: u64 = file.sizes.iter().sum();
    assert!((total as f64 - 25_000.0).abs() <= 250.0);
}

#[test]
fn plan_rejects_bad_arguments() {
    let r = cli(&["plan", "--s0c", "16", "--nc", "1e4", "--p", "1", "--eps", "1", "--sigma", "8", "--k", "25000", "--r0", "e"]);
    assert_eq!(r.code, EXIT_INVALID);
    assert!(r.stderr.contains("--r0"), "{}", r.stderr);
    let r = cli(&["plan", "--s0c", "16"]);
    assert_eq!(r.code, EXIT_INVALID);
    let r = cli(&["plan", "--s0c", "16", "--nc", "1e4", "--p", "1", "--eps", "1", "--sigma", "1.0", "--k", "25000"]);
    assert_eq!(r.code, EXIT_INVALID);
}

#[test]
fn dp_config_uses_the_plan_schedule() {
    let dir = workspace();
    let plan = dir.path().join("plan.ini");
    let r = cli(&[
        "plan", "--s0c", "2", "--nc", "1000", "--p", "1", "--eps", "2", "--sigma", "6", "--k", "300", "--r0", "1/e", "--out",
        s(&plan),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let sizes = load_plan(&plan).unwrap().sizes;
    let text = BASE.split("[schedule]").next().unwrap().to_string()
        + "[steps]\nkind = constant\neta = 0.05\n\n[dp]\nplan = plan.ini\nclip = 1.0\n\n[delay]\nkind = round_lag\n";
    let path = config(dir.path(), "dp.ini", &text);
    let exp = parse_config(&path, None).unwrap();
    assert_eq!(exp.samples.rounds(), sizes.len());
    assert_eq!(exp.sim.dp.unwrap().sigma, 6.0);
    let summary = dir.path().join("m.csv");
    let r = cli(&["run", "--config", s(&path), "--metrics", s(&summary)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let draws = format!("noise_draws_per_client = {0},{0},{0}", sizes.len());
    assert!(r.stdout.contains(&draws), "{}", r.stdout);
}

#[test]
fn compare_tabulates_equal_budget_runs() {
    let dir = workspace();
    let a = config(dir.path(), "a.ini", BASE);
    let constant = BASE.replace("kind = linear\na = 1\nb = 5", "kind = constant\ns = 5").replace("label = base", "label = flat");
    let b = config(dir.path(), "b.ini", &constant);
    let r = cli(&["compare", "--config", s(&a), "--config", s(&b)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("label,rounds"));
    assert!(lines[1].starts_with("base,") && lines[2].starts_with("flat,"));

    let other = config(dir.path(), "c.ini", &BASE.replace("budget = 800", "budget = 900"));
    let r = cli(&["compare", "--config", s(&a), "--config", s(&other)]);
    assert_eq!(r.code, EXIT_INVALID);
    assert!(r.stderr.contains("K = 900"), "{}", r.stderr);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(cli(&["frobnicate"]).code, EXIT_INVALID);
    assert_eq!(cli(&[]).code, EXIT_INVALID);
    assert_eq!(cli(&["run"]).code, EXIT_INVALID);
    let help = cli(&["--help"]);
    assert_eq!(help.code, EXIT_OK);
    assert!(help.stdout.contains("plan") && help.stdout.contains("check-schedule"));
}
