//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them.
//!
//! The oracle suites of the core crate are compiled in here and rerun
//! under each criterion's time budget.

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use delayfeed::harness::{generate_events, run_methods, ExperimentConfig, GeneratorConfig, MethodSpec, Preset, ORACLE, PRETRAINED};
use delayfeed::metrics::{relative_improvement, MetricKind, MetricReport};

#[path = "../../core/tests/generator.rs"]
mod generator;
#[path = "../../core/tests/gradients.rs"]
mod gradients;
#[path = "../../core/tests/losses.rs"]
mod losses;
#[path = "../../core/tests/metrics.rs"]
mod metrics;
#[path = "../../core/tests/star.rs"]
mod star;
#[path = "../../core/tests/streams.rs"]
mod streams;

type Checks = Vec<(&'static str, fn())>;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Outside the test harness's capture, so the lines always reach the log.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn panic_text(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn run_checks(checks: Checks) -> Outcome {
    let mut failed = Vec::new();
    let total = checks.len();
    for (name, check) in checks {
        if let Err(e) = panic::catch_unwind(AssertUnwindSafe(check)) {
            let text = panic_text(e);
            failed.push(format!("{name}: {}", text.lines().next().unwrap_or("")));
        }
    }
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() { format!("{total} checks") } else { failed.join("; ") },
    }
}

fn criterion(results: &mut Vec<bool>, id: u32, title: &str, budget: Option<Duration>, body: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|e| Outcome {
        pass: false,
        detail: panic_text(e),
    });
    let took = start.elapsed();
    let in_time = budget.is_none_or(|b| took <= b);
    let pass = outcome.pass && in_time;
    let timing = match budget {
        Some(b) => format!("{:.1}s of {}s", took.as_secs_f64(), b.as_secs()),
        None => format!("{:.1}s", took.as_secs_f64()),
    };
    emit(&format!(
        "criterion {id:>2} {:<4} {title} ({timing}): {}",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail
    ));
    results.push(pass);
}

/// Published comparison table: (method, [AUC, PR-AUC, NLL, RI-AUC, RI-PR-AUC,
/// RI-NLL]) for the two datasets.
const TABLE: [(&str, [f64; 6], [f64; 6]); 12] = [
    ("Pre-trained", [0.8075, 0.5811, 0.5425, 0.00, 0.00, 0.00], [0.6087, 0.6142, 0.7693, 0.00, 0.00, 0.00]),
    ("Vanilla-NoDup", [0.7989, 0.5794, 0.6149, -24.29, -2.70, -47.20], [0.6395, 0.6442, 0.7754, 68.44, 75.38, -4.85]),
    ("Vanilla-NoWin", [0.8347, 0.6189, 0.4302, 76.84, 60.00, 73.21], [0.6368, 0.6395, 0.7444, 62.44, 63.57, 19.81]),
    ("Vanilla-Win", [0.8348, 0.6251, 0.4079, 77.12, 69.84, 87.74], [0.6427, 0.6474, 0.6756, 75.56, 83.42, 74.54]),
    ("Vanilla-RN", [0.8351, 0.6266, 0.4562, 77.97, 72.22, 56.26], [0.6446, 0.6496, 0.6707, 79.78, 88.94, 78.44]),
    ("FNC", [0.8347, 0.6189, 0.4659, 76.84, 60.00, 49.93], [0.6368, 0.6395, 0.7196, 62.44, 63.57, 39.54]),
    ("FNC-RN", [0.8370, 0.6299, 0.4103, 83.33, 77.46, 86.18], [0.6411, 0.6447, 0.6710, 72.00, 76.63, 78.20]),
    ("FNW", [0.8348, 0.6262, 0.4006, 77.12, 71.59, 92.50], [0.6440, 0.6477, 0.6589, 78.44, 84.17, 87.83]),
    ("FNW-RN", [0.8372, 0.6326, 0.3970, 83.90, 81.75, 94.85], [0.6458, 0.6499, 0.6592, 82.44, 89.70, 87.59]),
    ("ES-DFM", [0.8373, 0.6347, 0.3956, 84.18, 85.08, 95.76], [0.6453, 0.6476, 0.6560, 81.33, 83.92, 90.14]),
    ("DEFER", [0.8394, 0.6367, 0.3943, 90.11, 88.25, 96.61], [0.6483, 0.6497, 0.6550, 88.00, 89.20, 90.93]),
    ("Oracle", [0.8429, 0.6441, 0.3891, 100.00, 100.00, 100.00], [0.6537, 0.6540, 0.6436, 100.00, 100.00, 100.00]),
];

fn ri_identity() -> Outcome {
    let kinds = [MetricKind::Auc, MetricKind::PrAuc, MetricKind::Nll];
    let (pre, ora) = (TABLE[0], TABLE[11]);
    let mut worst: f64 = 0.0;
    let mut misses = Vec::new();
    let mut cells = 0;
    for (name, a, b) in TABLE {
        for (row, pre, ora, data) in [(a, pre.1, ora.1, "criteo"), (b, pre.2, ora.2, "taobao")] {
            for (k, kind) in kinds.into_iter().enumerate() {
                let ri = relative_improvement(kind, row[k], pre[k], ora[k]).unwrap();
                let gap = (ri - row[3 + k]).abs();
                worst = worst.max(gap);
                cells += 1;
                if gap > 0.05 {
                    misses.push(format!("{name}/{data}/{kind:?}: {ri:.3} vs {:.2}", row[3 + k]));
                }
            }
        }
    }
    Outcome {
        pass: misses.is_empty(),
        detail: if misses.is_empty() {
            format!("{cells} cells, worst gap {worst:.4}pp")
        } else {
            misses.join("; ")
        },
    }
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn aggregate<'a>(reports: &'a [MetricReport], name: &str) -> &'a MetricReport {
    reports.iter().find(|r| r.method == name).unwrap_or_else(|| panic!("no report for {name}"))
}

fn end_to_end_ordering() -> Outcome {
    // (claim, per-seed verdicts)
    let claims = [
        "Oracle best AUC",
        "DEFER >= FNW",
        "FNW >= Vanilla-NoDup",
        "Vanilla-RN >= Vanilla-Win",
        "FNC-RN >= FNC",
        "FNW-RN >= FNW",
    ];
    let mut votes = [0usize; 6];
    let mut anchors_exact = true;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let events = generate_events(&GeneratorConfig::preset(Preset::CriteoLike).with_events(100_000).with_seed(seed)).unwrap();
        let cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
        let reports: Vec<MetricReport> = run_methods::<f32>(&cfg, &events, &MethodSpec::roster())
            .unwrap()
            .into_iter()
            .map(|r| r.report)
            .collect();
        let auc = |name: &str| aggregate(&reports, name).aggregate.auc;
        let oracle = auc(ORACLE);
        let verdicts = [
            reports.iter().all(|r| r.aggregate.auc <= oracle),
            auc("DEFER") >= auc("FNW"),
            auc("FNW") >= auc("Vanilla-NoDup"),
            auc("Vanilla-RN") >= auc("Vanilla-Win"),
            auc("FNC-RN") >= auc("FNC"),
            auc("FNW-RN") >= auc("FNW"),
        ];
        for (v, &ok) in votes.iter_mut().zip(&verdicts) {
            *v += usize::from(ok);
        }
        let ri = |name: &str| aggregate(&reports, name).ri.expect("anchors present");
        let (p, o) = (ri(PRETRAINED), ri(ORACLE));
        anchors_exact &= [p.auc, p.pr_auc, p.nll] == [0.0; 3] && [o.auc, o.pr_auc, o.nll] == [100.0; 3];
        per_seed.push(format!(
            "seed {seed}: Oracle {:.4} DEFER {:.4} FNW {:.4} NoDup {:.4}",
            oracle,
            auc("DEFER"),
            auc("FNW"),
            auc("Vanilla-NoDup")
        ));
    }
    for line in &per_seed {
        emit(&format!("    {line}"));
    }
    let majority = SEEDS.len() / 2 + 1;
    let tally: Vec<String> = claims
        .iter()
        .zip(votes)
        .map(|(c, v)| format!("{c} {v}/{}{}", SEEDS.len(), if v >= majority { "" } else { " (no majority)" }))
        .collect();
    Outcome {
        pass: votes.iter().all(|&v| v >= majority) && anchors_exact,
        detail: format!("{}; anchors at 0/100: {anchors_exact}", tally.join(", ")),
    }
}

const CLI_CONFIG: &str = r#"
seed = 4
streaming_hours = 24
events = "clicks.tsv"

[windows]
w1 = "15m"
w2 = "7d"

[model]
embedding_dim = 4
hidden = [16, 8]

[dp]
hidden = [8, 4]
"#;

fn delayfeed(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_delayfeed"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Runs every subcommand in two fresh directories and compares each output
/// file byte for byte.
fn cli_determinism() -> Outcome {
    let commands: [&[&str]; 5] = [
        &["generate", "--preset", "criteo-like", "--events", "8000", "--seed", "9", "--out", "clicks.tsv"],
        &["train", "--config", "run.toml", "--stream-policy", "real-neg-dup", "--loss", "defer", "--out-model", "model.bin", "--report", "train.txt"],
        &["evaluate", "--model", "model.bin", "--events", "clicks.tsv", "--report", "eval.txt"],
        &["sweep-window", "--config", "run.toml", "--candidates", "1d,3d", "--report", "sweep.txt"],
        &["compare", "--config", "run.toml", "--report", "compare.txt"],
    ];
    let outputs = [
        "clicks.tsv",
        "model.bin",
        "train.txt",
        "train.txt.jsonl",
        "eval.txt",
        "eval.txt.jsonl",
        "sweep.txt",
        "sweep.txt.jsonl",
        "compare.txt",
        "compare.txt.jsonl",
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        std::fs::write(dir.path().join("run.toml"), CLI_CONFIG).unwrap();
        for args in commands {
            if let Err(e) = delayfeed(dir.path(), args) {
                return Outcome { pass: false, detail: e };
            }
        }
    }
    let differing: Vec<&str> = outputs
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).ok() != std::fs::read(dirs[1].path().join(f)).ok())
        .collect();
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} commands, {} files identical", commands.len(), outputs.len())
        } else {
            format!("differs: {}", differing.join(", "))
        },
    }
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    criterion(&mut results, 1, "relative-improvement identity", Some(secs(1)), ri_identity);
    criterion(&mut results, 2, "biased label mix, Monte Carlo", Some(secs(60)), || run_checks(streams::label_mix_checks()));
    criterion(&mut results, 3, "importance-sampling unbiasedness", Some(secs(60)), || run_checks(losses::checks()));
    criterion(&mut results, 4, "gradient suite", Some(secs(30)), || run_checks(gradients::checks()));
    criterion(&mut results, 5, "multi-domain structure", None, || run_checks(star::checks()));
    criterion(&mut results, 6, "stream cardinalities", None, || run_checks(streams::cardinality_checks()));
    criterion(&mut results, 7, "metric enumeration", Some(secs(30)), || run_checks(metrics::checks()));
    criterion(&mut results, 8, "end-to-end ordering", Some(secs(600)), end_to_end_ordering);
    criterion(&mut results, 9, "generator calibration", Some(secs(60)), || run_checks(generator::checks()));
    criterion(&mut results, 10, "CLI determinism", None, cli_determinism);
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
