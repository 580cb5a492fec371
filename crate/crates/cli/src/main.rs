//! `delayfeed`: generate synthetic click logs, train and evaluate
//! delayed-feedback streaming models.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use delayfeed::harness::{
    evaluate_model, generate_events, load_events, model_metadata, parse_duration_list, run_roster,
    save_events, sweep_window, train_configured, AnyModel, ColumnProfile, ExperimentConfig,
    GeneratorConfig, MethodSpec, Preset,
};
use delayfeed::losses::LossKind;
use delayfeed::metrics::{render_jsonl, render_table, HourWeighting, MetricReport};
use delayfeed::snapshot::Snapshot;
use delayfeed::stream::{ClickEvent, StreamPolicy};
use delayfeed::{Error, Result};

type Real = f32;

#[derive(Parser)]
#[command(name = "delayfeed", version, about = "Delayed-feedback conversion modeling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic click log in the native tab-separated layout.
    Generate {
        #[arg(long, default_value = "criteo-like")]
        preset: Preset,
        #[arg(long, default_value_t = 100_000)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of domains; ids are drawn with Zipf frequencies.
        #[arg(long, default_value_t = 1)]
        domains: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain, stream one method over the log and save the final model.
    Train {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        stream_policy: Option<StreamPolicy>,
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long)]
        out_model: PathBuf,
        /// Report path; the table goes to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a saved model hour by hour against eventual labels.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Column profile; defaults to the one the model was trained with.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Train the configured loss on the w3-approximated stream for each
    /// candidate window.
    SweepWindow {
        #[command(flatten)]
        input: Input,
        /// Comma-separated durations, e.g. "1d,3d,5d".
        #[arg(long)]
        candidates: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every method of the comparison roster on one split.
    Compare {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    config: PathBuf,
    /// Click log; overrides `events` in the config.
    #[arg(long)]
    events: Option<PathBuf>,
}

impl Input {
    fn load(&self) -> Result<(ExperimentConfig, Vec<ClickEvent>)> {
        let cfg = ExperimentConfig::load(&self.config)?;
        let path = match (&self.events, &cfg.events) {
            (Some(p), _) => p.clone(),
            // relative to the config file
            (None, Some(p)) => self.config.parent().unwrap_or(Path::new("")).join(p),
            (None, None) => return Err(Error::Config("no click log: pass --events or set `events`".into())),
        };
        let domains = cfg.model.num_domains.unwrap_or(u16::MAX as usize);
        let events = load_events(&path, &ColumnProfile::by_name(&cfg.profile, domains)?)?;
        Ok((cfg, events))
    }
}

fn write_reports(path: Option<&Path>, reports: &[MetricReport]) -> Result<()> {
    let table = render_table(reports);
    match path {
        Some(p) => {
            fs::write(p, &table)?;
            let mut jsonl = p.as_os_str().to_owned();
            jsonl.push(".jsonl");
            fs::write(jsonl, render_jsonl(reports))?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { preset, events, seed, domains, out } => {
            let cfg = GeneratorConfig::preset(preset).with_events(events).with_seed(seed).with_domains(domains);
            let log = generate_events(&cfg)?;
            save_events(&out, &log)?;
            log::info!("wrote {} clicks to {}", log.len(), out.display());
        }
        Command::Train { input, stream_policy, loss, out_model, report } => {
            let (mut cfg, events) = input.load()?;
            cfg.stream_policy = stream_policy.unwrap_or(cfg.stream_policy);
            cfg.loss_kind = loss.unwrap_or(cfg.loss_kind);
            cfg.validate()?;
            let run = train_configured::<Real>(&cfg, &events)?;
            let meta = model_metadata(&cfg, &MethodSpec::from_config(&cfg));
            run.model.to_snapshot(meta).save(&out_model)?;
            write_reports(report.as_deref(), &[run.report])?;
        }
        Command::Evaluate { model, events, report, profile } => {
            let snap = Snapshot::<Real>::load(&model)?;
            let net = AnyModel::from_snapshot(&snap)?;
            let meta = snap.metadata.get("extra").cloned().unwrap_or_default();
            let field = |key: &str| meta.get(key).ok_or_else(|| Error::Snapshot(format!("model metadata lacks '{key}'")));
            let loss: LossKind = field("loss_kind")?
                .as_str()
                .ok_or_else(|| Error::Snapshot("bad loss_kind".into()))?
                .parse()
                .map_err(|e: Error| Error::Snapshot(e.to_string()))?;
            let w2 = field("w2")?.as_u64().ok_or_else(|| Error::Snapshot("bad w2".into()))?;
            let name = field("method")?.as_str().unwrap_or("model").to_string();
            let profile = match profile {
                Some(p) => p,
                None => meta.get("profile").and_then(|v| v.as_str()).unwrap_or("native").to_string(),
            };
            let domains = net.num_domains().unwrap_or(u16::MAX as usize);
            let log = load_events(&events, &ColumnProfile::by_name(&profile, domains)?)?;
            let rep = evaluate_model(&net, &log, w2, loss, &name, HourWeighting::Count)?;
            write_reports(report.as_deref(), &[rep])?;
        }
        Command::SweepWindow { input, candidates, report } => {
            let (cfg, events) = input.load()?;
            let candidates = parse_duration_list(&candidates)?;
            let reports = sweep_window::<Real>(&cfg, &events, &candidates)?;
            write_reports(report.as_deref(), &reports)?;
        }
        Command::Compare { input, report } => {
            let (cfg, events) = input.load()?;
            let reports = run_roster::<Real>(&cfg, &events)?;
            write_reports(report.as_deref(), &reports)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("delayfeed: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                e if e.is_data_error() => 3,
                _ => 1,
            })
        }
    }
}
