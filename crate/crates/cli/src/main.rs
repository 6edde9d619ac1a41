//! `align`: run experiments, validate datasets, score and compare run logs,
//! export radar tables, and serve the HTTP API.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use align_core::dataset::{load_dataset, DatasetError};
use align_core::metrics::{divergence, export_radar, round1, score_runs, AlignmentReport};
use align_core::registry::AttributeRegistry;
use align_core::runner::{replay, run_from_file, RunLog};
use align_server::ServerConfig;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "align", version, about = "Run and analyse aligned decision-maker experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment. Exit code 0 = clean, 2 = completed with failures, 1 = fatal.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path overrides applied left to right, e.g. `target.value=low`.
        overrides: Vec<String>,
    },
    /// Validate a dataset file and report every violation.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// Attribute registry file; the bundled registry by default.
        #[arg(long)]
        attributes: Option<PathBuf>,
    },
    /// Score one or more run logs (pooled) against their dataset.
    Score {
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Pool high and low keys per attribute.
        #[arg(long)]
        by_attribute: bool,
        #[arg(long)]
        json: bool,
    },
    /// List scenarios where two runs chose differently.
    Compare {
        #[arg(long)]
        log_a: PathBuf,
        #[arg(long)]
        log_b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Tabulate per-attribute accuracy of several runs for radar plots.
    ExportRadar {
        #[arg(long)]
        dataset: PathBuf,
        /// `LABEL=LOG[,LOG...]`; logs of one series are pooled.
        #[arg(long = "series", required = true)]
        series: Vec<String>,
        /// Comma-separated attribute order; sorted by default.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<String>>,
        /// Report per label key instead of pooling high and low.
        #[arg(long)]
        per_key: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        /// Server config file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        runs_dir: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(dispatch(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

async fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run { config, overrides } => {
            let outcome = run_from_file(&config, &overrides).await?;
            let h = &outcome.log.header;
            eprintln!(
                "run {}: {} records, {} failures, digest {} -> {}",
                h.run_id,
                outcome.log.records.len(),
                outcome.log.failures(),
                h.config_digest,
                h.config.output.display()
            );
            Ok(outcome.status.exit_code() as u8)
        }
        Command::Validate { dataset, attributes } => {
            let registry = registry(attributes.as_ref())?;
            match load_dataset(&dataset, &registry) {
                Ok(d) => {
                    println!("{}: dataset `{}` is valid ({} scenarios)", dataset.display(), d.id, d.scenarios.len());
                    Ok(0)
                }
                Err(DatasetError::Validation(violations)) => {
                    for v in &violations {
                        println!("{}: {v}", dataset.display());
                    }
                    eprintln!("{} violation(s)", violations.len());
                    Ok(1)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Score {
            logs,
            dataset,
            by_attribute,
            json,
        } => {
            let reg = AttributeRegistry::bundled();
            let d = load_dataset(&dataset, &reg)?;
            let mut report = score_runs(&load_logs(&logs)?, &d);
            if by_attribute {
                report = report.by_attribute(&reg);
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report_table(&report));
            }
            Ok(0)
        }
        Command::Compare { log_a, log_b, json } => {
            let a = load_log(&log_a)?;
            let b = load_log(&log_b)?;
            let rep = divergence(&a, &b)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            } else {
                println!("{} vs {}: {} shared, {} diverge", rep.run_a, rep.run_b, rep.shared, rep.entries.len());
                let show = |c: Option<usize>| c.map(|c| c.to_string()).unwrap_or_else(|| "error".into());
                for e in &rep.entries {
                    println!("{}\t{}\t{}", e.scenario_id, show(e.choice_a), show(e.choice_b));
                }
                if !rep.only_in_a.is_empty() || !rep.only_in_b.is_empty() {
                    println!("only in a: {}; only in b: {}", rep.only_in_a.len(), rep.only_in_b.len());
                }
            }
            Ok(0)
        }
        Command::ExportRadar {
            dataset,
            series,
            order,
            per_key,
            format,
            out,
        } => {
            let reg = AttributeRegistry::bundled();
            let d = load_dataset(&dataset, &reg)?;
            let mut reports = Vec::new();
            for s in &series {
                let Some((label, files)) = s.split_once('=') else {
                    bail!("--series expects LABEL=LOG[,LOG...], got `{s}`");
                };
                let paths: Vec<PathBuf> = files.split(',').map(PathBuf::from).collect();
                let mut r = score_runs(&load_logs(&paths)?, &d);
                if !per_key {
                    r = r.by_attribute(&reg);
                }
                reports.push((label.to_string(), r));
            }
            let table = export_radar(&reports, order.as_deref())?;
            let text = match format {
                Format::Csv => table.to_csv()?,
                Format::Json => table.to_json() + "\n",
            };
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| path.display().to_string())?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Serve {
            config,
            bind,
            datasets,
            runs_dir,
            static_dir,
        } => {
            let mut cfg = match config {
                Some(path) => ServerConfig::load(&path)?,
                None => ServerConfig::default(),
            };
            if let Some(b) = bind {
                cfg.bind = b;
            }
            cfg.datasets.extend(datasets);
            cfg.runs_dir = runs_dir.or(cfg.runs_dir);
            cfg.static_dir = static_dir.or(cfg.static_dir);
            align_server::serve(cfg).await?;
            Ok(0)
        }
    }
}

fn registry(path: Option<&PathBuf>) -> Result<AttributeRegistry> {
    Ok(match path {
        Some(p) => AttributeRegistry::load(p)?,
        None => AttributeRegistry::bundled(),
    })
}

fn load_log(path: &Path) -> Result<RunLog> {
    let r = replay(path).with_context(|| path.display().to_string())?;
    for w in &r.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(r.log)
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<RunLog>> {
    paths.iter().map(|p| load_log(p)).collect()
}

fn report_table(r: &AlignmentReport) -> String {
    let pct = |v: Option<f64>| v.map(|v| format!("{:.1}", round1(v))).unwrap_or_else(|| "-".into());
    let width = r.per_attribute.keys().map(String::len).max().unwrap_or(4).max(4);
    let mut out = format!("{:width$}  {:>8}  {:>9}  {:>9}  {:>8}\n", "key", "scored", "correct", "skipped", "accuracy");
    for (k, s) in &r.per_attribute {
        out.push_str(&format!(
            "{k:width$}  {:>8}  {:>9}  {:>9}  {:>8}\n",
            s.n_scored,
            s.n_correct,
            s.n_skipped,
            pct(s.accuracy_pct)
        ));
    }
    out.push_str(&format!("{:width$}  {:>8}  {:>9}  {:>9}  {:>8}\n", "mean", "", "", "", pct(r.mean_accuracy_pct)));
    if r.n_failures_counted_incorrect > 0 {
        out.push_str(&format!("failed decisions counted incorrect: {}\n", r.n_failures_counted_incorrect));
    }
    out
}
