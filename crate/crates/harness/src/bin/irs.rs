//! `irs` command line: run or tune experiments, generate synthetic bundles
//! and build monthly feature bundles from transaction CSVs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use irs_core::simgen::{gen_exp1, gen_exp2, DataStream, Exp2Config, StreamMeta, StreamSource};
use irs_harness::bundle::{read_json, write_bundle, BundleLabels};
use irs_harness::experiment::{run_experiment, run_tuning, ExperimentConfig};
use irs_harness::report::write_rows;
use irs_harness::transactions::{build_features, load_transactions, FeatureSpec};
use irs_harness::{HarnessError, Result};
use log::{error, info};

#[derive(Parser)]
#[command(name = "irs", version, about = "Sequential sparse regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Grid-search (lambda, tau) on the first seed's stream and emit the score table.
    Tune {
        #[arg(long)]
        config: PathBuf,
        /// Score table destination; defaults to `scores.csv` in the config's
        /// output directory, or stdout when none is set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic stream as a CSV bundle.
    Gen {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        exp: u8,
        #[arg(long)]
        p: usize,
        #[arg(long = "T")]
        n_epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build monthly epochs from a transaction CSV.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON feature spec (column names, filters, fields).
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let result = run_experiment(&cfg)?;
    for a in result.report.aggregates() {
        println!(
            "{:<12} {:<5} epoch {:>3}  mean {:.6}  std {:.6}  n {}  failed {}",
            a.method, a.metric, a.epoch, a.mean, a.std, a.n, a.failed
        );
    }
    if let Some(dir) = &cfg.output_dir {
        info!("outputs written to {}", dir.display());
    }
    Ok(())
}

fn tune(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let (best, table) = run_tuning(&cfg)?;
    let dest = out.or_else(|| cfg.output_dir.as_ref().map(|d| d.join("scores.csv")));
    match dest {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| HarnessError::Data(e.to_string()))?;
            }
            write_rows(&path, &table)?;
            info!("score table written to {}", path.display());
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for r in &table {
                w.serialize(r).map_err(|e| HarnessError::Data(e.to_string()))?;
            }
            w.flush().map_err(|e| HarnessError::Data(e.to_string()))?;
        }
    }
    eprintln!("selected lambda = {} tau = {}", best.lambda, best.tau);
    Ok(())
}

fn gen(exp: u8, p: usize, n_epochs: usize, seed: u64, out: &Path) -> Result<()> {
    let stream = match exp {
        1 => gen_exp1(p, n_epochs, seed),
        _ => gen_exp2(p, n_epochs, seed, &Exp2Config::default()),
    }
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let labels = BundleLabels {
        seeded: true,
        ..BundleLabels::default()
    };
    write_bundle(&stream, out, &labels)?;
    info!("wrote {} epochs to {}", stream.len(), out.display());
    Ok(())
}

fn features(input: &Path, map: Option<&Path>, out: &Path) -> Result<()> {
    let spec: FeatureSpec = match map {
        Some(path) => read_json(path).map_err(|e| match e {
            HarnessError::Data(msg) => HarnessError::Config(msg),
            other => other,
        })?,
        None => FeatureSpec::default(),
    };
    let loaded = load_transactions(input, &spec.columns, spec.date_format.as_deref())?;
    if loaded.dropped > 0 {
        eprintln!("dropped {} unparseable rows", loaded.dropped);
    }
    let fs = build_features(&loaded.records, &spec)?;
    let p = fs.columns.len();
    let stream = DataStream {
        meta: StreamMeta {
            p,
            n_epochs: fs.epochs.len(),
            seed: 0,
            source: StreamSource::External {
                origin: input.display().to_string(),
            },
        },
        epochs: fs.epochs,
        truth: None,
    };
    let labels = BundleLabels {
        columns: Some(fs.columns),
        epoch_labels: Some(fs.months),
        seeded: false,
    };
    write_bundle(&stream, out, &labels)?;
    eprintln!(
        "{} records, {} epochs, {p} columns written to {}",
        loaded.records.len(),
        stream.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run(&config),
        Command::Tune { config, out } => tune(&config, out),
        Command::Gen {
            exp,
            p,
            n_epochs,
            seed,
            out,
        } => gen(exp, p, n_epochs, seed, &out),
        Command::Features { input, map, out } => features(&input, map.as_deref(), &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
