use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use viscal_cli::config::ExperimentConfig;
use viscal_cli::pipeline::{load_dataset, report, Experiment};
use viscal_cli::{exit_code, io, run_experiment, with_workers, write_manifest, write_verification};

#[derive(Parser)]
#[command(name = "viscal", version, about = "Calibrate and verify ensemble visibility forecasts")]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set mlp.epochs=50`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`)
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads; defaults to VISCAL_WORKERS or all cores
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as CSV files
    Generate,
    /// Fit every configured model for one forecast date
    Train {
        #[arg(long)]
        date: NaiveDate,
    },
    /// Predict PMFs for the verification period
    Predict,
    /// Build multivariate samples from predicted PMFs
    Mv,
    /// Score PMFs and multivariate samples
    Verify,
    /// Bootstrap intervals and skill scores from score series
    Report,
    /// Predict, construct, verify and report in one pass
    Run,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { viscal_cli::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = cli.output {
        config.output_dir = out;
    }
    let out = config.output_dir.clone();
    with_workers(cli.workers, move || dispatch(cli.command, config, out))?
}

fn dispatch(command: Command, config: ExperimentConfig, out: PathBuf) -> Result<()> {
    match command {
        Command::Generate => {
            let ds = load_dataset(&config)?;
            let paths = viscal_core::write_csv(&ds, &out)?;
            println!("wrote {} stations, {} cases to {}", ds.stations().len(), ds.n_cases(), paths.forecasts.display());
        }
        Command::Train { date } => {
            let exp = Experiment::new(config)?;
            let models = exp.train(date)?;
            let dir = out.join("models");
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
            index.write_record(["model", "lead_time_h", "group", "stations", "file"])?;
            for m in &models {
                let file = format!("{}_{}_{}.json", m.name, m.lead_time_h, m.group);
                fs::write(dir.join(&file), m.artifact.to_json()?).with_context(|| format!("writing {file}"))?;
                let stations: Vec<&str> = m.stations.iter().map(|&s| exp.dataset.stations()[s].id.as_str()).collect();
                index.write_record([&m.name, &m.lead_time_h.to_string(), &m.group, &stations.join(";"), &file])?;
            }
            index.flush()?;
            println!("fitted {} models for {date}", models.len());
        }
        Command::Predict => {
            let exp = Experiment::new(config)?;
            let p = exp.predict()?;
            io::write_pmfs(&out.join(io::PMFS), &exp.dataset, &p.forecasts)?;
            if !p.clusters.is_empty() {
                io::write_clusters(&out.join(io::CLUSTERS), &exp.dataset, &p.clusters)?;
            }
            println!("wrote {} PMFs", p.forecasts.len());
        }
        Command::Mv => {
            let exp = Experiment::new(config)?;
            let pmfs = io::read_pmfs(&out.join(io::PMFS), &exp.dataset)?;
            let mv = exp.multivariate(&pmfs)?;
            io::write_mv(&out.join(io::MV_DIR), &exp.dataset, &mv)?;
            println!("wrote {} multivariate samples", mv.len());
        }
        Command::Verify => {
            let exp = Experiment::new(config)?;
            let pmfs = io::read_pmfs(&out.join(io::PMFS), &exp.dataset)?;
            let mv_dir = out.join(io::MV_DIR);
            let mv = if mv_dir.is_dir() { io::read_mv(&mv_dir, &exp.dataset)? } else { Vec::new() };
            let v = exp.verify(&pmfs, &mv)?;
            write_verification(&out, &v)?;
            print_scores(&v);
        }
        Command::Report => {
            let series = io::read_series(&out.join(io::SERIES))?;
            let rows = report(&config, &series)?;
            io::write_report(&out.join(io::REPORT), &rows)?;
            write_manifest(&out, &config)?;
            println!("wrote {} report rows", rows.len());
        }
        Command::Run => {
            let exp = Experiment::new(config)?;
            let r = run_experiment(&exp, &out)?;
            print_scores(&r.verification);
            println!("outputs in {}", out.display());
        }
    }
    Ok(())
}

fn print_scores(v: &viscal_cli::pipeline::Verification) {
    for s in &v.scores {
        println!("{:<22} {:>4} h {:<5} {:>14.6} (n={})", s.model, s.lead_time_h, s.score.as_str(), s.mean, s.n_cases);
    }
}
