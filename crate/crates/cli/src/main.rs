use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coldstart::data::{generate_synthetic, ingest, RatingScale, SyntheticSpec};
use coldstart::harness::{alpha_sweep, render_table, run_experiment, ExperimentConfig};
use coldstart::{Error, Result};

#[derive(Parser)]
#[command(name = "coldstart", version, about = "Active learning simulator for new-item cold start")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a ratings/attributes corpus and print statistics.
    Ingest {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        attributes: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        rating_min: f64,
        #[arg(long, default_value_t = 5.0)]
        rating_max: f64,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        attributes: PathBuf,
        #[arg(long, default_value_t = 300)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 50)]
        attrs: usize,
        #[arg(long, default_value_t = 4)]
        latent_dim: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run an experiment and write its JSON report.
    Run {
        /// Experiment config (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; overrides `output` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Vary alpha for the fixed-budget selector and print (alpha, PFR, RMSE).
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4")]
        alphas: Vec<f64>,
        /// Also write the table as CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pretty-print a report file.
    Report { path: PathBuf },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            ratings,
            attributes,
            rating_min,
            rating_max,
        } => {
            let store = ingest(&ratings, &attributes, RatingScale { min: rating_min, max: rating_max })?;
            let cells = (store.num_users() * store.num_items()).max(1) as f64;
            let mean = store.ratings().iter().map(|r| r.value).sum::<f64>() / store.num_ratings().max(1) as f64;
            println!("users    {}", store.num_users());
            println!("items    {}", store.num_items());
            println!("attrs    {}", store.num_attrs());
            println!("ratings  {}", store.num_ratings());
            println!("density  {:.6}", store.num_ratings() as f64 / cells);
            println!("mean     {mean:.4}");
        }
        Command::Synth {
            ratings,
            attributes,
            users,
            items,
            attrs,
            latent_dim,
            density,
            noise,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_users: users,
                n_items: items,
                n_attrs: attrs,
                latent_dim,
                density,
                noise_std: noise,
                seed,
            };
            let store = generate_synthetic(&spec, RatingScale::default())?;
            store.write_corpus(&ratings, &attributes)?;
            println!(
                "wrote {} ratings over {} users and {} items",
                store.num_ratings(),
                store.num_users(),
                store.num_items()
            );
        }
        Command::Run { config, output } => {
            let mut config = load_config(config.as_ref())?;
            if output.is_some() {
                config.output = output;
            }
            let report = run_experiment(&config)?;
            let value = serde_json::from_str(&report.to_json_string()).expect("report is valid JSON");
            print!("{}", render_table(&value)?);
            if let Some(path) = &config.output {
                println!("report written to {}", path.display());
            }
        }
        Command::Sweep { config, alphas, output } => {
            let config = load_config(config.as_ref())?;
            let sweep = alpha_sweep(&config, &alphas)?;
            let csv = sweep.to_csv();
            print!("{csv}");
            if let Some(path) = output {
                std::fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::Report { path } => {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("{}: not a JSON report: {e}", path.display())))?;
            print!("{}", render_table(&value)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
