use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shaping_cli::config::ExperimentConfig;
use shaping_cli::{experiments, CliError};

#[derive(Parser)]
#[command(name = "shaping", version, about = "Train and evaluate shaped constellations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured scheme and write the best checkpoint
    Train(Common),
    /// Monte Carlo BMI over the SNR grid
    EvalBmi(Common),
    /// Spectral efficiency over the SNR grid
    EvalSe(Common),
    /// Coded BER with the 802.11n LDPC code over the SNR grid
    EvalBer(Common),
    /// Write the constellation at each grid SNR
    ExportConstellation(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated SNR grid in dB
    #[arg(long, value_delimiter = ',')]
    snr_db: Option<Vec<f64>>,
    /// Training iterations per seed
    #[arg(long)]
    iterations: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(n) = self.samples {
            c.samples = n;
        }
        if let Some(p) = &self.checkpoint {
            c.checkpoint = Some(p.clone());
        }
        if let Some(p) = &self.output_dir {
            c.output_dir = p.clone();
        }
        if let Some(g) = &self.snr_db {
            c.snr_db = g.clone();
        }
        if let Some(n) = self.iterations {
            c.train.insert("iterations".into(), toml::Value::Integer(n as i64));
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            let c = a.resolve()?;
            let (outcome, path) = experiments::train(&c, |seed, it, loss| {
                if (it + 1) % 100 == 0 {
                    eprintln!("seed {seed} iteration {} loss {loss:.4}", it + 1);
                }
            })?;
            for r in &outcome.runs {
                let v = r.history.final_validation_loss.map_or("failed".to_string(), |v| format!("{v:.4}"));
                eprintln!("seed {}: validation loss {v}", r.seed);
            }
            println!("{}", path.display());
        }
        Command::EvalBmi(a) => println!("{}", experiments::eval_bmi(&a.resolve()?)?.display()),
        Command::EvalSe(a) => println!("{}", experiments::eval_se(&a.resolve()?)?.display()),
        Command::EvalBer(a) => println!("{}", experiments::eval_ber(&a.resolve()?)?.display()),
        Command::ExportConstellation(a) => {
            for p in experiments::export_constellation(&a.resolve()?)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
