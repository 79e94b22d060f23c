//! `gial` — generate synthetic networked observational data, analyze graph
//! structure imbalance, and train/ablate/sweep treatment effect models.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gial_core::experiment::{
    analyze_files, exit_code, load_gen_config, load_train_config, run_ablation, run_experiment,
    run_generate, run_sweep,
};
use gial_core::{EncoderKind, Error, TrainConfig};

#[derive(Parser)]
#[command(
    name = "gial",
    version,
    about = "Treatment effect estimation on networked data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory from a generator config.
    Generate {
        /// Generator config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the manifest and component files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Edge census of a graph against a treatment assignment.
    Analyze {
        /// Edge list file (one `u<TAB>v` per line, `#` comments).
        #[arg(long)]
        edges: PathBuf,
        /// Treatment column CSV (one 0/1 entry per node).
        #[arg(long)]
        treatment: PathBuf,
        /// Also append the census as a CSV row to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train one model and write report.json plus trace.csv.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the full model and both ablations (no_smi, no_cd).
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train one model per (alpha, beta) grid point and write sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated alpha grid; defaults to the published range.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Comma-separated beta grid; defaults to the published range.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    /// Training config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for reports and traces.
    #[arg(long)]
    out: PathBuf,

    // Individual overrides; any value given here wins over the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_encoder)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    rep_dim: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    attention_heads: Option<usize>,
    #[arg(long)]
    generator_layers: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

fn parse_encoder(s: &str) -> Result<EncoderKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "gcn" => Ok(EncoderKind::Gcn),
        "gat" => Ok(EncoderKind::Gat),
        other => Err(format!("unknown encoder `{other}`; expected gcn or gat")),
    }
}

impl RunArgs {
    fn config(&self) -> Result<TrainConfig, Error> {
        let mut cfg = load_train_config(self.config.as_deref())?;
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            seed,
            alpha,
            beta,
            encoder,
            rep_dim,
            encoder_layers,
            attention_heads,
            generator_layers,
            learning_rate,
            l2,
            patience,
            max_epochs
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

const DEFAULT_GRID: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = load_gen_config(&config)?;
            run_generate(&cfg, &out)?;
            eprintln!("wrote dataset to {}", out.display());
        }
        Command::Analyze {
            edges,
            treatment,
            csv,
        } => {
            let report = analyze_files(&edges, &treatment)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = csv {
                use gial_core::experiment::AnalyzeReport;
                let mut text = if path.exists() {
                    std::fs::read_to_string(&path)?
                } else {
                    AnalyzeReport::csv_header().to_string()
                };
                text.push_str(&report.csv_row());
                std::fs::write(&path, text)?;
            }
        }
        Command::Train { run } => {
            let cfg = run.config()?;
            let report = run_experiment(&run.manifest, &cfg, &run.out)?;
            eprintln!(
                "trained seed {}: sqrt_pehe {:.4}, eps_ate {:.4} ({} epochs, best {})",
                report.seed, report.sqrt_pehe, report.eps_ate, report.epochs_run, report.best_epoch
            );
            eprintln!("wrote {}", run.out.join("report.json").display());
        }
        Command::Ablate { run } => {
            let cfg = run.config()?;
            let reports = run_ablation(&run.manifest, &cfg, &run.out)?;
            for r in &reports {
                eprintln!(
                    "{:>6}: sqrt_pehe {:.4}, eps_ate {:.4}",
                    r.variant, r.sqrt_pehe, r.eps_ate
                );
            }
            eprintln!("wrote reports to {}", run.out.display());
        }
        Command::Sweep { run, alphas, betas } => {
            let cfg = run.config()?;
            let alphas = alphas.unwrap_or_else(|| DEFAULT_GRID.to_vec());
            let betas = betas.unwrap_or_else(|| DEFAULT_GRID.to_vec());
            let points = run_sweep(&run.manifest, &cfg, &alphas, &betas, &run.out)?;
            eprintln!(
                "swept {} grid points; wrote {}",
                points.len(),
                run.out.join("sweep.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
