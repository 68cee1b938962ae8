use std::path::PathBuf;
use std::process::ExitCode;

use beran_cli::commands;
use beran_cli::config::RunConfig;
use beran_cli::Result;
use beran_core::probability::ClassifierKind;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "beran", version, about = "Conditional survival estimation with soft censoring indicators")]
struct Cli {
    /// TOML configuration; defaults are used for anything not given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Classifier {
    Logistic,
    Mlp,
    NadarayaWatson,
}

impl From<Classifier> for ClassifierKind {
    fn from(c: Classifier) -> Self {
        match c {
            Classifier::Logistic => ClassifierKind::Logistic,
            Classifier::Mlp => ClassifierKind::Mlp,
            Classifier::NadarayaWatson => ClassifierKind::NadarayaWatson,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated samples and a manifest.
    Simulate,
    /// Fit a censoring-probability model and save it as JSON.
    TrainClassifier {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        classifier: Option<Classifier>,
    },
    /// Cross-validated bandwidth selection.
    SelectBandwidth {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Saved probability model; indicators are replaced by its predictions.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Estimate conditional distribution functions at the configured points.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Monte-Carlo comparison of estimator variants.
    Study,
    /// Random-split analysis of a clinical dataset.
    RealData {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Numerical checks of the theory.
    Diagnostics {
        #[command(subcommand)]
        which: Diagnostic,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

#[derive(Subcommand)]
enum Diagnostic {
    Lemma1,
    Variance,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let threads = cfg.threads;
    commands::with_threads(threads, move || dispatch(cli.command, cfg))?
}

fn dispatch(command: Command, mut cfg: RunConfig) -> Result<()> {
    match command {
        Command::Simulate => {
            let files = commands::simulate(&cfg)?;
            println!("wrote {} files to {}", files.len(), cfg.out_dir.display());
        }
        Command::TrainClassifier { data, classifier } => {
            let r = commands::train_classifier(&cfg, data.as_deref(), classifier.map(Into::into))?;
            println!("model: {}", r.path.display());
            if let Some(ce) = r.validation_cross_entropy {
                println!("validation cross-entropy: {ce:.6}");
            }
        }
        Command::SelectBandwidth { data, model } => {
            if model.is_some() {
                cfg.fit.model = model;
            }
            let sel = commands::select_bandwidth(&cfg, data.as_deref())?;
            println!("h = {}", sel.h_best.value());
        }
        Command::Fit { data, model, bandwidth } => {
            if model.is_some() {
                cfg.fit.model = model;
            }
            if bandwidth.is_some() {
                cfg.fit.bandwidth = bandwidth;
            }
            for p in commands::fit(&cfg, data.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Study => {
            let (results, _) = commands::study(&cfg)?;
            for r in &results {
                for s in beran_core::evaluation::summarize(r, cfg.study.baseline, cfg.study.welch) {
                    let p = s.test.map_or(f64::NAN, |t| t.p_value);
                    println!(
                        "{:<9} {:<11} MISE {:.4e} (sd {:.2e}) p = {:.2e}{}",
                        commands::regime_name(r.regime),
                        s.variant.name(),
                        s.mean_mise,
                        s.sd_mise,
                        p,
                        if s.significant { " *" } else { "" }
                    );
                }
            }
        }
        Command::RealData { data } => {
            let files = commands::real_data(&cfg, data.as_deref())?;
            println!("wrote {} files to {}", files.len(), cfg.out_dir.display());
        }
        Command::Diagnostics { which: Diagnostic::Lemma1 } => {
            let s = commands::lemma1(&cfg)?;
            println!("checked {}, skipped {}, violations {}", s.checked, s.skipped, s.violations);
        }
        Command::Diagnostics { which: Diagnostic::Variance } => {
            let r = commands::variance(&cfg)?;
            let d = &r.diagnostic;
            println!("t = {:.4}: empirical {:.4e}, theoretical {:.4e}, ratio {:.3}", r.t, d.empirical, d.theoretical, d.ratio());
            let bad = r.minimality.iter().filter(|(_, o, h)| o > h).count();
            println!("oracle variance above hard-indicator variance at {bad} of {} times", r.minimality.len());
        }
        Command::PrintConfig => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
