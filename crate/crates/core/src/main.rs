//! Command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dhmtl::data::{generate, write_dataset, GeneratorSpec};
use dhmtl::eval::experiment::{metrics_csv, report_json, summary_csv};
use dhmtl::eval::{
    evaluate_checkpoint, macro_f1, read_report, run_experiment, write_outputs, AblationFlags, Checkpoint,
    ExperimentConfig, MetricsReport,
};
use dhmtl::{data::read_dataset, Error, Result};

#[derive(Parser)]
#[command(name = "dhmtl", version, about = "Double-heterogeneity multi-task disease assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generator spec (TOML or JSON).
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a stored checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a config with ablation flags (tie_diseases, tie_patients,
    /// share_component_relationships, or wo_dh, wo_ph, wo_dr).
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        flags: String,
    },
    /// Print a stored report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn load_spec(path: &Path) -> Result<GeneratorSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let spec: GeneratorSpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
    };
    spec.validate()?;
    Ok(spec)
}

fn print_summary(report: &MetricsReport) {
    println!("method {:?} variant {} repeats {}", report.method, report.variant, report.repeats);
    for d in &report.per_disease {
        println!(
            "  {:<18} precision {:.4} ± {:.4}  recall {:.4} ± {:.4}  f1 {:.4} ± {:.4}",
            d.disease, d.precision.mean, d.precision.std, d.recall.mean, d.recall.std, d.f1.mean, d.f1.std
        );
    }
    println!("  macro f1 {:.4} ± {:.4}", report.macro_f1.mean, report.macro_f1.std);
    for n in &report.notes {
        println!("  note: {n}");
    }
}

fn experiment(cfg: &ExperimentConfig) -> Result<()> {
    let out = run_experiment(cfg)?;
    write_outputs(&out, &cfg.output)?;
    print_summary(&out.report);
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let spec = load_spec(&spec)?;
            let generated = generate(&spec)?;
            write_dataset(&out, &generated.dataset)?;
            let prevalence = generated.dataset.prevalence();
            println!("wrote {} patients to {}", generated.dataset.len(), out.display());
            for (name, p) in generated.dataset.meta.diseases.iter().zip(prevalence) {
                println!("  {name:<18} prevalence {p:.4}");
            }
        }
        Command::Train { config } => experiment(&ExperimentConfig::load(&config)?)?,
        Command::Ablate { config, flags } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.ablation = AblationFlags::parse_list(&flags)?;
            cfg.output = cfg.output.join(cfg.ablation.label());
            experiment(&cfg)?
        }
        Command::Eval { checkpoint, data } => {
            let ck = Checkpoint::read(&checkpoint)?;
            let data = read_dataset(&data)?;
            let (_, metrics) = evaluate_checkpoint(&ck, &data)?;
            for (name, m) in ck.diseases.iter().zip(&metrics) {
                println!(
                    "{name:<18} precision {:.4}  recall {:.4}  f1 {:.4}",
                    m.precision, m.recall, m.f1
                );
            }
            println!("macro f1 {:.4}", macro_f1(&metrics));
        }
        Command::Report { input, format } => {
            let report = read_report(&input)?;
            match format {
                Format::Json => print!("{}", report_json(&report)?),
                Format::Csv => {
                    print!("{}", summary_csv(&report)?);
                    println!();
                    print!("{}", metrics_csv(&report)?);
                }
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
