//! `neganchor` — corpus construction, evaluation, sweeps, report
//! rendering, and synthetic task generation from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 provider failure,
//! 4 partial run (flagged items present in the report).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use neganchor_core::harness::{
    generate_synthetic_task, prepare_corpora, render_report, run_experiment, sweep_mn, EvalReport,
    ExperimentConfig, HarnessError, ReportFormat, SynthParams,
};

#[derive(Parser)]
#[command(
    name = "neganchor",
    about = "Negative-anchored demonstration selection for few-shot in-context learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the positive/negative exemplar corpora for a dataset.
    BuildCorpus {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate every configured strategy over the test half.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Run only the strategy with this display name,
        /// e.g. "neg-anchored(m=1,n=1)".
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Evaluate neg-anchored(m, total-m) for m = 0..=total.
    Sweep {
        #[arg(long)]
        total: usize,
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a saved report.json as a table.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
    /// Generate the synthetic offline validation task into a directory.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_with(e.exit_code())
        }
    }
}

fn exit_with(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}

fn report_exit(report: &EvalReport) -> ExitCode {
    let flagged = report.flagged_count();
    if flagged > 0 {
        eprintln!("partial run: {flagged} flagged trace rows");
        exit_with(4)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::BuildCorpus { config } => {
            let config = ExperimentConfig::load(&config)?;
            let corpus_path = config.corpus_file();
            if corpus_path.exists() {
                return Err(HarnessError::Config(format!(
                    "corpus already exists at {}; remove it to rebuild",
                    corpus_path.display()
                )));
            }
            let pair = prepare_corpora(&config)?;
            println!(
                "corpus written to {} ({} positives, {} negatives)",
                corpus_path.display(),
                pair.positives.len(),
                pair.negatives.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { config, strategy } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(name) = strategy {
                config.strategies.retain(|s| s.display_name() == name);
                if config.strategies.is_empty() {
                    return Err(HarnessError::Config(format!(
                        "no strategy named {name:?} in config"
                    )));
                }
            }
            let report = run_experiment(&config)?;
            print!("{}", render_report(&report, ReportFormat::Markdown));
            println!("report written to {}", config.output_dir.display());
            Ok(report_exit(&report))
        }
        Command::Sweep { total, config } => {
            let config = ExperimentConfig::load(&config)?;
            let report = sweep_mn(&config, total)?;
            print!("{}", render_report(&report, ReportFormat::Markdown));
            println!("report written to {}", config.output_dir.display());
            Ok(report_exit(&report))
        }
        Command::Report { report, format } => {
            let text = std::fs::read_to_string(&report).map_err(|e| {
                HarnessError::Config(format!("cannot read {}: {e}", report.display()))
            })?;
            let parsed: EvalReport = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("bad report JSON: {e}")))?;
            for summary in &parsed.strategies {
                if let Some((correct, total)) = parsed.accuracy_from_trace(&summary.name) {
                    if correct != summary.correct || total != summary.total {
                        return Err(HarnessError::Config(format!(
                            "report is internally inconsistent for {}",
                            summary.name
                        )));
                    }
                }
            }
            let fmt = match format {
                Format::Md => ReportFormat::Markdown,
                Format::Csv => ReportFormat::Csv,
            };
            print!("{}", render_report(&parsed, fmt));
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { seed, out } => {
            let params = SynthParams::reference(seed);
            let task = generate_synthetic_task(&params)?;
            task.write_to_dir(&out, &params)?;
            println!("synthetic task written to {}", out.display());
            println!(
                "run: neganchor eval --config {}",
                out.join("config.json").display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
