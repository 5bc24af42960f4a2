use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use issuespecter_core::config::PipelineConfig;
use issuespecter_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(
    name = "issuespecter",
    about = "Coverage-guided issue triage: turn uncovered code segments into ranked issue reports",
    version
)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the configured backend (mock or live).
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Override the mock backend seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phase 1: extract uncovered segments from the coverage report.
    Analyze,
    /// Phase 2: generate issue reports for every uncovered segment.
    Generate,
    /// Phases 3-4: select the top-k by rule and re-rank with the LLM.
    Rank,
    /// Apply candidate fixes of the selected issues and count regressions.
    Harness,
    /// Score the rule and LLM orderings against a golden annotation file.
    Eval {
        /// Golden annotation JSON for this project.
        golden: PathBuf,
    },
    /// Emit one Markdown file per selected issue plus a ranked index.
    Report,
    /// Full pipeline: analyze, generate, rank, report, manifest.
    Run,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| PipelineError::Input("--config <FILE> is required".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(backend) = &cli.backend {
        config.backend = backend.parse()?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Analyze => {
            let output = pipeline::cmd_analyze(&config)?;
            println!(
                "{:<12} {:>10} {:>10} {:>10} {:>10}",
                "project", "segments", "max", "min", "mean"
            );
            println!(
                "{:<12} {:>10} {:>10} {:>10} {:>10.2}",
                config.project_name,
                output.stats.segment_count,
                output.stats.max_lines,
                output.stats.min_lines,
                output.stats.mean_lines
            );
            println!(
                "wrote {} and {}",
                config.output_dir.join(pipeline::SEGMENTS_FILE).display(),
                config.output_dir.join(pipeline::SEGMENT_STATS_FILE).display()
            );
        }
        Command::Generate => {
            let output = pipeline::cmd_generate(&config)?;
            let s = &output.summary;
            println!(
                "segments {} | issues {} | with bug {} | padded {} | schema failures {} | transport failures {}",
                s.segments_processed,
                s.issues_generated,
                s.issues_with_bug,
                s.padded_entries,
                s.schema_failures,
                s.transport_failures
            );
            if s.schema_failures > 0 {
                eprintln!("warning: {} segment(s) skipped after schema violations", s.schema_failures);
            }
            println!("wrote {}", config.output_dir.join(pipeline::ISSUES_FILE).display());
        }
        Command::Rank => {
            let ranked = pipeline::cmd_rank(&config)?;
            println!("{:<6} {:<6} {:<8} issue", "rule", "llm", "failing");
            for entry in &ranked.entries {
                let llm = entry.llm_rank.map(|r| r.to_string()).unwrap_or("-".into());
                let failing = entry
                    .failing_test_count
                    .map(|n| n.to_string())
                    .unwrap_or_else(|| "n/v".into());
                println!("{:<6} {:<6} {:<8} {}", entry.rule_rank, llm, failing, entry.issue_id);
            }
            if ranked.llm_ranking_failed {
                eprintln!("warning: LLM re-rank rejected after retries; only rule ranks available");
            }
            println!("wrote {}", config.output_dir.join(pipeline::RANKING_FILE).display());
        }
        Command::Harness => {
            let results = pipeline::cmd_harness(&config)?;
            for result in &results {
                println!(
                    "{:<14} failing {:<3} {}",
                    format!("{:?}", result.status).to_lowercase(),
                    result.failing_test_count,
                    result.issue_id
                );
            }
            println!("wrote {}", config.output_dir.join(pipeline::REGRESSIONS_FILE).display());
        }
        Command::Eval { golden } => {
            let report = pipeline::cmd_eval(&config, golden)?;
            print!("{}", report.to_csv());
            println!(
                "wrote {} and {}",
                config.output_dir.join(pipeline::METRICS_JSON_FILE).display(),
                config.output_dir.join(pipeline::METRICS_CSV_FILE).display()
            );
        }
        Command::Report => {
            let written = pipeline::cmd_report(&config)?;
            println!(
                "wrote {} file(s) under {}",
                written.len(),
                config.output_dir.join(pipeline::REPORTS_DIR).display()
            );
        }
        Command::Run => {
            let manifest = pipeline::cmd_run(&config)?;
            for phase in &manifest.phases {
                let state = if phase.skipped { "skipped (resumed)" } else { "done" };
                println!("{:<10} {}", phase.name, state);
            }
            println!(
                "segments {} | issues {} | selected {}",
                manifest.segment_count, manifest.issue_count, manifest.selected_count
            );
            println!("wrote {}", config.output_dir.join(pipeline::MANIFEST_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
