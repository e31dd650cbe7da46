use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dmlex::pipeline::{validate_config, Pipeline, Stage};
use dmlex::prune::ThresholdMode;

#[derive(Parser)]
#[command(name = "dmlex", version, about = "Build discourse-marker lexica from parallel corpora")]
struct Cli {
    /// Pipeline configuration (`key = value` lines).
    #[arg(long, global = true, default_value = "dmlex.conf")]
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Recompute every stage.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize and lowercase the raw corpus.
    Ingest,
    /// Sentence-align every language pair.
    Align,
    /// Train word alignment models and symmetrize.
    Wordalign,
    /// Extract and score phrase pairs.
    Phrases,
    /// Significance-prune phrase tables.
    Prune {
        /// alpha, alpha+e or a -ln p value.
        #[arg(long)]
        sig_threshold: Option<String>,
    },
    /// Select and filter marker translations.
    Markers,
    /// Assemble the multilingual lexicon.
    Lexicon,
    /// Run every stage.
    Pipeline {
        #[arg(long)]
        sig_threshold: Option<String>,
    },
    /// Print the last run report.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let mut config = match validate_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration errors:\n{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = cli.output {
        config.output_dir = dir;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if cli.no_cache {
        config.cache = false;
    }

    let (stages, threshold): (Option<Vec<Stage>>, Option<String>) = match cli.command {
        Command::Ingest => (Some(vec![Stage::Ingest]), None),
        Command::Align => (Some(vec![Stage::Align]), None),
        Command::Wordalign => (Some(vec![Stage::WordAlign]), None),
        Command::Phrases => (Some(vec![Stage::Phrases]), None),
        Command::Prune { sig_threshold } => (Some(vec![Stage::Prune]), sig_threshold),
        Command::Markers => (Some(vec![Stage::Markers]), None),
        Command::Lexicon => (Some(vec![Stage::Lexicon]), None),
        Command::Pipeline { sig_threshold } => (None, sig_threshold),
        Command::Report => {
            return match std::fs::read_to_string(config.output_dir.join("report.txt")) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("no report in {}: {e}", config.output_dir.display());
                    ExitCode::from(1)
                }
            };
        }
    };
    if let Some(t) = threshold {
        match ThresholdMode::parse(&t) {
            Ok(mode) => config.prune.mode = mode,
            Err(e) => {
                eprintln!("configuration errors:\n{e}");
                return ExitCode::from(2);
            }
        }
    }

    match Pipeline::new(config).run(stages.as_deref()) {
        Ok(report) => {
            print!("{}", report.to_text());
            if report.has_failures() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
