use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use insitu::constraints::{build_constraint_set, ConstraintSpec};
use insitu::experiment::{
    aggregate, preset, read_records, render_table, run_experiment, write_summary_csv, ExperimentConfig,
    ExperimentError, Method, PRESETS,
};
use insitu::policy::{Policy, PolicyConfig};
use insitu::priors::{build_prior_set, PriorSpec};
use insitu::sampler::Sampler;
use insitu::sr_task::BenchmarkRegistry;
use insitu::traversal::TraversalState;
use insitu::Library;

#[derive(Parser)]
#[command(name = "insitu", version, about = "Constrained neural-guided symbolic search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and append one JSON line per run.
    Run {
        config: PathBuf,
        /// Replace the config's seeds (repeatable).
        #[arg(long)]
        seed: Vec<u64>,
        /// Set a config field, e.g. `trainer.learning_rate=0.001` (repeatable).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Results file; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump every sampled batch as JSON lines (debugging aid).
        #[arg(long)]
        dump_samples: Option<PathBuf>,
    },
    /// Aggregate a results file into recovery rate and mean steps.
    Summarize {
        results: PathBuf,
        /// Also write the summary as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact distribution over sequences under a uniform policy.
    Enumerate {
        /// Comma-separated `symbol:arity` pairs.
        #[arg(long, default_value = "+:2,sin:1,x:0")]
        library: String,
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        /// Constraint as JSON, e.g. '{"constraint":"length","max":5}' (repeatable).
        #[arg(long)]
        constraint: Vec<String>,
        /// Prior as JSON, e.g. '{"prior":"uniform_arity"}' (repeatable).
        #[arg(long)]
        prior: Vec<String>,
    },
    /// Check a config without running it.
    ValidateConfig {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print a preset experiment config as JSON.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        name: String,
        #[arg(long, value_enum, default_value_t = MethodArg::Dsr)]
        method: MethodArg,
        #[arg(long, value_delimiter = ',', default_value = "Nguyen-1")]
        benchmarks: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dsr,
    RandomSearch,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dsr => Method::Dsr,
            MethodArg::RandomSearch => Method::RandomSearch,
        }
    }
}

fn parse_library(text: &str) -> Result<Library, ExperimentError> {
    let pairs = text
        .split(',')
        .map(|item| {
            let (sym, arity) = item
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| ExperimentError::Config(format!("`{item}` is not symbol:arity")))?;
            let arity = arity
                .parse::<usize>()
                .map_err(|_| ExperimentError::Config(format!("bad arity in `{item}`")))?;
            Ok((sym.to_string(), arity))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let refs: Vec<(&str, usize)> = pairs.iter().map(|(s, a)| (s.as_str(), *a)).collect();
    Library::from_pairs(&refs).map_err(|e| ExperimentError::Config(e.to_string()))
}

fn parse_json<T: serde::de::DeserializeOwned>(items: &[String]) -> Result<Vec<T>, ExperimentError> {
    items
        .iter()
        .map(|s| serde_json::from_str(s).map_err(|e| ExperimentError::Config(format!("{s}: {e}"))))
        .collect()
}

fn load(config: &Path, overrides: &[String]) -> Result<ExperimentConfig, ExperimentError> {
    ExperimentConfig::load_with_overrides(config, overrides)
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            overrides,
            out,
            dump_samples,
        } => {
            let mut cfg = load(&config, &overrides)?;
            if !seed.is_empty() {
                cfg.seeds = seed;
            }
            if out.is_some() {
                cfg.output = out;
            }
            if dump_samples.is_some() {
                cfg.sample_dump = dump_samples;
            }
            let records = run_experiment(&cfg)?;
            print!("{}", render_table(&aggregate(&records)));
            if let Some(path) = &cfg.output {
                log::info!("appended {} records to {}", records.len(), path.display());
            }
        }
        Command::Summarize { results, out } => {
            let records = read_records(&results)?;
            if records.is_empty() {
                return Err(ExperimentError::Config(format!("{} holds no records", results.display())));
            }
            let rows = aggregate(&records);
            print!("{}", render_table(&rows));
            if let Some(path) = out {
                write_summary_csv(&rows, std::fs::File::create(path)?)?;
            }
        }
        Command::Enumerate {
            library,
            max_len,
            constraint,
            prior,
        } => {
            let library = parse_library(&library)?;
            let constraints = build_constraint_set(&parse_json::<ConstraintSpec>(&constraint)?, &library)?;
            constraints.check()?;
            constraints.mask(&TraversalState::new(&library), &library)?;
            let priors = build_prior_set(&parse_json::<PriorSpec>(&prior)?, &library)?;
            let policy = Policy::init(library.len(), &PolicyConfig::default(), 0)?;
            let e = Sampler::new(&library, &policy, &priors, &constraints)
                .enumerate(max_len)
                .map_err(ExperimentError::from)?;
            for (seq, p) in &e.probabilities {
                println!("{p:.12}\t{}", library.format(seq));
            }
            println!(
                "# sequences {}  total {:.12}  dead-end {:.3e}  truncated {:.3e}",
                e.probabilities.len(),
                e.total(),
                e.dead_end_mass,
                e.truncated_mass
            );
        }
        Command::ValidateConfig { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            cfg.validate(&BenchmarkRegistry::builtin())?;
            println!("ok {}", cfg.hash());
        }
        Command::Preset {
            name,
            method,
            benchmarks,
            seeds,
        } => {
            let names: Vec<&str> = benchmarks.iter().map(String::as_str).collect();
            let cfg = preset(&name, method.into(), &names, &seeds)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
