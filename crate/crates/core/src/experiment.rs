//! Reproducible experiment harness: configs, runs, persisted records and
//! recovery-rate summaries.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constraints::{build_constraint_set, ConstraintError, ConstraintSet, ConstraintSpec, Relationship};
use crate::library::{Library, TokenSpec};
use crate::policy::{Policy, PolicyConfig, PolicyError, Trainer, TrainerConfig};
use crate::priors::{build_prior_set, PriorError, PriorSet, PriorSpec};
use crate::sampler::{SampleError, Sampler};
use crate::sr_task::{reward_from_error, BenchmarkRegistry, RegressionTask, TaskError, RECOVERY_THRESHOLD};
use crate::traversal::TraversalState;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("infeasible constraints: {0}")]
    Infeasible(ConstraintError),
    #[error(transparent)]
    Sample(SampleError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Json(_) => 2,
            ExperimentError::Infeasible(_) => 3,
            _ => 1,
        }
    }
}

impl From<SampleError> for ExperimentError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::Constraint(c @ ConstraintError::InfeasibleStep { .. }) => ExperimentError::Infeasible(c),
            other => ExperimentError::Sample(other),
        }
    }
}

impl From<ConstraintError> for ExperimentError {
    fn from(e: ConstraintError) -> Self {
        match e {
            ConstraintError::InfeasibleStep { .. } => ExperimentError::Infeasible(e),
            other => ExperimentError::Config(other.to_string()),
        }
    }
}

impl From<PriorError> for ExperimentError {
    fn from(e: PriorError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dsr,
    RandomSearch,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dsr => "dsr",
            Method::RandomSearch => "random_search",
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One experiment row: a method with a prior/constraint set, run over a grid
/// of benchmarks and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Row label used by summaries.
    #[serde(default)]
    pub label: String,
    pub benchmarks: Vec<String>,
    pub method: Method,
    #[serde(default)]
    pub priors: Vec<PriorSpec>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Token library; defaults to the benchmark's own operator set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<Vec<TokenSpec>>,
    /// Sampling safety cap; defaults to twice the configured max length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<usize>,
    /// Restarts allowed per sequence when constraints dead-end mid-sequence;
    /// zero aborts the run on the first dead end.
    #[serde(default)]
    pub dead_end_retries: usize,
    /// JSONL file that records are appended to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Debug dump of every sampled batch (sequence, log_prob, reward).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dump: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Loads a config and applies `key.path=value` overrides first.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Trainer settings actually used; random search never updates.
    pub fn effective_trainer(&self) -> TrainerConfig {
        let mut t = self.trainer.clone();
        if self.method == Method::RandomSearch {
            t.learning_rate = 0.0;
        }
        t
    }

    /// Hex SHA-256 of the run-defining fields (everything but the seeds and
    /// the output paths).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output = None;
        c.sample_dump = None;
        c.trainer = self.effective_trainer();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn library_for(&self, benchmark_variables: usize) -> Result<Library, ExperimentError> {
        match &self.library {
            Some(specs) => Library::new(specs).map_err(|e| ExperimentError::Config(e.to_string())),
            None => Ok(Library::nguyen(benchmark_variables)),
        }
    }

    /// Checks everything that can fail before a run starts.
    pub fn validate(&self, registry: &BenchmarkRegistry) -> Result<(), ExperimentError> {
        if self.version != CONFIG_VERSION {
            return Err(ExperimentError::Config(format!("unsupported config version {}", self.version)));
        }
        if self.benchmarks.is_empty() || self.seeds.is_empty() {
            return Err(ExperimentError::Config("need at least one benchmark and one seed".into()));
        }
        self.trainer.validate().map_err(ExperimentError::Config)?;
        if self.policy.hidden == 0 {
            return Err(ExperimentError::Config("policy.hidden must be at least 1".into()));
        }
        for name in &self.benchmarks {
            let b = registry.get(name).map_err(|e| ExperimentError::Config(e.to_string()))?;
            let library = self.library_for(b.variables())?;
            crate::sr_task::Evaluator::new(&library).map_err(|e| ExperimentError::Config(e.to_string()))?;
            let (_, constraints) = self.build(&library)?;
            if constraints.max_length().is_none() && self.step_cap.is_none() {
                return Err(ExperimentError::Config(
                    "sampling needs a length constraint with a max or an explicit step_cap".into(),
                ));
            }
            constraints.mask(&TraversalState::new(&library), &library)?;
        }
        Ok(())
    }

    fn build(&self, library: &Library) -> Result<(PriorSet, ConstraintSet), ExperimentError> {
        let priors = build_prior_set(&self.priors, library)?;
        let constraints = build_constraint_set(&self.constraints, library)?;
        constraints.check()?;
        Ok((priors, constraints))
    }
}

/// Sets `dotted.key` in a JSON document. The value is parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ExperimentError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| ExperimentError::Config(format!("`{part}` is not an array index in `{key}`")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| ExperimentError::Config(format!("index {idx} out of range in `{key}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ExperimentError::Config(format!("cannot descend into `{part}` of `{key}`"))),
        };
    }
    Err(ExperimentError::Config("empty override key".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub label: String,
    pub method: Method,
    pub benchmark: String,
    pub seed: u64,
    pub solved: bool,
    /// Iteration of first recovery (1-based), or `max_iterations` if unsolved.
    pub steps_to_solve: usize,
    pub max_iterations: usize,
    /// Best training reward seen so far, after each iteration.
    pub best_reward_trace: Vec<f64>,
    pub best_expression: String,
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        a.wall_time_secs = other.wall_time_secs;
        a == *other
    }
}

/// Single-writer JSONL sink; every record is flushed as soon as it exists.
struct RecordSink {
    file: Option<Mutex<std::fs::File>>,
}

impl RecordSink {
    fn open(path: Option<&Path>) -> Result<Self, ExperimentError> {
        let file = match path {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        Ok(Self { file })
    }

    fn write(&self, record: &RunRecord) -> Result<(), ExperimentError> {
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(record)?;
            line.push('\n');
            let mut f = file.lock().expect("results file lock");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DumpLine<'a> {
    benchmark: &'a str,
    seed: u64,
    iteration: usize,
    sequence: String,
    log_prob: f64,
    reward: f64,
}

/// One `(benchmark, seed)` run: sample, reward, check recovery, update.
pub fn run_single(
    config: &ExperimentConfig,
    registry: &BenchmarkRegistry,
    benchmark: &str,
    seed: u64,
) -> Result<RunRecord, ExperimentError> {
    let mut dump = match &config.sample_dump {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let started = Instant::now();
    let bench = registry.get(benchmark)?;
    let library = config.library_for(bench.variables())?;
    let (priors, mut constraints) = config.build(&library)?;
    let task = RegressionTask::new(bench, &library, seed)?;
    let trainer_config = config.effective_trainer();
    let mut policy = Policy::init(library.len(), &config.policy, seed)?;
    let mut trainer = Trainer::new(trainer_config.clone(), &policy);
    let max_iterations = trainer_config.max_iterations;

    let mut best_reward = f64::NEG_INFINITY;
    let mut best_expression = String::new();
    let mut trace = Vec::with_capacity(max_iterations);
    let mut solved_at = None;
    for iteration in 1..=max_iterations {
        let mut sampler = Sampler::new(&library, &policy, &priors, &constraints);
        if let Some(cap) = config.step_cap {
            sampler = sampler.with_step_cap(cap);
        }
        sampler = sampler.with_dead_end_retries(config.dead_end_retries);
        let batch = sampler.sample_batch(seed, iteration as u64, trainer_config.batch_size)?;
        let sequences: Vec<&[usize]> = batch.iter().map(|r| r.sequence.as_slice()).collect();
        let errors = task.errors(&sequences)?;
        let rewards: Vec<f64> = errors.iter().map(|&e| reward_from_error(e)).collect();
        let mut recovered = None;
        for ((rec, &r), &e) in batch.iter().zip(&rewards).zip(&errors) {
            if r > best_reward {
                best_reward = r;
                best_expression = library.format(&rec.sequence);
            }
            // Only exact fits on the training data are worth a holdout check.
            if recovered.is_none() && e < RECOVERY_THRESHOLD && task.recovered(&rec.sequence)? {
                recovered = Some(library.format(&rec.sequence));
            }
        }
        if let Some(file) = dump.as_mut() {
            // One write per line keeps lines whole when runs share the file.
            for (rec, &r) in batch.iter().zip(&rewards) {
                let mut line = serde_json::to_string(&DumpLine {
                    benchmark,
                    seed,
                    iteration,
                    sequence: library.format(&rec.sequence),
                    log_prob: rec.log_prob,
                    reward: r,
                })?;
                line.push('\n');
                file.write_all(line.as_bytes())?;
            }
        }
        trace.push(best_reward);
        if let Some(expr) = recovered {
            best_expression = expr;
            solved_at = Some(iteration);
            break;
        }
        if constraints.has_systematic_blacklist() {
            constraints.record_sampled(sequences.iter().copied());
        }
        trainer.train_step(&mut policy, &batch, &rewards);
    }
    Ok(RunRecord {
        config_hash: config.hash(),
        label: config.label.clone(),
        method: config.method,
        benchmark: benchmark.to_string(),
        seed,
        solved: solved_at.is_some(),
        steps_to_solve: solved_at.unwrap_or(max_iterations),
        max_iterations,
        best_reward_trace: trace,
        best_expression,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Runs the whole `(benchmark, seed)` grid, appending each record to the
/// configured output as it completes. Records are returned in grid order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>, ExperimentError> {
    run_experiment_with(config, &BenchmarkRegistry::builtin())
}

pub fn run_experiment_with(config: &ExperimentConfig, registry: &BenchmarkRegistry) -> Result<Vec<RunRecord>, ExperimentError> {
    config.validate(registry)?;
    let sink = RecordSink::open(config.output.as_deref())?;
    let jobs: Vec<(&str, u64)> = config
        .benchmarks
        .iter()
        .flat_map(|b| config.seeds.iter().map(move |&s| (b.as_str(), s)))
        .collect();
    jobs.par_iter()
        .map(|&(bench, seed)| {
            let record = run_single(config, registry, bench, seed)?;
            log::info!(
                "{} {} seed {}: solved={} steps={} best={}",
                config.label,
                bench,
                seed,
                record.solved,
                record.steps_to_solve,
                record.best_expression
            );
            sink.write(&record)?;
            Ok(record)
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(ExperimentError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub method: Method,
    pub runs: usize,
    pub solved: usize,
    pub recovery_rate: f64,
    pub mean_steps: f64,
}

/// Recovery rate and mean steps per `(label, method)`; unsolved runs count
/// at their iteration cap.
pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, &'static str), Vec<&RunRecord>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in records {
        let key = (r.label.clone(), r.method.as_str());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let solved = rs.iter().filter(|r| r.solved).count();
            let steps: usize = rs
                .iter()
                .map(|r| if r.solved { r.steps_to_solve } else { r.max_iterations })
                .sum();
            SummaryRow {
                label: key.0.clone(),
                method: rs[0].method,
                runs: rs.len(),
                solved,
                recovery_rate: solved as f64 / rs.len() as f64,
                mean_steps: steps as f64 / rs.len() as f64,
            }
        })
        .collect()
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("experiment".len());
    let mut out = format!(
        "{:<width$}  {:<13}  {:>5}  {:>9}  {:>9}\n",
        "experiment", "method", "runs", "recovery", "steps"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:<13}  {:>5}  {:>8.1}%  {:>9.1}\n",
            r.label,
            r.method.as_str(),
            r.runs,
            100.0 * r.recovery_rate,
            r.mean_steps
        ));
    }
    out
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Named prior/constraint sets matching the comparison rows.
pub const PRESETS: &[&str] = &[
    "none",
    "lexicographical",
    "subtree_length",
    "trigonometric",
    "inverse",
    "soft_length",
    "max_length",
    "all_l",
    "all_s",
];

/// Restarts allowed by presets whose constraints can conflict (a commutative
/// ordering rule with a minimum length can close every option, e.g. after
/// `+ x1` with a minimum of four tokens).
const PRESET_DEAD_END_RETRIES: usize = 1000;

/// Loose cap that only guarantees termination.
const BASE_MAX_LENGTH: usize = 64;
/// Tighter bounds used by the length rows.
const MIN_LENGTH: usize = 4;
const MAX_LENGTH: usize = 32;

fn length(min: usize, max: usize) -> ConstraintSpec {
    ConstraintSpec::Length { min, max: Some(max) }
}

fn trig() -> ConstraintSpec {
    ConstraintSpec::Relational {
        targets: vec!["@trig".into()],
        effectors: vec!["@trig".into()],
        relationship: Relationship::Descendant,
    }
}

fn inverse() -> Vec<ConstraintSpec> {
    [("exp", "log"), ("log", "exp")]
        .iter()
        .map(|(t, e)| ConstraintSpec::Relational {
            targets: vec![t.to_string()],
            effectors: vec![e.to_string()],
            relationship: Relationship::Child,
        })
        .collect()
}

fn commutative(kind: &str) -> ConstraintSpec {
    let operators = vec!["@commutative".to_string()];
    if kind == "lexicographical" {
        ConstraintSpec::Lexicographical { operators }
    } else {
        ConstraintSpec::SubtreeLength { operators }
    }
}

fn soft_length() -> PriorSpec {
    PriorSpec::SoftLength { length: 10.0, sigma: 5.0 }
}

/// Builds the config for one preset row.
pub fn preset(name: &str, method: Method, benchmarks: &[&str], seeds: &[u64]) -> Result<ExperimentConfig, ExperimentError> {
    let base = length(1, BASE_MAX_LENGTH);
    let (priors, constraints) = match name {
        "none" => (vec![], vec![base]),
        "lexicographical" | "subtree_length" => (vec![], vec![base, commutative(name)]),
        "trigonometric" => (vec![], vec![base, trig()]),
        "inverse" => (vec![], std::iter::once(base).chain(inverse()).collect()),
        "soft_length" => (vec![soft_length()], vec![base]),
        "max_length" => (vec![], vec![length(MIN_LENGTH, MAX_LENGTH)]),
        "all_l" | "all_s" => {
            let mut c = vec![length(MIN_LENGTH, MAX_LENGTH), trig()];
            c.extend(inverse());
            c.push(commutative(if name == "all_l" {
                "lexicographical"
            } else {
                "subtree_length"
            }));
            (vec![soft_length(), PriorSpec::UniformArity], c)
        }
        other => return Err(ExperimentError::Config(format!("unknown preset `{other}`"))),
    };
    Ok(ExperimentConfig {
        version: CONFIG_VERSION,
        label: name.to_string(),
        benchmarks: benchmarks.iter().map(|b| b.to_string()).collect(),
        method,
        priors,
        constraints,
        trainer: TrainerConfig::default(),
        policy: PolicyConfig::default(),
        seeds: seeds.to_vec(),
        library: None,
        step_cap: None,
        dead_end_retries: PRESET_DEAD_END_RETRIES,
        output: None,
        sample_dump: None,
    })
}
