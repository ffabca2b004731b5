//! Symbolic regression testbed: evaluation, reward, exact recovery and the
//! benchmark registry.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::{Library, TokenId};

/// NRMSE below this on a fresh resample counts as exact recovery.
pub const RECOVERY_THRESHOLD: f64 = 1e-12;

/// Salt separating recovery resamples from training data for the same seed.
const HOLDOUT_SALT: u64 = 0x005e_ed0f_ca11_ab1e;

const MAX_RESAMPLES: usize = 100;

const BUILTIN_REGISTRY: &str = include_str!("../data/nguyen.toml");

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("symbol `{0}` has no numeric meaning")]
    UnknownSymbol(String),
    #[error("expression is not a single complete tree: {0}")]
    Malformed(String),
    #[error("expression uses variable x{needed} but the data has {available} columns")]
    MissingVariable { needed: usize, available: usize },
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("benchmark `{name}`: {reason}")]
    InvalidBenchmark { name: String, reason: String },
    #[error("ground truth of `{name}` stayed non-finite after {attempts} resamples")]
    NonFiniteGroundTruth { name: String, attempts: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Neg,
    Var(usize),
    Const(f64),
}

impl Op {
    /// Interprets a token symbol: operators, `x1..xn` (also `x`, `y`, `z`)
    /// and finite numeric literals.
    pub fn from_symbol(symbol: &str) -> Option<Op> {
        let op = match symbol {
            "+" | "add" => Op::Add,
            "-" | "sub" => Op::Sub,
            "*" | "mul" => Op::Mul,
            "/" | "div" => Op::Div,
            "pow" | "^" => Op::Pow,
            "sin" => Op::Sin,
            "cos" => Op::Cos,
            "tan" => Op::Tan,
            "exp" => Op::Exp,
            "log" => Op::Log,
            "sqrt" => Op::Sqrt,
            "neg" => Op::Neg,
            "x" => Op::Var(0),
            "y" => Op::Var(1),
            "z" => Op::Var(2),
            _ => {
                if let Some(k) = symbol.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
                    return k.checked_sub(1).map(Op::Var);
                }
                let starts_numeric = symbol.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '.');
                return symbol
                    .parse::<f64>()
                    .ok()
                    .filter(|v| starts_numeric && v.is_finite())
                    .map(Op::Const);
            }
        };
        Some(op)
    }

    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => 2,
            Op::Sin | Op::Cos | Op::Tan | Op::Exp | Op::Log | Op::Sqrt | Op::Neg => 1,
            Op::Var(_) | Op::Const(_) => 0,
        }
    }

    fn unary(self, a: f64) -> f64 {
        match self {
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Tan => a.tan(),
            Op::Exp => a.exp(),
            Op::Log => a.ln(),
            Op::Sqrt => a.sqrt(),
            Op::Neg => -a,
            _ => unreachable!("not unary"),
        }
    }

    fn binary(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => a / b,
            Op::Pow => a.powf(b),
            _ => unreachable!("not binary"),
        }
    }
}

/// A complete prefix expression ready for vectorized evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
}

impl Program {
    pub fn new(ops: Vec<Op>) -> Result<Self, TaskError> {
        let mut open = 1usize;
        for (i, op) in ops.iter().enumerate() {
            if open == 0 {
                return Err(TaskError::Malformed(format!("trailing tokens from position {i}")));
            }
            open = open - 1 + op.arity();
        }
        if open != 0 {
            return Err(TaskError::Malformed(format!("{open} open slots remain")));
        }
        Ok(Self { ops })
    }

    pub fn parse(text: &str) -> Result<Self, TaskError> {
        let ops = text
            .split_whitespace()
            .map(|s| Op::from_symbol(s).ok_or_else(|| TaskError::UnknownSymbol(s.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(ops)
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    /// Number of input columns the expression reads.
    pub fn variables(&self) -> usize {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Var(k) => Some(k + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Evaluates over column-major inputs; non-finite rows are left as-is.
    pub fn eval(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>, TaskError> {
        let needed = self.variables();
        if needed > columns.len() {
            return Err(TaskError::MissingVariable {
                needed,
                available: columns.len(),
            });
        }
        let rows = columns.first().map_or(0, Vec::len);
        let mut stack: Vec<Vec<f64>> = Vec::new();
        for op in self.ops.iter().rev() {
            let value = match *op {
                Op::Var(k) => columns[k].clone(),
                Op::Const(c) => vec![c; rows],
                op if op.arity() == 1 => {
                    let mut a = stack.pop().expect("validated arity");
                    for v in &mut a {
                        *v = op.unary(*v);
                    }
                    a
                }
                op => {
                    let mut a = stack.pop().expect("validated arity");
                    let b = stack.pop().expect("validated arity");
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x = op.binary(*x, *y);
                    }
                    a
                }
            };
            stack.push(value);
        }
        Ok(stack.pop().expect("validated arity"))
    }
}

/// Maps library tokens to numeric operations once, up front.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    ops: Vec<Op>,
}

impl Evaluator {
    pub fn new(library: &Library) -> Result<Self, TaskError> {
        let ops = library
            .tokens()
            .iter()
            .map(|t| Op::from_symbol(&t.symbol).ok_or_else(|| TaskError::UnknownSymbol(t.symbol.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        for (t, op) in library.tokens().iter().zip(&ops) {
            if t.arity != op.arity() {
                return Err(TaskError::Malformed(format!(
                    "token `{}` declared with arity {} but evaluates with {}",
                    t.symbol,
                    t.arity,
                    op.arity()
                )));
            }
        }
        Ok(Self { ops })
    }

    pub fn compile(&self, sequence: &[TokenId]) -> Result<Program, TaskError> {
        Program::new(sequence.iter().map(|&t| self.ops[t]).collect())
    }
}

pub fn evaluate_expression(library: &Library, sequence: &[TokenId], columns: &[Vec<f64>]) -> Result<Vec<f64>, TaskError> {
    Evaluator::new(library)?.compile(sequence)?.eval(columns)
}

/// RMSE divided by the population standard deviation of `y`; infinite when
/// any prediction is non-finite.
pub fn nrmse(prediction: &[f64], y: &[f64]) -> f64 {
    assert_eq!(prediction.len(), y.len(), "prediction and target lengths differ");
    if prediction.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mse = prediction.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let (rmse, std) = (mse.sqrt(), var.sqrt());
    if std == 0.0 {
        return if rmse == 0.0 { 0.0 } else { f64::INFINITY };
    }
    rmse / std
}

/// `1 / (1 + NRMSE)`, zero for any non-finite prediction.
pub fn reward_from_prediction(prediction: &[f64], y: &[f64]) -> f64 {
    reward_from_error(nrmse(prediction, y))
}

pub fn reward_from_error(nrmse: f64) -> f64 {
    if nrmse.is_finite() {
        1.0 / (1.0 + nrmse)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// One column per input variable.
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(name: &str, columns: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, TaskError> {
        if columns.iter().any(|c| c.len() != y.len()) {
            return Err(TaskError::Dataset("column lengths differ from y".into()));
        }
        if columns.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(TaskError::Dataset("non-finite entry".into()));
        }
        Ok(Self {
            name: name.to_string(),
            columns,
            y,
        })
    }

    pub fn variable_count(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Writes `x1..xn,y` with one sample per line.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TaskError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.variable_count()).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: &str, reader: R) -> Result<Self, TaskError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let n = header.len();
        let expected: Vec<String> = (1..n).map(|k| format!("x{k}")).chain(["y".to_string()]).collect();
        if n == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(TaskError::Dataset(format!("expected header {}", expected.join(","))));
        }
        let mut columns = vec![Vec::new(); n - 1];
        let mut y = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| TaskError::Dataset(format!("not a number: `{field}`")))?;
                if k + 1 == n {
                    y.push(v);
                } else {
                    columns[k].push(v);
                }
            }
        }
        Self::new(name, columns, y)
    }
}

pub fn reward(library: &Library, sequence: &[TokenId], dataset: &Dataset) -> Result<f64, TaskError> {
    let prediction = evaluate_expression(library, sequence, &dataset.columns)?;
    Ok(reward_from_prediction(&prediction, &dataset.y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkEntry {
    pub name: String,
    #[serde(default)]
    pub infix: String,
    /// Prefix traversal of the ground truth.
    pub expression: String,
    pub points: usize,
    pub sampling: Sampling,
    /// `[lo, hi]` per variable.
    pub domains: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub entry: BenchmarkEntry,
    pub ground_truth: Program,
}

impl Benchmark {
    pub fn from_entry(entry: BenchmarkEntry) -> Result<Self, TaskError> {
        let invalid = |reason: String| TaskError::InvalidBenchmark {
            name: entry.name.clone(),
            reason,
        };
        let ground_truth = Program::parse(&entry.expression).map_err(|e| invalid(e.to_string()))?;
        if ground_truth.variables() > entry.domains.len() {
            return Err(invalid("expression reads more variables than domains listed".into()));
        }
        if entry.points == 0 || entry.domains.iter().any(|[lo, hi]| lo.partial_cmp(hi) != Some(std::cmp::Ordering::Less)) {
            return Err(invalid("needs points >= 1 and lo < hi for every domain".into()));
        }
        Ok(Self { entry, ground_truth })
    }

    pub fn name(&self) -> &str {
        &self.entry.name
    }

    pub fn variables(&self) -> usize {
        self.entry.domains.len()
    }

    /// The constant-free operator set with one token per variable.
    pub fn library(&self) -> Library {
        Library::nguyen(self.variables())
    }

    fn sample_inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let points = self.entry.points;
        match self.entry.sampling {
            Sampling::Uniform => self
                .entry
                .domains
                .iter()
                .map(|&[lo, hi]| (0..points).map(|_| rng.random_range(lo..hi)).collect())
                .collect(),
            Sampling::Grid => {
                let axes: Vec<Vec<f64>> = self
                    .entry
                    .domains
                    .iter()
                    .map(|&[lo, hi]| {
                        if points == 1 {
                            return vec![lo];
                        }
                        (0..points)
                            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                            .collect()
                    })
                    .collect();
                let total = points.pow(axes.len() as u32);
                let mut columns = vec![Vec::with_capacity(total); axes.len()];
                for flat in 0..total {
                    let mut rest = flat;
                    for (k, axis) in axes.iter().enumerate().rev() {
                        columns[k].push(axis[rest % points]);
                        rest /= points;
                    }
                }
                columns
            }
        }
    }
}

/// Samples inputs per the benchmark's domains and computes `y` from the
/// ground truth, resampling when the ground truth is non-finite.
pub fn make_dataset(benchmark: &Benchmark, seed: u64) -> Result<Dataset, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..MAX_RESAMPLES {
        let columns = benchmark.sample_inputs(&mut rng);
        let y = benchmark.ground_truth.eval(&columns)?;
        if y.iter().all(|v| v.is_finite()) {
            return Dataset::new(benchmark.name(), columns, y);
        }
        let bad = y.iter().filter(|v| !v.is_finite()).count();
        log::warn!(
            "{}: {bad} non-finite ground-truth rows on attempt {}; resampling",
            benchmark.name(),
            attempt + 1
        );
        if benchmark.entry.sampling == Sampling::Grid {
            break;
        }
    }
    Err(TaskError::NonFiniteGroundTruth {
        name: benchmark.name().to_string(),
        attempts: MAX_RESAMPLES,
    })
}

/// Exact recovery: NRMSE below the threshold on a fresh resample.
pub fn recovered(library: &Library, sequence: &[TokenId], benchmark: &Benchmark, seed: u64) -> Result<bool, TaskError> {
    let holdout = make_dataset(benchmark, seed ^ HOLDOUT_SALT)?;
    let prediction = evaluate_expression(library, sequence, &holdout.columns)?;
    Ok(nrmse(&prediction, &holdout.y) < RECOVERY_THRESHOLD)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    version: u32,
    benchmark: Vec<BenchmarkEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRegistry {
    benchmarks: BTreeMap<String, Benchmark>,
    order: Vec<String>,
}

impl BenchmarkRegistry {
    pub const VERSION: u32 = 1;

    pub fn from_toml_str(text: &str) -> Result<Self, TaskError> {
        let file: RegistryFile = toml::from_str(text)?;
        if file.version != Self::VERSION {
            return Err(TaskError::Dataset(format!("unsupported registry version {}", file.version)));
        }
        let mut benchmarks = BTreeMap::new();
        let mut order = Vec::new();
        for entry in file.benchmark {
            let b = Benchmark::from_entry(entry)?;
            order.push(b.name().to_string());
            if benchmarks.insert(b.name().to_string(), b).is_some() {
                return Err(TaskError::InvalidBenchmark {
                    name: order.pop().unwrap_or_default(),
                    reason: "duplicate name".into(),
                });
            }
        }
        Ok(Self { benchmarks, order })
    }

    /// The shipped Nguyen suite.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_REGISTRY).expect("shipped registry parses")
    }

    pub fn get(&self, name: &str) -> Result<&Benchmark, TaskError> {
        self.benchmarks
            .get(name)
            .ok_or_else(|| TaskError::UnknownBenchmark(name.to_string()))
    }

    /// Names in file order.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = &Benchmark> {
        self.order.iter().map(|n| &self.benchmarks[n])
    }
}

/// A benchmark bound to a library, training data and a recovery resample.
#[derive(Debug, Clone)]
pub struct RegressionTask {
    pub benchmark: Benchmark,
    pub train: Dataset,
    pub holdout: Dataset,
    evaluator: Evaluator,
}

impl RegressionTask {
    pub fn new(benchmark: &Benchmark, library: &Library, seed: u64) -> Result<Self, TaskError> {
        Ok(Self {
            benchmark: benchmark.clone(),
            train: make_dataset(benchmark, seed)?,
            holdout: make_dataset(benchmark, seed ^ HOLDOUT_SALT)?,
            evaluator: Evaluator::new(library)?,
        })
    }

    /// Training-data NRMSE.
    pub fn error(&self, sequence: &[TokenId]) -> Result<f64, TaskError> {
        let prediction = self.evaluator.compile(sequence)?.eval(&self.train.columns)?;
        Ok(nrmse(&prediction, &self.train.y))
    }

    pub fn reward(&self, sequence: &[TokenId]) -> Result<f64, TaskError> {
        Ok(reward_from_error(self.error(sequence)?))
    }

    /// Training NRMSE for each sequence, evaluated in parallel.
    pub fn errors(&self, sequences: &[&[TokenId]]) -> Result<Vec<f64>, TaskError> {
        sequences.par_iter().map(|s| self.error(s)).collect()
    }

    pub fn recovered(&self, sequence: &[TokenId]) -> Result<bool, TaskError> {
        let prediction = self.evaluator.compile(sequence)?.eval(&self.holdout.columns)?;
        Ok(nrmse(&prediction, &self.holdout.y) < RECOVERY_THRESHOLD)
    }
}
