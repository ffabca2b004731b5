//! In situ priors: finite logit adjustments that bias sampling without
//! removing any token from the support.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::{Library, LibraryError, TokenId};
use crate::traversal::TraversalState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("token-specific weights must be strictly positive (entry {index} is {value})")]
    NonPositive { index: usize, value: f64 },
    #[error("adjustment length {got} does not match library size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("soft length prior needs sigma > 0 and length >= 1")]
    BadSoftLength,
    #[error("could not read language-model corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Library(#[from] LibraryError),
}

/// A finite logit adjustment vector over the library.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitAdjustment(Vec<f64>);

impl LogitAdjustment {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    fn add_assign(&mut self, other: &LogitAdjustment) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// `log λ`, the adjustment that multiplies token probabilities by `λ` and
/// renormalizes, whatever the base logits.
pub fn token_specific_prior(lambda: &[f64]) -> Result<LogitAdjustment, PriorError> {
    for (index, &value) in lambda.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(PriorError::NonPositive { index, value });
        }
    }
    Ok(LogitAdjustment(lambda.iter().map(|l| l.ln()).collect()))
}

pub fn positional_prior(
    table: &BTreeMap<usize, Vec<f64>>,
    position: usize,
    len: usize,
) -> Result<LogitAdjustment, PriorError> {
    match table.get(&position) {
        Some(lambda) => token_specific_prior(lambda),
        None => Ok(LogitAdjustment::zeros(len)),
    }
}

/// Gaussian-shaped penalty on sequence length, at 0-based position `i`.
///
/// Before the target length terminals are penalized (discouraging short
/// expressions); after it, tokens of arity two or more are penalized.
/// Unary tokens are never adjusted.
pub fn soft_length_prior(position: usize, target: f64, sigma: f64, library: &Library) -> LogitAdjustment {
    let i = position as f64;
    let penalty = -(i - target).powi(2) / (2.0 * sigma * sigma);
    let values = library
        .tokens()
        .iter()
        .map(|t| match t.arity {
            0 if i < target => penalty,
            1 => 0.0,
            a if a >= 2 && i > target => penalty,
            _ => 0.0,
        })
        .collect();
    LogitAdjustment(values)
}

/// `-log |𝓐(arity(v))|`, making the arity marginal uniform under uniform
/// base logits.
pub fn uniform_arity_prior(library: &Library) -> LogitAdjustment {
    LogitAdjustment(
        library
            .tokens()
            .iter()
            .map(|t| -(library.arity_class(t.arity).len() as f64).ln())
            .collect(),
    )
}

pub fn language_model_prior(lm_logits: &[f64], strength: f64, len: usize) -> Result<LogitAdjustment, PriorError> {
    if lm_logits.len() != len {
        return Err(PriorError::LengthMismatch {
            expected: len,
            got: lm_logits.len(),
        });
    }
    Ok(LogitAdjustment(lm_logits.iter().map(|l| strength * l).collect()))
}

pub fn compose_adjustments(len: usize, adjustments: &[LogitAdjustment]) -> Result<LogitAdjustment, PriorError> {
    let mut out = LogitAdjustment::zeros(len);
    for a in adjustments {
        if a.len() != len {
            return Err(PriorError::LengthMismatch {
                expected: len,
                got: a.len(),
            });
        }
        out.add_assign(a);
    }
    Ok(out)
}

/// Source of conditional logits over the library given a prefix.
pub trait LogitSource: Send + Sync {
    fn logits(&self, prefix: &[TokenId]) -> Vec<f64>;
}

/// Add-one smoothed bigram model over traversals; the context is the
/// previous token (or a start marker).
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    size: usize,
    /// Row `prev + 1` (row 0 is the start context), column `next`.
    log_probs: Vec<Vec<f64>>,
}

impl BigramModel {
    pub fn fit(library: &Library, corpus: &[Vec<TokenId>]) -> Self {
        let n = library.len();
        let mut counts = vec![vec![1.0f64; n]; n + 1];
        for seq in corpus {
            let mut prev = 0;
            for &t in seq {
                counts[prev][t] += 1.0;
                prev = t + 1;
            }
        }
        let log_probs = counts
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                row.into_iter().map(|c| (c / total).ln()).collect()
            })
            .collect();
        Self { size: n, log_probs }
    }

    /// One space-separated traversal per line; blank lines are skipped.
    pub fn from_corpus_text(library: &Library, text: &str) -> Result<Self, PriorError> {
        let corpus = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| library.parse(l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::fit(library, &corpus))
    }
}

impl LogitSource for BigramModel {
    fn logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        let row = prefix.last().map_or(0, |&t| t + 1);
        debug_assert!(self.log_probs[row].len() == self.size);
        self.log_probs[row].clone()
    }
}

#[derive(Clone)]
pub enum Prior {
    TokenSpecific(LogitAdjustment),
    Positional(BTreeMap<usize, Vec<f64>>),
    SoftLength { length: f64, sigma: f64 },
    UniformArity(LogitAdjustment),
    LanguageModel { strength: f64, source: Arc<dyn LogitSource> },
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::TokenSpecific(a) => f.debug_tuple("TokenSpecific").field(a).finish(),
            Prior::Positional(t) => f.debug_tuple("Positional").field(t).finish(),
            Prior::SoftLength { length, sigma } => f
                .debug_struct("SoftLength")
                .field("length", length)
                .field("sigma", sigma)
                .finish(),
            Prior::UniformArity(a) => f.debug_tuple("UniformArity").field(a).finish(),
            Prior::LanguageModel { strength, .. } => f
                .debug_struct("LanguageModel")
                .field("strength", strength)
                .finish_non_exhaustive(),
        }
    }
}

impl Prior {
    pub fn token_specific(lambda: &[f64]) -> Result<Self, PriorError> {
        token_specific_prior(lambda).map(Prior::TokenSpecific)
    }

    pub fn soft_length(length: f64, sigma: f64) -> Result<Self, PriorError> {
        if !(sigma > 0.0 && length >= 1.0) {
            return Err(PriorError::BadSoftLength);
        }
        Ok(Prior::SoftLength { length, sigma })
    }

    pub fn uniform_arity(library: &Library) -> Self {
        Prior::UniformArity(uniform_arity_prior(library))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Prior::TokenSpecific(_) => "token_specific",
            Prior::Positional(_) => "positional",
            Prior::SoftLength { .. } => "soft_length",
            Prior::UniformArity(_) => "uniform_arity",
            Prior::LanguageModel { .. } => "language_model",
        }
    }

    /// Adds this prior's adjustment for the next position into `out`.
    fn accumulate(&self, state: &TraversalState, library: &Library, out: &mut [f64]) {
        let add = |out: &mut [f64], values: &[f64]| {
            for (o, v) in out.iter_mut().zip(values) {
                *o += v;
            }
        };
        match self {
            Prior::TokenSpecific(a) | Prior::UniformArity(a) => add(out, a.values()),
            Prior::Positional(table) => {
                if let Some(lambda) = table.get(&state.len()) {
                    for (o, l) in out.iter_mut().zip(lambda) {
                        *o += l.ln();
                    }
                }
            }
            Prior::SoftLength { length, sigma } => {
                add(out, soft_length_prior(state.len(), *length, *sigma, library).values())
            }
            Prior::LanguageModel { strength, source } => {
                for (o, l) in out.iter_mut().zip(source.logits(state.sequence())) {
                    *o += strength * l;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PriorSet {
    items: Vec<Prior>,
}

impl PriorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prior: Prior) -> Self {
        self.items.push(prior);
        self
    }

    pub fn push(&mut self, prior: Prior) {
        self.items.push(prior);
    }

    pub fn items(&self) -> &[Prior] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Summed adjustment for the next position of `state`.
    pub fn adjustment(&self, state: &TraversalState, library: &Library) -> LogitAdjustment {
        let mut out = vec![0.0; library.len()];
        self.accumulate(state, library, &mut out);
        LogitAdjustment(out)
    }

    pub fn accumulate(&self, state: &TraversalState, library: &Library, out: &mut [f64]) {
        for p in &self.items {
            p.accumulate(state, library, out);
        }
    }
}

fn default_sigma() -> f64 {
    5.0
}

fn default_length() -> f64 {
    10.0
}

/// Declarative prior description for experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Relative weights keyed by symbol; unlisted tokens keep weight 1.
    TokenSpecific { weights: BTreeMap<String, f64> },
    /// Per-position weights keyed by symbol.
    Positional { positions: BTreeMap<usize, BTreeMap<String, f64>> },
    SoftLength {
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    UniformArity,
    /// Bigram model fit on a corpus file, one traversal per line.
    LanguageModel { corpus: String, strength: f64 },
}

fn weight_vector(library: &Library, weights: &BTreeMap<String, f64>) -> Result<Vec<f64>, PriorError> {
    let mut lambda = vec![1.0; library.len()];
    for (symbol, w) in weights {
        lambda[library.id(symbol)?] = *w;
    }
    Ok(lambda)
}

impl PriorSpec {
    pub fn resolve(&self, library: &Library) -> Result<Prior, PriorError> {
        match self {
            PriorSpec::TokenSpecific { weights } => Prior::token_specific(&weight_vector(library, weights)?),
            PriorSpec::Positional { positions } => {
                let mut table = BTreeMap::new();
                for (pos, weights) in positions {
                    let lambda = weight_vector(library, weights)?;
                    token_specific_prior(&lambda)?;
                    table.insert(*pos, lambda);
                }
                Ok(Prior::Positional(table))
            }
            PriorSpec::SoftLength { length, sigma } => Prior::soft_length(*length, *sigma),
            PriorSpec::UniformArity => Ok(Prior::uniform_arity(library)),
            PriorSpec::LanguageModel { corpus, strength } => {
                let text = std::fs::read_to_string(corpus).map_err(|e| PriorError::Corpus(format!("{corpus}: {e}")))?;
                Ok(Prior::LanguageModel {
                    strength: *strength,
                    source: Arc::new(BigramModel::from_corpus_text(library, &text)?),
                })
            }
        }
    }
}

pub fn build_prior_set(specs: &[PriorSpec], library: &Library) -> Result<PriorSet, PriorError> {
    let mut set = PriorSet::new();
    for s in specs {
        set.push(s.resolve(library)?);
    }
    Ok(set)
}

/// Symbol-keyed positional table biasing each position toward a reference
/// traversal by a factor `weight`.
pub fn reference_positional_table(library: &Library, reference: &[TokenId], weight: f64) -> BTreeMap<usize, Vec<f64>> {
    let mut counts: HashMap<usize, Vec<f64>> = HashMap::new();
    for (i, &t) in reference.iter().enumerate() {
        let row = counts.entry(i).or_insert_with(|| vec![1.0; library.len()]);
        row[t] = weight;
    }
    counts.into_iter().collect()
}
