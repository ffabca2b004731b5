//! Constrained autoregressive sampling and an exact distribution enumerator.
//!
//! At every step the policy logits are summed with the prior adjustments and
//! the composed constraint mask, and the next token is drawn from the
//! softmax of that sum. Likelihood recomputation and enumeration go through
//! the same per-step routine, so their arithmetic matches sampling exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::constraints::{ConstraintError, ConstraintSet, NEG_INF};
use crate::library::{Library, TokenId};
use crate::policy::{Observation, Policy};
use crate::priors::PriorSet;
use crate::traversal::{TraversalError, TraversalState};

/// Refuse to enumerate beyond this many expanded prefixes.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("no finite logit at step {step}")]
    NoSupport { step: usize },
    #[error("sequence still open after the step cap of {cap}: {prefix}")]
    StepCap { cap: usize, prefix: String },
    #[error("no maximum length and no step cap; sampling may not terminate")]
    NoTermination,
    #[error("search space too large to enumerate: more than {visited} prefixes, up to {estimate:.3e} sequences")]
    SpaceTooLarge { visited: usize, estimate: f64 },
    #[error(transparent)]
    Traversal(#[from] TraversalError),
}

/// One sampling step: the observation fed to the policy and the constant
/// adjustment (priors plus mask, `-inf` where masked) added to its logits.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Observation,
    pub adjustment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sequence: Vec<TokenId>,
    /// Sum of per-step log-probabilities under the adjusted distributions.
    pub log_prob: f64,
    pub entropies: Vec<f64>,
    pub steps: Vec<StepRecord>,
}

impl SampleRecord {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

/// Softmax of `logits + adjustment`. Entries whose sum is `-inf` get exactly
/// zero probability and are excluded before taking the maximum.
pub fn masked_softmax(logits: &[f64], adjustment: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().zip(adjustment).map(|(l, a)| l + a).collect();
    let max = z
        .iter()
        .cloned()
        .filter(|v| *v != NEG_INF)
        .fold(NEG_INF, f64::max);
    let mut p: Vec<f64> = z
        .iter()
        .map(|&v| if v == NEG_INF { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    p
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Draws an index from `p` by inverse CDF.
fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Deterministic per-element generator from `(seed, iteration, index)`.
pub fn element_rng(seed: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(iteration)));
    rng.set_stream(index);
    rng
}

struct Step {
    observation: Observation,
    adjustment: Vec<f64>,
    probs: Vec<f64>,
    hidden: Vec<f64>,
}

/// Exact distribution over complete sequences up to a length bound.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Enumeration {
    pub probabilities: BTreeMap<Vec<TokenId>, f64>,
    /// Mass of prefixes where every token was constrained.
    pub dead_end_mass: f64,
    /// Mass of prefixes still open at the length bound.
    pub truncated_mass: f64,
}

impl Enumeration {
    pub fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }

    pub fn support(&self) -> impl Iterator<Item = &Vec<TokenId>> {
        self.probabilities.keys()
    }
}

/// Bundles everything that shapes the adjusted distribution.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub library: &'a Library,
    pub policy: &'a Policy,
    pub priors: &'a PriorSet,
    pub constraints: &'a ConstraintSet,
    step_cap: Option<usize>,
    dead_end_retries: usize,
    constant_logits: bool,
}

impl<'a> Sampler<'a> {
    /// The step cap defaults to twice the tightest configured max length.
    pub fn new(library: &'a Library, policy: &'a Policy, priors: &'a PriorSet, constraints: &'a ConstraintSet) -> Self {
        Self {
            library,
            policy,
            priors,
            constraints,
            step_cap: constraints.max_length().map(|m| 2 * m),
            dead_end_retries: 0,
            constant_logits: policy.output_is_zero(),
        }
    }

    pub fn with_step_cap(mut self, cap: usize) -> Self {
        self.step_cap = Some(cap);
        self
    }

    pub fn step_cap(&self) -> Option<usize> {
        self.step_cap
    }

    /// Restart a sequence from scratch, up to `retries` times, when every
    /// token is constrained mid-sequence. This samples from the distribution
    /// conditioned on avoiding dead ends; the default of zero propagates the
    /// error instead.
    pub fn with_dead_end_retries(mut self, retries: usize) -> Self {
        self.dead_end_retries = retries;
        self
    }

    fn step(&self, state: &TraversalState, hidden: &[f64]) -> Result<Step, SampleError> {
        let observation = Observation {
            parent: state.parent(),
            sibling: state.left_sibling().map(|c| c.root),
        };
        let (logits, hidden) = if self.constant_logits {
            (vec![0.0; self.library.len()], Vec::new())
        } else {
            self.policy.forward_logits(hidden, observation)
        };
        let mut adjustment = vec![0.0; self.library.len()];
        self.priors.accumulate(state, self.library, &mut adjustment);
        let mask = self.constraints.mask(state, self.library)?;
        for t in mask.blocked() {
            adjustment[t] = NEG_INF;
        }
        let probs = masked_softmax(&logits, &adjustment);
        if !probs.iter().any(|p| *p > 0.0) || probs.iter().any(|p| p.is_nan()) {
            return Err(SampleError::NoSupport { step: state.len() });
        }
        Ok(Step {
            observation,
            adjustment,
            probs,
            hidden,
        })
    }

    fn initial_hidden(&self) -> Vec<f64> {
        if self.constant_logits {
            Vec::new()
        } else {
            self.policy.initial_state()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SampleRecord, SampleError> {
        let mut attempt = 0;
        loop {
            match self.sample_once(rng) {
                Err(SampleError::Constraint(ConstraintError::InfeasibleStep { .. })) if attempt < self.dead_end_retries => {
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn sample_once<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SampleRecord, SampleError> {
        let cap = self.step_cap.ok_or(SampleError::NoTermination)?;
        let mut state = TraversalState::new(self.library);
        let mut hidden = self.initial_hidden();
        let mut record = SampleRecord {
            sequence: Vec::new(),
            log_prob: 0.0,
            entropies: Vec::new(),
            steps: Vec::new(),
        };
        while !state.is_complete() {
            if state.len() >= cap {
                return Err(SampleError::StepCap {
                    cap,
                    prefix: self.library.format(state.sequence()),
                });
            }
            let step = self.step(&state, &hidden)?;
            let token = draw(&step.probs, rng);
            record.log_prob += step.probs[token].ln();
            record.entropies.push(entropy(&step.probs));
            record.steps.push(StepRecord {
                observation: step.observation,
                adjustment: step.adjustment,
            });
            record.sequence.push(token);
            state.push(token)?;
            hidden = step.hidden;
        }
        Ok(record)
    }

    /// Log-likelihood of `sequence`; `-inf` when a step is masked or the
    /// prefix dead-ends.
    pub fn log_prob(&self, sequence: &[TokenId]) -> Result<f64, SampleError> {
        let mut state = TraversalState::new(self.library);
        let mut hidden = self.initial_hidden();
        let mut log_prob = 0.0;
        for &token in sequence {
            let step = match self.step(&state, &hidden) {
                Ok(s) => s,
                Err(SampleError::Constraint(ConstraintError::InfeasibleStep { .. })) => return Ok(NEG_INF),
                Err(e) => return Err(e),
            };
            if step.probs[token] == 0.0 {
                return Ok(NEG_INF);
            }
            log_prob += step.probs[token].ln();
            state.push(token)?;
            hidden = step.hidden;
        }
        if !state.is_complete() {
            return Err(TraversalError::Incomplete {
                dangling: state.dangling(),
            }
            .into());
        }
        Ok(log_prob)
    }

    /// Depth-first expansion of every prefix up to `max_len` tokens.
    pub fn enumerate(&self, max_len: usize) -> Result<Enumeration, SampleError> {
        let mut out = Enumeration::default();
        let mut visited = 0usize;
        let mut stack = vec![(TraversalState::new(self.library), self.initial_hidden(), 1.0f64)];
        while let Some((state, hidden, mass)) = stack.pop() {
            visited += 1;
            if visited > ENUMERATION_LIMIT {
                let n = self.library.len() as f64;
                let estimate = (1..=max_len as i32).map(|k| n.powi(k)).sum();
                return Err(SampleError::SpaceTooLarge { visited, estimate });
            }
            if state.is_complete() {
                *out.probabilities.entry(state.sequence().to_vec()).or_insert(0.0) += mass;
                continue;
            }
            if state.len() >= max_len {
                out.truncated_mass += mass;
                continue;
            }
            let step = match self.step(&state, &hidden) {
                Ok(s) => s,
                Err(SampleError::Constraint(ConstraintError::InfeasibleStep { .. })) => {
                    out.dead_end_mass += mass;
                    continue;
                }
                Err(e) => return Err(e),
            };
            for (token, &p) in step.probs.iter().enumerate().rev() {
                if p > 0.0 {
                    stack.push((state.append(token)?, step.hidden.clone(), mass * p));
                }
            }
        }
        Ok(out)
    }

    /// `n` samples with independent streams from `(seed, iteration, index)`,
    /// identical regardless of thread schedule.
    pub fn sample_batch(&self, seed: u64, iteration: u64, n: usize) -> Result<Vec<SampleRecord>, SampleError> {
        (0..n)
            .into_par_iter()
            .map(|i| self.sample(&mut element_rng(seed, iteration, i as u64)))
            .collect()
    }
}

pub fn sample_sequence<R: Rng + ?Sized>(
    library: &Library,
    policy: &Policy,
    priors: &PriorSet,
    constraints: &ConstraintSet,
    rng: &mut R,
) -> Result<SampleRecord, SampleError> {
    Sampler::new(library, policy, priors, constraints).sample(rng)
}

pub fn sequence_log_prob(
    library: &Library,
    policy: &Policy,
    priors: &PriorSet,
    constraints: &ConstraintSet,
    sequence: &[TokenId],
) -> Result<f64, SampleError> {
    Sampler::new(library, policy, priors, constraints).log_prob(sequence)
}

pub fn enumerate_distribution(
    library: &Library,
    policy: &Policy,
    priors: &PriorSet,
    constraints: &ConstraintSet,
    max_len: usize,
) -> Result<Enumeration, SampleError> {
    Sampler::new(library, policy, priors, constraints).enumerate(max_len)
}

/// Samples one sequence and, for systematic blacklists, records it so it is
/// never drawn again.
pub fn sample_and_record<R: Rng + ?Sized>(
    library: &Library,
    policy: &Policy,
    priors: &PriorSet,
    constraints: &mut ConstraintSet,
    rng: &mut R,
) -> Result<SampleRecord, SampleError> {
    let record = sample_sequence(library, policy, priors, constraints, rng)?;
    constraints.record_sampled([record.sequence.as_slice()]);
    Ok(record)
}
