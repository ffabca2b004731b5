//! Risk-seeking policy gradient with an entropy bonus, and Adam.

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::sampler::{masked_softmax, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of the batch kept for the update; the baseline is the reward
    /// at the `1 - risk_quantile` quantile.
    pub risk_quantile: f64,
    pub entropy_weight: f64,
    pub max_iterations: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 500,
            risk_quantile: 0.1,
            entropy_weight: 5e-3,
            max_iterations: 2000,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.risk_quantile > 0.0 && self.risk_quantile <= 1.0) {
            return Err(format!("risk_quantile must lie in (0, 1], got {}", self.risk_quantile));
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return Err(format!("entropy_weight must be finite and >= 0, got {}", self.entropy_weight));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub baseline: f64,
    pub kept: usize,
    pub mean_reward: f64,
    pub best_reward: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Empirical quantile using the "higher" rule: the smallest order statistic
/// at or above position `q * (n - 1)`.
pub fn quantile_higher(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    // Guard against 0.9 * 10 = 9.000000000000002 rounding up a whole rank.
    let idx = if (pos - pos.round()).abs() < 1e-9 {
        pos.round()
    } else {
        pos.ceil()
    };
    sorted[(idx as usize).min(sorted.len() - 1)]
}

/// Adam with the usual decay constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Descends `grad` in place on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Surrogate loss `-(1/K) Σ_k [A_k Σ_t log p_t + w Σ_t H_t]` under the current
/// parameters. Adjustments recorded in each sample are constants.
pub fn surrogate_loss(
    policy: &Policy,
    records: &[&SampleRecord],
    advantages: &[f64],
    entropy_weight: f64,
) -> f64 {
    let k = records.len() as f64;
    let mut total = 0.0;
    for (rec, &adv) in records.iter().zip(advantages) {
        let mut h = policy.initial_state();
        let mut logp = 0.0;
        let mut ent = 0.0;
        for (step, &action) in rec.steps.iter().zip(&rec.sequence) {
            let (logits, h_next) = policy.forward_logits(&h, step.observation);
            let p = masked_softmax(&logits, &step.adjustment);
            logp += p[action].ln();
            ent += entropy(&p);
            h = h_next;
        }
        total += adv * logp + entropy_weight * ent;
    }
    -total / k
}

/// Loss and its gradient with respect to the flat parameter buffer.
pub fn surrogate_gradient(
    policy: &Policy,
    records: &[&SampleRecord],
    advantages: &[f64],
    entropy_weight: f64,
) -> (f64, Vec<f64>) {
    let k = records.len() as f64;
    let mut grad = vec![0.0; policy.param_count()];
    let mut total = 0.0;
    for (rec, &adv) in records.iter().zip(advantages) {
        let mut h = policy.initial_state();
        let mut caches = Vec::with_capacity(rec.steps.len());
        let mut dlogits = Vec::with_capacity(rec.steps.len());
        for (step, &action) in rec.steps.iter().zip(&rec.sequence) {
            let cache = policy.step_cached(&h, step.observation);
            let logits = policy.logits_from_hidden(&cache.h);
            let p = masked_softmax(&logits, &step.adjustment);
            let ent = entropy(&p);
            total += adv * p[action].ln() + entropy_weight * ent;
            // d(-(A log p_a + w H)/K)/dl_j; masked entries have p_j = 0.
            let d: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let dlogp = f64::from(u8::from(j == action)) - pj;
                    let dh = if pj > 0.0 { -pj * (pj.ln() + ent) } else { 0.0 };
                    -(adv * dlogp + entropy_weight * dh) / k
                })
                .collect();
            h = cache.h.clone();
            caches.push(cache);
            dlogits.push(d);
        }
        let mut dh = policy.initial_state();
        for (cache, d) in caches.iter().zip(&dlogits).rev() {
            dh = policy.backward_step(cache, d, &dh, &mut grad);
        }
    }
    (-total / k, grad)
}

/// Owns optimizer state across iterations.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
    adam: Adam,
}

impl Trainer {
    pub fn new(config: TrainerConfig, policy: &Policy) -> Self {
        Self {
            adam: Adam::new(policy.param_count()),
            config,
        }
    }

    /// One risk-seeking update. Samples with reward at or above the
    /// `1 - risk_quantile` quantile are kept, with that quantile as baseline.
    pub fn train_step(&mut self, policy: &mut Policy, batch: &[SampleRecord], rewards: &[f64]) -> TrainStats {
        assert!(!batch.is_empty(), "empty batch");
        assert_eq!(batch.len(), rewards.len(), "one reward per sample");
        let baseline = quantile_higher(rewards, 1.0 - self.config.risk_quantile);
        let (kept, advantages): (Vec<&SampleRecord>, Vec<f64>) = batch
            .iter()
            .zip(rewards)
            .filter(|(_, &r)| r >= baseline)
            .map(|(s, &r)| (s, r - baseline))
            .unzip();
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let best_reward = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut stats = TrainStats {
            baseline,
            kept: kept.len(),
            mean_reward,
            best_reward,
            loss: 0.0,
            grad_norm: 0.0,
        };
        if self.config.learning_rate == 0.0 {
            return stats;
        }
        let (loss, grad) = surrogate_gradient(policy, &kept, &advantages, self.config.entropy_weight);
        stats.loss = loss;
        stats.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        self.adam.step(policy.params_mut(), &grad, self.config.learning_rate);
        stats
    }
}
