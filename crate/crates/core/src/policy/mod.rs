//! Autoregressive recurrent policy over library tokens.
//!
//! The observation at each step is the one-hot parent token concatenated
//! with the one-hot left-sibling token, each with an extra "empty" slot.
//! Parameters live in one flat `f64` buffer so optimizers, checkpoints and
//! finite-difference probes can treat them uniformly.

mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::TokenId;

pub use train::{
    quantile_higher, surrogate_gradient, surrogate_loss, Adam, TrainStats, Trainer, TrainerConfig,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("hidden width must be at least 1")]
    ZeroHidden,
    #[error("checkpoint does not match: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[default]
    Gru,
    Tanh,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Tanh => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub cell: CellKind,
    /// Half-width of the uniform range for recurrent and input weights.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            cell: CellKind::Gru,
            init_scale: 0.1,
        }
    }
}

/// Parent/sibling observation; `None` is the empty marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Observation {
    pub parent: Option<TokenId>,
    pub sibling: Option<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    vocab: usize,
    input: usize,
    hidden: usize,
    gates: usize,
    w_in: usize,
    u: usize,
    b: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, hidden: usize, cell: CellKind) -> Self {
        let input = 2 * (vocab + 1);
        let gates = cell.gates();
        let w_in = 0;
        let u = w_in + gates * hidden * input;
        let b = u + gates * hidden * hidden;
        let w_out = b + gates * hidden;
        let b_out = w_out + vocab * hidden;
        let total = b_out + vocab;
        Self {
            vocab,
            input,
            hidden,
            gates,
            w_in,
            u,
            b,
            w_out,
            b_out,
            total,
        }
    }

    fn input_columns(&self, obs: Observation) -> (usize, usize) {
        let p = obs.parent.unwrap_or(self.vocab);
        let s = obs.sibling.unwrap_or(self.vocab);
        (p, self.vocab + 1 + s)
    }
}

/// Intermediate values of one recurrent step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub columns: (usize, usize),
    pub h_prev: Vec<f64>,
    /// GRU: `[z, r, n]`; tanh cell: `[h]`.
    pub gates: Vec<f64>,
    pub h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    cell: CellKind,
    layout: Layout,
    params: Vec<f64>,
}

impl Policy {
    /// Small uniform recurrent weights from `seed`; zero output projection,
    /// so the first distribution is uniform over the library.
    pub fn init(vocab: usize, config: &PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        if config.hidden == 0 {
            return Err(PolicyError::ZeroHidden);
        }
        let layout = Layout::new(vocab, config.hidden, config.cell);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let scale = config.init_scale;
        for p in &mut params[layout.w_in..layout.b] {
            *p = rng.random_range(-scale..=scale);
        }
        Ok(Self {
            cell: config.cell,
            layout,
            params,
        })
    }

    pub fn cell(&self) -> CellKind {
        self.cell
    }

    pub fn vocab(&self) -> usize {
        self.layout.vocab
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Flat index range of the output projection (weights then bias).
    pub fn output_range(&self) -> std::ops::Range<usize> {
        self.layout.w_out..self.layout.total
    }

    /// Flat index of output weight `(token, hidden unit)`.
    pub fn output_weight_index(&self, token: TokenId, unit: usize) -> usize {
        self.layout.w_out + token * self.layout.hidden + unit
    }

    pub fn output_bias_index(&self, token: TokenId) -> usize {
        self.layout.b_out + token
    }

    /// With a zero output projection the logits are identically zero, so the
    /// recurrence can be skipped.
    pub fn output_is_zero(&self) -> bool {
        self.params[self.output_range()].iter().all(|&p| p == 0.0)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.layout.hidden]
    }

    pub(crate) fn step_cached(&self, h_prev: &[f64], obs: Observation) -> StepCache {
        let l = &self.layout;
        let hdim = l.hidden;
        let (c0, c1) = l.input_columns(obs);
        let p = &self.params;
        let w_in = |row: usize, col: usize| p[l.w_in + row * l.input + col];
        let u_row = |row: usize| &p[l.u + row * hdim..l.u + (row + 1) * hdim];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let pre = |row: usize| w_in(row, c0) + w_in(row, c1) + p[l.b + row];
        match self.cell {
            CellKind::Gru => {
                let mut gates = vec![0.0; 3 * hdim];
                for j in 0..hdim {
                    gates[j] = sigmoid(pre(j) + dot(u_row(j), h_prev));
                    gates[hdim + j] = sigmoid(pre(hdim + j) + dot(u_row(hdim + j), h_prev));
                }
                let q: Vec<f64> = (0..hdim).map(|j| gates[hdim + j] * h_prev[j]).collect();
                let mut h = vec![0.0; hdim];
                for j in 0..hdim {
                    let n = (pre(2 * hdim + j) + dot(u_row(2 * hdim + j), &q)).tanh();
                    gates[2 * hdim + j] = n;
                    let z = gates[j];
                    h[j] = (1.0 - z) * n + z * h_prev[j];
                }
                StepCache {
                    columns: (c0, c1),
                    h_prev: h_prev.to_vec(),
                    gates,
                    h,
                }
            }
            CellKind::Tanh => {
                let h: Vec<f64> = (0..hdim)
                    .map(|j| (pre(j) + dot(u_row(j), h_prev)).tanh())
                    .collect();
                StepCache {
                    columns: (c0, c1),
                    h_prev: h_prev.to_vec(),
                    gates: h.clone(),
                    h,
                }
            }
        }
    }

    pub fn logits_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        (0..l.vocab)
            .map(|t| {
                let row = &self.params[l.w_out + t * l.hidden..l.w_out + (t + 1) * l.hidden];
                row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.params[l.b_out + t]
            })
            .collect()
    }

    /// One recurrent step: logits for the next token and the new hidden state.
    pub fn forward_logits(&self, hidden: &[f64], obs: Observation) -> (Vec<f64>, Vec<f64>) {
        let cache = self.step_cached(hidden, obs);
        let logits = self.logits_from_hidden(&cache.h);
        (logits, cache.h)
    }

    /// Accumulates parameter gradients for one step given `dlogits` and the
    /// gradient flowing into this step's output state. Returns the gradient
    /// with respect to the previous hidden state.
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache,
        dlogits: &[f64],
        dh_next: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let l = &self.layout;
        let hdim = l.hidden;
        let p = &self.params;
        let mut dh = dh_next.to_vec();
        for (t, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[l.b_out + t] += g;
            let base = l.w_out + t * hdim;
            for j in 0..hdim {
                grad[base + j] += g * cache.h[j];
                dh[j] += g * p[base + j];
            }
        }
        let mut dh_prev = vec![0.0; hdim];
        let (c0, c1) = cache.columns;
        let accumulate_pre = |grad: &mut [f64], row: usize, da: f64| {
            grad[l.w_in + row * l.input + c0] += da;
            grad[l.w_in + row * l.input + c1] += da;
            grad[l.b + row] += da;
        };
        match self.cell {
            CellKind::Gru => {
                let (z, rest) = cache.gates.split_at(hdim);
                let (r, n) = rest.split_at(hdim);
                let h_prev = &cache.h_prev;
                let q: Vec<f64> = (0..hdim).map(|j| r[j] * h_prev[j]).collect();
                let mut da_n = vec![0.0; hdim];
                let mut da_z = vec![0.0; hdim];
                for j in 0..hdim {
                    dh_prev[j] += dh[j] * z[j];
                    let dn = dh[j] * (1.0 - z[j]);
                    let dz = dh[j] * (h_prev[j] - n[j]);
                    da_n[j] = dn * (1.0 - n[j] * n[j]);
                    da_z[j] = dz * z[j] * (1.0 - z[j]);
                }
                // Candidate gate: U_n acts on q = r ⊙ h_prev.
                let mut dq = vec![0.0; hdim];
                for (j, &da) in da_n.iter().enumerate() {
                    let row = 2 * hdim + j;
                    accumulate_pre(grad, row, da);
                    let base = l.u + row * hdim;
                    for k in 0..hdim {
                        grad[base + k] += da * q[k];
                        dq[k] += da * p[base + k];
                    }
                }
                let mut da_r = vec![0.0; hdim];
                for k in 0..hdim {
                    dh_prev[k] += dq[k] * r[k];
                    da_r[k] = dq[k] * h_prev[k] * r[k] * (1.0 - r[k]);
                }
                for (offset, da_gate) in [(0, &da_z), (hdim, &da_r)] {
                    for (j, &da) in da_gate.iter().enumerate() {
                        let row = offset + j;
                        accumulate_pre(grad, row, da);
                        let base = l.u + row * hdim;
                        for k in 0..hdim {
                            grad[base + k] += da * h_prev[k];
                            dh_prev[k] += da * p[base + k];
                        }
                    }
                }
            }
            CellKind::Tanh => {
                for (j, (&dhj, &hj)) in dh.iter().zip(&cache.h).enumerate() {
                    let da = dhj * (1.0 - hj * hj);
                    accumulate_pre(grad, j, da);
                    let base = l.u + j * hdim;
                    for k in 0..hdim {
                        grad[base + k] += da * cache.h_prev[k];
                        dh_prev[k] += da * p[base + k];
                    }
                }
            }
        }
        dh_prev
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            cell: self.cell,
            vocab: self.layout.vocab,
            hidden: self.layout.hidden,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, PolicyError> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported format {} v{}",
                ck.format, ck.version
            )));
        }
        let layout = Layout::new(ck.vocab, ck.hidden, ck.cell);
        if ck.params.len() != layout.total {
            return Err(PolicyError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                ck.params.len()
            )));
        }
        Ok(Self {
            cell: ck.cell,
            layout,
            params: ck.params.clone(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PolicyError> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "insitu-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Portable JSON checkpoint; `params` is the flat buffer in layout order
/// (input weights, recurrent weights, gate biases, output weights, output
/// bias), all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub cell: CellKind,
    pub vocab: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}
