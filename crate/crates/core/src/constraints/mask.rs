use std::fmt;

/// Logit value of a constrained token.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// A `{0, -inf}` logit adjustment over the library.
///
/// Stored as a blocked-flag per token; [`Mask::value`] yields the logit form.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    blocked: Vec<bool>,
}

impl Mask {
    pub fn none(len: usize) -> Self {
        Self {
            blocked: vec![false; len],
        }
    }

    pub fn all(len: usize) -> Self {
        Self {
            blocked: vec![true; len],
        }
    }

    pub fn from_blocked(blocked: Vec<bool>) -> Self {
        Self { blocked }
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    pub fn block(&mut self, token: usize) {
        self.blocked[token] = true;
    }

    pub fn is_blocked(&self, token: usize) -> bool {
        self.blocked[token]
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    /// True when nothing is constrained.
    pub fn is_clear(&self) -> bool {
        !self.blocked.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.blocked.iter().all(|&b| b)
    }

    pub fn value(&self, token: usize) -> f64 {
        if self.blocked[token] {
            NEG_INF
        } else {
            0.0
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.blocked.len()).map(|i| self.value(i)).collect()
    }

    pub fn blocked(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocked
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn allowed(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocked
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(i, _)| i)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.blocked
    }

    /// In-place union of constrained sets (sum of `{0, -inf}` logits).
    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!(self.len(), other.len(), "mask length mismatch");
        for (a, b) in self.blocked.iter_mut().zip(&other.blocked) {
            *a |= *b;
        }
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.blocked()).finish()
    }
}
