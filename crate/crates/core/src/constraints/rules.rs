//! Step-wise mask functions, one per constraint class.
//!
//! Each function is a pure function of the partial traversal, the library
//! and the constraint parameters.

use serde::{Deserialize, Serialize};

use crate::library::{Library, TokenId};
use crate::traversal::TraversalState;

use super::trie::SequenceTrie;
use super::Mask;

/// Membership flags over the library.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSet(Vec<bool>);

impl TokenSet {
    pub fn new(len: usize, members: impl IntoIterator<Item = TokenId>) -> Self {
        let mut flags = vec![false; len];
        for m in members {
            flags[m] = true;
        }
        Self(flags)
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.0[token]
    }

    pub fn members(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relationship {
    Descendant,
    Child,
    Sibling,
}

/// Masks tokens that would make completion within `[min, max]` impossible.
///
/// With `n` tokens placed and `d` dangling slots, appending a token of arity
/// `a` leaves a shortest completion of `n + d + a` tokens, so it is masked
/// when that exceeds `max`. A terminal appended at `d = 1` completes the
/// traversal at length `n + 1`, so it is masked when that is below `min`.
pub fn length_mask(state: &TraversalState, library: &Library, min: usize, max: Option<usize>) -> Mask {
    let n = state.len();
    let d = state.dangling();
    let mut mask = Mask::none(library.len());
    for (id, token) in library.tokens().iter().enumerate() {
        let too_long = max.is_some_and(|max| n + d + token.arity > max);
        let too_short = token.arity == 0 && d == 1 && n + 1 < min;
        if too_long || too_short {
            mask.block(id);
        }
    }
    mask
}

pub fn repeat_mask(
    state: &TraversalState,
    library: &Library,
    targets: &[TokenId],
    min: usize,
    max: usize,
) -> Mask {
    let mut mask = Mask::none(library.len());
    for &v in targets {
        if state.count(v) >= max {
            mask.block(v);
        }
    }
    if state.dangling() == 1 {
        // Any terminal here completes the traversal; it must not leave a
        // target below its minimum.
        for &u in library.terminals() {
            let short = targets
                .iter()
                .any(|&v| state.count(v) + usize::from(u == v) < min);
            if short {
                mask.block(u);
            }
        }
    }
    mask
}

pub fn relational_mask(
    state: &TraversalState,
    library: &Library,
    targets: &TokenSet,
    effectors: &TokenSet,
    relationship: Relationship,
) -> Mask {
    let mut mask = Mask::none(library.len());
    let block_all = |mask: &mut Mask, set: &TokenSet| set.members().for_each(|t| mask.block(t));
    match relationship {
        Relationship::Descendant => {
            if state.open_stack().iter().any(|f| effectors.contains(f.token)) {
                block_all(&mut mask, targets);
            }
        }
        Relationship::Child => {
            if state.parent().is_some_and(|p| effectors.contains(p)) {
                block_all(&mut mask, targets);
            }
        }
        Relationship::Sibling => {
            // Siblinghood is symmetric: a later target may not follow an
            // effector, and a later effector may not follow a target.
            let siblings = state.left_siblings();
            if siblings.iter().any(|c| effectors.contains(c.root)) {
                block_all(&mut mask, targets);
            }
            if siblings.iter().any(|c| targets.contains(c.root)) {
                block_all(&mut mask, effectors);
            }
        }
    }
    mask
}

pub fn blacklist_mask(state: &TraversalState, library: &Library, trie: &SequenceTrie) -> Mask {
    let mut mask = Mask::none(library.len());
    for v in trie.completions(state.sequence()) {
        mask.block(v);
    }
    mask
}

/// Length constraint with `min = d + n`, where `n` is the valency of the
/// most recently placed token.
pub fn valency_mask(state: &TraversalState, library: &Library, valency_of_last: usize) -> Mask {
    length_mask(state, library, state.dangling() + valency_of_last, None)
}

pub fn lexicographical_mask(state: &TraversalState, library: &Library, operators: &TokenSet) -> Mask {
    let mut mask = Mask::none(library.len());
    if !state.parent().is_some_and(|p| operators.contains(p)) {
        return mask;
    }
    if let Some(left) = state.left_sibling() {
        let floor = library.token(left.root).lex_rank;
        for (id, token) in library.tokens().iter().enumerate() {
            if token.lex_rank < floor {
                mask.block(id);
            }
        }
    }
    mask
}

/// Remaining length budget of the innermost sibling subtree that is bounded
/// by its left sibling, as `(max_length, consumed, open_slots)`.
fn subtree_budgets<'a>(
    state: &'a TraversalState,
    operators: &'a TokenSet,
) -> impl Iterator<Item = (usize, usize, usize)> + 'a {
    state
        .open_stack()
        .iter()
        .enumerate()
        .filter(|(_, f)| operators.contains(f.token))
        .filter_map(move |(level, f)| {
            let left = f.children.last()?;
            Some((
                left.len,
                state.consumed_within_child(level),
                state.slots_within_child(level),
            ))
        })
}

pub fn subtree_length_mask(state: &TraversalState, library: &Library, operators: &TokenSet) -> Mask {
    let mut mask = Mask::none(library.len());
    for (max_len, consumed, slots) in subtree_budgets(state, operators) {
        for (id, token) in library.tokens().iter().enumerate() {
            if consumed + slots + token.arity > max_len {
                mask.block(id);
            }
        }
    }
    mask
}

/// Maximum final length of the subtree starting at the next position, when
/// it is a non-first child of one of `operators`.
pub fn next_subtree_max_length(state: &TraversalState, operators: &TokenSet) -> Option<usize> {
    let top = state.open_stack().last()?;
    if !operators.contains(top.token) {
        return None;
    }
    top.children.last().map(|c| c.len)
}

pub fn positional_mask(state: &TraversalState, library: &Library, allowed: &[Option<TokenSet>]) -> Mask {
    let mut mask = Mask::none(library.len());
    if let Some(Some(set)) = allowed.get(state.len()) {
        for id in 0..library.len() {
            if !set.contains(id) {
                mask.block(id);
            }
        }
    }
    mask
}
