//! Partial pre-order traversal state.
//!
//! Tracks the dangling-node count, the stack of open (partially filled)
//! nodes, per-token counts and the root/length of every completed child
//! subtree. All constraints read from this.

use thiserror::Error;

use crate::library::{Library, TokenId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraversalError {
    #[error("traversal is already complete; no token may be appended")]
    Complete,
    #[error("traversal is incomplete ({dangling} dangling nodes)")]
    Incomplete { dangling: usize },
    #[error("token id {0} is outside the library")]
    UnknownToken(TokenId),
}

/// A completed child subtree recorded in its parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChildSubtree {
    pub root: TokenId,
    pub start: usize,
    pub len: usize,
}

/// An open node whose children are still being sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub token: TokenId,
    pub arity: usize,
    pub start: usize,
    pub children: Vec<ChildSubtree>,
}

impl Frame {
    pub fn children_filled(&self) -> usize {
        self.children.len()
    }
}

/// Structural facts about the next position to be sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionContext {
    pub parent: Option<TokenId>,
    pub child_index: Option<usize>,
    pub left_sibling_root: Option<TokenId>,
    pub left_sibling_subtree_length: Option<usize>,
    pub ancestors: Vec<TokenId>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraversalState {
    sequence: Vec<TokenId>,
    stack: Vec<Frame>,
    dangling: usize,
    counts: Vec<usize>,
    arities: Vec<usize>,
}

impl TraversalState {
    pub fn new(library: &Library) -> Self {
        Self {
            sequence: Vec::new(),
            stack: Vec::new(),
            dangling: 1,
            counts: vec![0; library.len()],
            arities: library.tokens().iter().map(|t| t.arity).collect(),
        }
    }

    /// Replays `tokens` from the empty state.
    pub fn from_tokens(library: &Library, tokens: &[TokenId]) -> Result<Self, TraversalError> {
        let mut state = Self::new(library);
        for &t in tokens {
            state.push(t)?;
        }
        Ok(state)
    }

    pub fn sequence(&self) -> &[TokenId] {
        &self.sequence
    }

    /// Number of tokens sampled so far (the 0-based index of the next position).
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn dangling(&self) -> usize {
        self.dangling
    }

    pub fn is_complete(&self) -> bool {
        self.dangling == 0
    }

    pub fn count(&self, token: TokenId) -> usize {
        self.counts[token]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Open frames, root first.
    pub fn open_stack(&self) -> &[Frame] {
        &self.stack
    }

    pub fn library_len(&self) -> usize {
        self.arities.len()
    }

    pub fn arity_of(&self, token: TokenId) -> usize {
        self.arities[token]
    }

    /// Appends in place.
    pub fn push(&mut self, token: TokenId) -> Result<(), TraversalError> {
        if self.is_complete() {
            return Err(TraversalError::Complete);
        }
        let arity = *self
            .arities
            .get(token)
            .ok_or(TraversalError::UnknownToken(token))?;
        let position = self.sequence.len();
        self.sequence.push(token);
        self.counts[token] += 1;
        self.dangling = self.dangling + arity - 1;
        if arity > 0 {
            self.stack.push(Frame {
                token,
                arity,
                start: position,
                children: Vec::with_capacity(arity),
            });
            return Ok(());
        }
        // A terminal closes its own subtree, and possibly a chain of parents.
        let mut closed = ChildSubtree {
            root: token,
            start: position,
            len: 1,
        };
        let end = position + 1;
        while let Some(top) = self.stack.last_mut() {
            top.children.push(closed);
            if top.children.len() < top.arity {
                break;
            }
            let frame = self.stack.pop().expect("non-empty stack");
            closed = ChildSubtree {
                root: frame.token,
                start: frame.start,
                len: end - frame.start,
            };
        }
        Ok(())
    }

    /// Returns a new state with `token` appended.
    pub fn append(&self, token: TokenId) -> Result<Self, TraversalError> {
        let mut next = self.clone();
        next.push(token)?;
        Ok(next)
    }

    pub fn context(&self) -> Result<PositionContext, TraversalError> {
        if self.is_complete() {
            return Err(TraversalError::Complete);
        }
        let top = self.stack.last();
        let left = top.and_then(|f| f.children.last());
        Ok(PositionContext {
            parent: top.map(|f| f.token),
            child_index: top.map(Frame::children_filled),
            left_sibling_root: left.map(|c| c.root),
            left_sibling_subtree_length: left.map(|c| c.len),
            ancestors: self.stack.iter().map(|f| f.token).collect(),
            depth: self.stack.len(),
        })
    }

    pub fn parent(&self) -> Option<TokenId> {
        self.stack.last().map(|f| f.token)
    }

    /// Completed siblings to the left of the next position.
    pub fn left_siblings(&self) -> &[ChildSubtree] {
        self.stack
            .last()
            .map(|f| f.children.as_slice())
            .unwrap_or(&[])
    }

    pub fn left_sibling(&self) -> Option<&ChildSubtree> {
        self.left_siblings().last()
    }

    /// Unfilled slots inside the child subtree currently being built under
    /// the frame at `level`. Returns 1 for the top frame, whose next child
    /// has not started.
    pub fn slots_within_child(&self, level: usize) -> usize {
        let top = self.stack.len() - 1;
        if level == top {
            return 1;
        }
        let frames = &self.stack[level + 1..];
        let open: usize = frames.iter().map(|f| f.arity - f.children.len()).sum();
        open - (frames.len() - 1)
    }

    /// Tokens already placed in the child subtree currently being built under
    /// the frame at `level`.
    pub fn consumed_within_child(&self, level: usize) -> usize {
        match self.stack.get(level + 1) {
            Some(child) => self.sequence.len() - child.start,
            None => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lib() -> Library {
        Library::from_pairs(&[("+", 2), ("*", 2), ("sin", 1), ("x", 0)]).unwrap()
    }

    #[test]
    fn append_updates_dangling() {
        let lib = lib();
        let s = TraversalState::new(&lib);
        assert_eq!(s.dangling(), 1);
        let s = s.append(0).unwrap();
        assert_eq!(s.dangling(), 2);
        let s = TraversalState::from_tokens(&lib, &lib.parse("+ x x").unwrap()).unwrap();
        assert!(s.is_complete());
        assert_eq!(s.append(3), Err(TraversalError::Complete));
    }

    #[test]
    fn context_reads_parent_and_sibling() {
        let lib = lib();
        let s = TraversalState::from_tokens(&lib, &lib.parse("sin + x").unwrap()).unwrap();
        let ctx = s.context().unwrap();
        assert_eq!(ctx.parent, Some(0));
        assert_eq!(ctx.child_index, Some(1));
        assert_eq!(ctx.left_sibling_root, Some(3));
        assert_eq!(ctx.left_sibling_subtree_length, Some(1));
        assert_eq!(ctx.ancestors, vec![2, 0]);
        assert_eq!(ctx.depth, 2);

        let s = TraversalState::from_tokens(&lib, &lib.parse("+ sin x").unwrap()).unwrap();
        let ctx = s.context().unwrap();
        assert_eq!(ctx.parent, Some(0));
        assert_eq!(ctx.left_sibling_root, Some(2));
        assert_eq!(ctx.left_sibling_subtree_length, Some(2));

        let ctx = TraversalState::new(&lib).context().unwrap();
        assert_eq!(ctx.parent, None);
        assert_eq!(ctx.child_index, None);
        assert!(ctx.ancestors.is_empty());
        assert_eq!(ctx.depth, 0);
    }

    #[test]
    fn counts_track_occurrences() {
        let lib = lib();
        let s = TraversalState::from_tokens(&lib, &lib.parse("+ + x x").unwrap()).unwrap();
        assert_eq!(s.count(3), 2);
        assert_eq!(s.count(0), 2);
        assert_eq!(s.count(1), 0);
    }

    #[test]
    fn child_budget_accounting() {
        let lib = lib();
        // + (sin (* x _)) : the second child of `*` is next.
        let s = TraversalState::from_tokens(&lib, &lib.parse("+ sin * x").unwrap()).unwrap();
        assert_eq!(s.dangling(), 2);
        // Under `+` (level 0), the in-progress child is `sin * x _`.
        assert_eq!(s.consumed_within_child(0), 3);
        assert_eq!(s.slots_within_child(0), 1);
        assert_eq!(s.slots_within_child(2), 1);
        assert_eq!(s.consumed_within_child(2), 0);
    }
}
