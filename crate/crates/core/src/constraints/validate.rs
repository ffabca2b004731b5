//! Post-hoc predicates evaluated on a finished expression tree.
//!
//! These never look at step-wise masks; they rebuild the tree from the
//! traversal and test each constraint against it directly.

use crate::library::{Library, TokenId};
use crate::traversal::TraversalError;

use super::rules::{Relationship, TokenSet};
use super::unit_rules::satisfies_unit;
use super::{Constraint, TypeUnitMode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub token: TokenId,
    pub start: usize,
    pub len: usize,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    /// Rebuilds the tree from a complete pre-order traversal.
    pub fn build(library: &Library, sequence: &[TokenId]) -> Result<Self, TraversalError> {
        fn go(library: &Library, seq: &[TokenId], at: &mut usize) -> Option<TreeNode> {
            let start = *at;
            let token = *seq.get(start)?;
            *at += 1;
            let mut children = Vec::new();
            for _ in 0..library.arity(token) {
                children.push(go(library, seq, at)?);
            }
            Some(TreeNode {
                token,
                start,
                len: *at - start,
                children,
            })
        }
        let mut at = 0;
        let incomplete = || TraversalError::Incomplete { dangling: 1 };
        let root = go(library, sequence, &mut at).ok_or_else(incomplete)?;
        if at != sequence.len() {
            // Trailing tokens after a closed root.
            return Err(TraversalError::Complete);
        }
        Ok(root)
    }

    /// Pre-order walk yielding `(node, ancestors root-first)`.
    pub fn walk<'a>(&'a self, visit: &mut dyn FnMut(&'a TreeNode, &[&'a TreeNode])) {
        fn go<'a>(
            node: &'a TreeNode,
            path: &mut Vec<&'a TreeNode>,
            visit: &mut dyn FnMut(&'a TreeNode, &[&'a TreeNode]),
        ) {
            visit(node, path);
            path.push(node);
            for c in &node.children {
                go(c, path, visit);
            }
            path.pop();
        }
        go(self, &mut Vec::new(), visit);
    }

    fn any(&self, pred: &mut dyn FnMut(&TreeNode, &[&TreeNode]) -> bool) -> bool {
        let mut hit = false;
        self.walk(&mut |n, path| hit |= pred(n, path));
        hit
    }
}

fn relational_ok(root: &TreeNode, targets: &TokenSet, effectors: &TokenSet, rel: Relationship) -> bool {
    let violated = root.any(&mut |node, path| match rel {
        Relationship::Descendant => {
            targets.contains(node.token) && path.iter().any(|a| effectors.contains(a.token))
        }
        Relationship::Child => {
            targets.contains(node.token) && path.last().is_some_and(|p| effectors.contains(p.token))
        }
        Relationship::Sibling => node.children.iter().enumerate().any(|(i, a)| {
            node.children.iter().enumerate().any(|(j, b)| {
                i != j && targets.contains(a.token) && effectors.contains(b.token)
            })
        }),
    });
    !violated
}

pub(crate) fn satisfies(library: &Library, constraint: &Constraint, sequence: &[TokenId], root: &TreeNode) -> bool {
    let len = sequence.len();
    match constraint {
        Constraint::Length { min, max } => len >= *min && max.is_none_or(|m| len <= m),
        Constraint::Repeat { targets, min, max } => targets.iter().all(|&v| {
            let n = sequence.iter().filter(|&&t| t == v).count();
            n >= *min && n <= *max
        }),
        Constraint::Relational {
            targets,
            effectors,
            relationship,
        } => relational_ok(root, targets, effectors, *relationship),
        Constraint::Blacklist { trie, .. } => !trie.contains(sequence),
        Constraint::Valency { valency } => {
            // Only the completing step can be cut by a minimum-length mask:
            // there `d = 1`, so the final length must reach 1 + n, with n the
            // valency of the token placed just before it.
            let n = if len >= 2 { valency[sequence[len - 2]] } else { 0 };
            len > n
        }
        Constraint::Lexicographical { operators } => !root.any(&mut |node, _| {
            operators.contains(node.token)
                && node.children.windows(2).any(|w| {
                    library.token(w[1].token).lex_rank < library.token(w[0].token).lex_rank
                })
        }),
        Constraint::SubtreeLength { operators } => !root.any(&mut |node, _| {
            operators.contains(node.token) && node.children.windows(2).any(|w| w[1].len > w[0].len)
        }),
        Constraint::TypeUnit(TypeUnitMode::Positional(slots)) => sequence
            .iter()
            .enumerate()
            .all(|(i, &t)| match slots.get(i) {
                Some(Some(set)) => set.contains(t),
                _ => true,
            }),
        Constraint::TypeUnit(TypeUnitMode::Unit { target }) => satisfies_unit(library, sequence, target),
    }
}
