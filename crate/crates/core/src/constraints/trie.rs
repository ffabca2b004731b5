//! Prefix trie of blacklisted complete sequences.

use std::collections::BTreeMap;

use crate::library::TokenId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceTrie {
    nodes: Vec<Node>,
    len: usize,
}

impl Default for SequenceTrie {
    fn default() -> Self {
        Self::new()
    }
}

impl SequenceTrie {
    pub fn new() -> Self {
        Self {
            nodes: vec![Node::default()],
            len: 0,
        }
    }

    pub fn from_sequences<I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[TokenId]>,
    {
        let mut trie = Self::new();
        for s in sequences {
            trie.insert(s.as_ref());
        }
        trie
    }

    /// Number of distinct stored sequences.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Returns false if the sequence was already present.
    pub fn insert(&mut self, sequence: &[TokenId]) -> bool {
        let mut at = 0;
        for &t in sequence {
            at = match self.nodes[at].children.get(&t) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[at].children.insert(t, next);
                    next
                }
            };
        }
        let fresh = !self.nodes[at].terminal;
        self.nodes[at].terminal = true;
        if fresh {
            self.len += 1;
        }
        fresh
    }

    fn find(&self, prefix: &[TokenId]) -> Option<usize> {
        let mut at = 0;
        for t in prefix {
            at = *self.nodes[at].children.get(t)?;
        }
        Some(at)
    }

    pub fn contains(&self, sequence: &[TokenId]) -> bool {
        self.find(sequence).is_some_and(|n| self.nodes[n].terminal)
    }

    /// Tokens `v` such that `prefix ∥ v` is a stored sequence.
    pub fn completions(&self, prefix: &[TokenId]) -> impl Iterator<Item = TokenId> + '_ {
        self.find(prefix)
            .into_iter()
            .flat_map(move |n| self.nodes[n].children.iter())
            .filter(move |(_, &child)| self.nodes[child].terminal)
            .map(|(&t, _)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_and_lookup() {
        let mut trie = SequenceTrie::new();
        assert!(trie.insert(&[0, 2, 2]));
        assert!(!trie.insert(&[0, 2, 2]));
        assert!(trie.insert(&[2]));
        assert_eq!(trie.len(), 2);
        assert!(trie.contains(&[0, 2, 2]));
        assert!(!trie.contains(&[0, 2]));
        assert_eq!(trie.completions(&[0, 2]).collect::<Vec<_>>(), vec![2]);
        assert_eq!(trie.completions(&[]).collect::<Vec<_>>(), vec![2]);
        assert_eq!(trie.completions(&[1]).count(), 0);
    }
}
