//! Token vocabulary: symbols with arity, lexicographic rank, unit rule and tags.
//!
//! Every logit, prior and mask vector in the crate is indexed by a token's
//! position in its [`Library`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::UnitSignature;

/// Position of a token inside its library.
pub type TokenId = usize;

pub const TERMINAL_TAG: &str = "terminal";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LibraryError {
    #[error("library is empty")]
    Empty,
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("duplicate lexicographic rank {rank} (`{first}` and `{second}`)")]
    DuplicateLexRank {
        rank: u32,
        first: String,
        second: String,
    },
    #[error("library has no terminal (arity 0) token, so no traversal can complete")]
    NoTerminal,
    #[error("token `{0}` is tagged terminal but has non-zero arity")]
    TerminalTagMismatch(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
}

/// How a token's output unit relates to the units of its children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UnitRule {
    /// Output has this unit regardless of inputs (variables, constants).
    Fixed { unit: UnitSignature },
    /// Inputs and output dimensionless (trig, exp, log).
    Dimensionless,
    /// All children and the output share one unit (+, -).
    Preserving,
    /// Output is the product of the child units.
    Multiplicative,
    /// Output is the first child unit over the second.
    Divisive,
    /// Exponent dimensionless; base unit only determined when dimensionless.
    Power,
}

/// Descriptor used to build a [`Library`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSpec {
    pub symbol: String,
    pub arity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lex_rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<UnitRule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl TokenSpec {
    pub fn new(symbol: &str, arity: usize) -> Self {
        Self {
            symbol: symbol.to_string(),
            arity,
            lex_rank: None,
            unit: None,
            tags: Vec::new(),
        }
    }

    pub fn unit(mut self, rule: UnitRule) -> Self {
        self.unit = Some(rule);
        self
    }

    pub fn tag(mut self, tag: &str) -> Self {
        self.tags.push(tag.to_string());
        self
    }

    pub fn rank(mut self, rank: u32) -> Self {
        self.lex_rank = Some(rank);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub symbol: String,
    pub arity: usize,
    pub lex_rank: u32,
    pub unit_rule: UnitRule,
    pub tags: BTreeSet<String>,
}

impl Token {
    pub fn is_terminal(&self) -> bool {
        self.arity == 0
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

fn default_unit_rule(symbol: &str, arity: usize) -> UnitRule {
    match (symbol, arity) {
        (_, 0) => UnitRule::Fixed {
            unit: UnitSignature::dimensionless(),
        },
        ("+" | "-", _) => UnitRule::Preserving,
        ("*", 2) => UnitRule::Multiplicative,
        ("/", 2) => UnitRule::Divisive,
        ("pow" | "^", 2) => UnitRule::Power,
        _ => UnitRule::Dimensionless,
    }
}

fn default_tags(symbol: &str) -> &'static [&'static str] {
    match symbol {
        "sin" | "cos" | "tan" => &["trig"],
        "+" | "*" => &["commutative"],
        _ => &[],
    }
}

/// Immutable ordered token vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    tokens: Vec<Token>,
    index: HashMap<String, TokenId>,
    arity_classes: BTreeMap<usize, Vec<TokenId>>,
}

impl Library {
    /// Validates descriptors and derives arity classes.
    ///
    /// Lex ranks default to declaration order. Tokens of arity zero get the
    /// `terminal` tag, and the well-known operators get their unit rules and
    /// `trig`/`commutative` tags unless the descriptor overrides them.
    pub fn new(specs: &[TokenSpec]) -> Result<Self, LibraryError> {
        if specs.is_empty() {
            return Err(LibraryError::Empty);
        }
        let mut tokens = Vec::with_capacity(specs.len());
        let mut index = HashMap::new();
        let mut ranks: HashMap<u32, String> = HashMap::new();
        let mut arity_classes: BTreeMap<usize, Vec<TokenId>> = BTreeMap::new();
        for (id, spec) in specs.iter().enumerate() {
            if index.insert(spec.symbol.clone(), id).is_some() {
                return Err(LibraryError::DuplicateSymbol(spec.symbol.clone()));
            }
            let lex_rank = spec.lex_rank.unwrap_or(id as u32);
            if let Some(first) = ranks.insert(lex_rank, spec.symbol.clone()) {
                return Err(LibraryError::DuplicateLexRank {
                    rank: lex_rank,
                    first,
                    second: spec.symbol.clone(),
                });
            }
            let mut tags: BTreeSet<String> = spec.tags.iter().cloned().collect();
            if spec.tags.is_empty() {
                tags.extend(default_tags(&spec.symbol).iter().map(|t| t.to_string()));
            }
            if spec.arity == 0 {
                tags.insert(TERMINAL_TAG.to_string());
            } else if tags.contains(TERMINAL_TAG) {
                return Err(LibraryError::TerminalTagMismatch(spec.symbol.clone()));
            }
            let unit_rule = spec
                .unit
                .clone()
                .unwrap_or_else(|| default_unit_rule(&spec.symbol, spec.arity));
            arity_classes.entry(spec.arity).or_default().push(id);
            tokens.push(Token {
                symbol: spec.symbol.clone(),
                arity: spec.arity,
                lex_rank,
                unit_rule,
                tags,
            });
        }
        if !arity_classes.contains_key(&0) {
            return Err(LibraryError::NoTerminal);
        }
        Ok(Self {
            tokens,
            index,
            arity_classes,
        })
    }

    /// Shorthand for tests and presets: `(symbol, arity)` pairs.
    pub fn from_pairs(pairs: &[(&str, usize)]) -> Result<Self, LibraryError> {
        let specs: Vec<TokenSpec> = pairs.iter().map(|(s, a)| TokenSpec::new(s, *a)).collect();
        Self::new(&specs)
    }

    /// The constant-free library used for the Nguyen runs.
    pub fn nguyen(variables: usize) -> Self {
        let mut specs: Vec<TokenSpec> = [
            ("+", 2),
            ("-", 2),
            ("*", 2),
            ("/", 2),
            ("sin", 1),
            ("cos", 1),
            ("exp", 1),
            ("log", 1),
        ]
        .iter()
        .map(|(s, a)| TokenSpec::new(s, *a))
        .collect();
        for k in 1..=variables.max(1) {
            specs.push(TokenSpec::new(&format!("x{k}"), 0).tag("variable"));
        }
        Self::new(&specs).expect("preset library is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> &Token {
        &self.tokens[id]
    }

    pub fn arity(&self, id: TokenId) -> usize {
        self.tokens[id].arity
    }

    pub fn symbol(&self, id: TokenId) -> &str {
        &self.tokens[id].symbol
    }

    pub fn id(&self, symbol: &str) -> Result<TokenId, LibraryError> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| LibraryError::UnknownSymbol(symbol.to_string()))
    }

    /// 𝓐(n): tokens with arity `n`, in library order.
    pub fn arity_class(&self, arity: usize) -> &[TokenId] {
        self.arity_classes
            .get(&arity)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn arities(&self) -> impl Iterator<Item = usize> + '_ {
        self.arity_classes.keys().copied()
    }

    pub fn max_arity(&self) -> usize {
        self.arity_classes.keys().next_back().copied().unwrap_or(0)
    }

    pub fn terminals(&self) -> &[TokenId] {
        self.arity_class(0)
    }

    pub fn with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = TokenId> + 'a {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.has_tag(tag))
            .map(|(id, _)| id)
    }

    /// Resolves symbols to ids. An entry of the form `@tag` expands to every
    /// token carrying that tag.
    pub fn resolve_set(&self, names: &[String]) -> Result<BTreeSet<TokenId>, LibraryError> {
        let mut out = BTreeSet::new();
        for name in names {
            if let Some(tag) = name.strip_prefix('@') {
                out.extend(self.with_tag(tag));
            } else {
                out.insert(self.id(name)?);
            }
        }
        Ok(out)
    }

    /// Parses a whitespace-separated traversal such as `"+ x1 sin x1"`.
    pub fn parse(&self, text: &str) -> Result<Vec<TokenId>, LibraryError> {
        text.split_whitespace().map(|s| self.id(s)).collect()
    }

    pub fn format(&self, sequence: &[TokenId]) -> String {
        sequence
            .iter()
            .map(|&id| self.symbol(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn symbols(&self, sequence: &[TokenId]) -> Vec<String> {
        sequence.iter().map(|&id| self.symbol(id).to_string()).collect()
    }

    pub fn specs(&self) -> Vec<TokenSpec> {
        self.tokens
            .iter()
            .map(|t| TokenSpec {
                symbol: t.symbol.clone(),
                arity: t.arity,
                lex_rank: Some(t.lex_rank),
                unit: Some(t.unit_rule.clone()),
                tags: t
                    .tags
                    .iter()
                    .filter(|tag| tag.as_str() != TERMINAL_TAG)
                    .cloned()
                    .collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_tokens_by_arity() {
        let lib = Library::from_pairs(&[("+", 2), ("sin", 1), ("x", 0)]).unwrap();
        assert_eq!(lib.arity_class(2), &[0]);
        assert_eq!(lib.arity_class(1), &[1]);
        assert_eq!(lib.arity_class(0), &[2]);
        assert_eq!(lib.max_arity(), 2);
        let total: usize = lib.arities().map(|a| lib.arity_class(a).len()).sum();
        assert_eq!(total, lib.len());
    }

    #[test]
    fn rejects_duplicate_symbol() {
        let err = Library::from_pairs(&[("+", 2), ("+", 2)]).unwrap_err();
        assert_eq!(err, LibraryError::DuplicateSymbol("+".into()));
    }

    #[test]
    fn rejects_library_without_terminal() {
        let err = Library::from_pairs(&[("+", 2), ("sin", 1)]).unwrap_err();
        assert_eq!(err, LibraryError::NoTerminal);
    }

    #[test]
    fn rejects_duplicate_lex_rank() {
        let specs = [TokenSpec::new("x", 0).rank(3), TokenSpec::new("y", 0).rank(3)];
        assert!(matches!(
            Library::new(&specs),
            Err(LibraryError::DuplicateLexRank { rank: 3, .. })
        ));
    }

    #[test]
    fn terminal_tag_tracks_arity() {
        let lib = Library::from_pairs(&[("+", 2), ("x", 0)]).unwrap();
        for t in lib.tokens() {
            assert_eq!(t.arity == 0, t.has_tag(TERMINAL_TAG));
        }
        let bad = [TokenSpec::new("f", 1).tag(TERMINAL_TAG), TokenSpec::new("x", 0)];
        assert!(matches!(
            Library::new(&bad),
            Err(LibraryError::TerminalTagMismatch(_))
        ));
    }

    #[test]
    fn defaults_follow_declaration_order() {
        let lib = Library::nguyen(2);
        assert_eq!(lib.len(), 10);
        let ranks: Vec<u32> = lib.tokens().iter().map(|t| t.lex_rank).collect();
        assert_eq!(ranks, (0..10).collect::<Vec<u32>>());
        assert_eq!(lib.token(lib.id("*").unwrap()).unit_rule, UnitRule::Multiplicative);
        assert!(lib.token(lib.id("cos").unwrap()).has_tag("trig"));
        let trig = lib.resolve_set(&["@trig".to_string()]).unwrap();
        assert_eq!(trig.len(), 2);
    }

    #[test]
    fn parses_and_formats_traversals() {
        let lib = Library::from_pairs(&[("+", 2), ("sin", 1), ("x", 0)]).unwrap();
        let seq = lib.parse("+ sin x x").unwrap();
        assert_eq!(seq, vec![0, 1, 2, 2]);
        assert_eq!(lib.format(&seq), "+ sin x x");
        assert!(lib.parse("+ y").is_err());
    }
}
