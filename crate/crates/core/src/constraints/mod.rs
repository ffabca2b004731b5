//! In situ constraints: `{0, -inf}` masks computed before each token is
//! sampled, their union, and the post-hoc predicates they must agree with.

mod mask;
pub mod rules;
pub mod trie;
pub mod unit_rules;
pub mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::{Library, LibraryError, TokenId};
use crate::traversal::{TraversalError, TraversalState};
use crate::units::UnitSignature;

pub use mask::{Mask, NEG_INF};
pub use rules::{Relationship, TokenSet};
pub use trie::SequenceTrie;
pub use validate::TreeNode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("every token is constrained at step {step} (contributing: {})", constraints.join(", "))]
    InfeasibleStep { step: usize, constraints: Vec<String> },
    #[error("invalid constraint `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("lexicographical and subtree-length constraints are mutually incompatible")]
    Incompatible,
    #[error(transparent)]
    Library(#[from] LibraryError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeUnitMode {
    /// Allowed token set per position; `None` leaves a position free.
    Positional(Vec<Option<TokenSet>>),
    /// Required output unit at the root.
    Unit { target: UnitSignature },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Length { min: usize, max: Option<usize> },
    Repeat { targets: Vec<TokenId>, min: usize, max: usize },
    Relational {
        targets: TokenSet,
        effectors: TokenSet,
        relationship: Relationship,
    },
    Blacklist { trie: SequenceTrie, systematic: bool },
    /// Valency per token, indexed by token id.
    Valency { valency: Vec<usize> },
    Lexicographical { operators: TokenSet },
    SubtreeLength { operators: TokenSet },
    TypeUnit(TypeUnitMode),
}

impl Constraint {
    pub fn kind(&self) -> &'static str {
        match self {
            Constraint::Length { .. } => "length",
            Constraint::Repeat { .. } => "repeat",
            Constraint::Relational { .. } => "relational",
            Constraint::Blacklist { .. } => "blacklist",
            Constraint::Valency { .. } => "valency",
            Constraint::Lexicographical { .. } => "lexicographical",
            Constraint::SubtreeLength { .. } => "subtree_length",
            Constraint::TypeUnit(_) => "type_unit",
        }
    }

    pub fn mask(&self, state: &TraversalState, library: &Library) -> Mask {
        match self {
            Constraint::Length { min, max } => rules::length_mask(state, library, *min, *max),
            Constraint::Repeat { targets, min, max } => {
                rules::repeat_mask(state, library, targets, *min, *max)
            }
            Constraint::Relational {
                targets,
                effectors,
                relationship,
            } => rules::relational_mask(state, library, targets, effectors, *relationship),
            Constraint::Blacklist { trie, .. } => rules::blacklist_mask(state, library, trie),
            Constraint::Valency { valency } => {
                let n = state.sequence().last().map_or(0, |&t| valency[t]);
                rules::valency_mask(state, library, n)
            }
            Constraint::Lexicographical { operators } => {
                rules::lexicographical_mask(state, library, operators)
            }
            Constraint::SubtreeLength { operators } => {
                rules::subtree_length_mask(state, library, operators)
            }
            Constraint::TypeUnit(TypeUnitMode::Positional(slots)) => {
                rules::positional_mask(state, library, slots)
            }
            Constraint::TypeUnit(TypeUnitMode::Unit { target }) => {
                unit_rules::unit_mask(library, state, target)
            }
        }
    }

    fn check(&self, name: &str) -> Result<(), ConstraintError> {
        let invalid = |reason: &str| {
            Err(ConstraintError::Invalid {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        match self {
            Constraint::Length { min, max } => {
                if *min < 1 {
                    return invalid("min must be at least 1");
                }
                if max.is_some_and(|m| m < *min) {
                    return invalid("min exceeds max");
                }
            }
            Constraint::Repeat { targets, min, max } => {
                if targets.is_empty() {
                    return invalid("targets must be non-empty");
                }
                if min > max {
                    return invalid("min exceeds max");
                }
            }
            Constraint::Relational {
                targets, effectors, ..
            } if targets.is_empty() || effectors.is_empty() => {
                return invalid("targets and effectors must be non-empty");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Union of named masks. Fails when every token would be constrained.
pub fn compose_masks(len: usize, masks: &[(&str, Mask)], step: usize) -> Result<Mask, ConstraintError> {
    let mut out = Mask::none(len);
    for (_, m) in masks {
        out.union_with(m);
    }
    if len > 0 && out.is_full() {
        return Err(ConstraintError::InfeasibleStep {
            step,
            constraints: masks
                .iter()
                .filter(|(_, m)| !m.is_clear())
                .map(|(name, _)| name.to_string())
                .collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedConstraint {
    pub name: String,
    pub constraint: Constraint,
}

/// An ordered collection of constraints applied together.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    items: Vec<NamedConstraint>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a constraint, named after its kind (suffixed when repeated).
    pub fn with(mut self, constraint: Constraint) -> Self {
        self.push(constraint);
        self
    }

    pub fn push(&mut self, constraint: Constraint) {
        let kind = constraint.kind();
        let same = self.items.iter().filter(|c| c.constraint.kind() == kind).count();
        let name = if same == 0 {
            kind.to_string()
        } else {
            format!("{kind}#{}", same + 1)
        };
        self.items.push(NamedConstraint { name, constraint });
    }

    pub fn items(&self) -> &[NamedConstraint] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Validates parameters and pairwise compatibility.
    pub fn check(&self) -> Result<(), ConstraintError> {
        for c in &self.items {
            c.constraint.check(&c.name)?;
        }
        let has = |kind: &str| self.items.iter().any(|c| c.constraint.kind() == kind);
        if has("lexicographical") && has("subtree_length") {
            return Err(ConstraintError::Incompatible);
        }
        Ok(())
    }

    /// Composed mask for the next position of `state`.
    pub fn mask(&self, state: &TraversalState, library: &Library) -> Result<Mask, ConstraintError> {
        let masks: Vec<(&str, Mask)> = self
            .items
            .iter()
            .map(|c| (c.name.as_str(), c.constraint.mask(state, library)))
            .collect();
        compose_masks(library.len(), &masks, state.len())
    }

    /// Tightest configured maximum length, if any.
    pub fn max_length(&self) -> Option<usize> {
        self.items
            .iter()
            .filter_map(|c| match c.constraint {
                Constraint::Length { max, .. } => max,
                _ => None,
            })
            .min()
    }

    /// Post-hoc check of a complete traversal against every constraint.
    pub fn validate(&self, library: &Library, sequence: &[TokenId]) -> Result<bool, TraversalError> {
        let root = TreeNode::build(library, sequence)?;
        Ok(self
            .items
            .iter()
            .all(|c| validate::satisfies(library, &c.constraint, sequence, &root)))
    }

    /// Names of the constraints a complete traversal violates.
    pub fn violations(&self, library: &Library, sequence: &[TokenId]) -> Result<Vec<String>, TraversalError> {
        let root = TreeNode::build(library, sequence)?;
        Ok(self
            .items
            .iter()
            .filter(|c| !validate::satisfies(library, &c.constraint, sequence, &root))
            .map(|c| c.name.clone())
            .collect())
    }

    pub fn has_systematic_blacklist(&self) -> bool {
        self.items
            .iter()
            .any(|c| matches!(c.constraint, Constraint::Blacklist { systematic: true, .. }))
    }

    /// Records sampled sequences in every systematic-exploration blacklist.
    pub fn record_sampled<'a>(&mut self, sequences: impl IntoIterator<Item = &'a [TokenId]>) {
        let sequences: Vec<&[TokenId]> = sequences.into_iter().collect();
        for c in &mut self.items {
            if let Constraint::Blacklist {
                trie,
                systematic: true,
            } = &mut c.constraint
            {
                for s in &sequences {
                    trie.insert(s);
                }
            }
        }
    }
}

fn default_operators() -> Vec<String> {
    vec!["@commutative".to_string()]
}

fn default_min() -> usize {
    1
}

/// Declarative constraint description, as found in experiment configs.
///
/// Token lists accept symbols or `@tag` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Length {
        #[serde(default = "default_min")]
        min: usize,
        #[serde(default)]
        max: Option<usize>,
    },
    Repeat {
        targets: Vec<String>,
        #[serde(default)]
        min: usize,
        max: usize,
    },
    Relational {
        targets: Vec<String>,
        effectors: Vec<String>,
        relationship: Relationship,
    },
    Blacklist {
        #[serde(default)]
        sequences: Vec<String>,
        #[serde(default)]
        systematic: bool,
    },
    Valency {
        valency: BTreeMap<String, usize>,
    },
    Lexicographical {
        #[serde(default = "default_operators")]
        operators: Vec<String>,
    },
    SubtreeLength {
        #[serde(default = "default_operators")]
        operators: Vec<String>,
    },
    TypeUnit {
        #[serde(default)]
        positions: Option<Vec<Option<Vec<String>>>>,
        #[serde(default)]
        target: Option<UnitSignature>,
    },
}

impl ConstraintSpec {
    pub fn resolve(&self, library: &Library) -> Result<Constraint, ConstraintError> {
        let n = library.len();
        let set = |names: &[String]| -> Result<TokenSet, ConstraintError> {
            Ok(TokenSet::new(n, library.resolve_set(names)?))
        };
        Ok(match self {
            ConstraintSpec::Length { min, max } => Constraint::Length {
                min: *min,
                max: *max,
            },
            ConstraintSpec::Repeat { targets, min, max } => Constraint::Repeat {
                targets: library.resolve_set(targets)?.into_iter().collect(),
                min: *min,
                max: *max,
            },
            ConstraintSpec::Relational {
                targets,
                effectors,
                relationship,
            } => Constraint::Relational {
                targets: set(targets)?,
                effectors: set(effectors)?,
                relationship: *relationship,
            },
            ConstraintSpec::Blacklist {
                sequences,
                systematic,
            } => {
                let mut trie = SequenceTrie::new();
                for s in sequences {
                    trie.insert(&library.parse(s)?);
                }
                Constraint::Blacklist {
                    trie,
                    systematic: *systematic,
                }
            }
            ConstraintSpec::Valency { valency } => {
                let mut table = vec![0; n];
                for (symbol, v) in valency {
                    table[library.id(symbol)?] = *v;
                }
                Constraint::Valency { valency: table }
            }
            ConstraintSpec::Lexicographical { operators } => Constraint::Lexicographical {
                operators: set(operators)?,
            },
            ConstraintSpec::SubtreeLength { operators } => Constraint::SubtreeLength {
                operators: set(operators)?,
            },
            ConstraintSpec::TypeUnit { positions, target } => match (positions, target) {
                (Some(slots), None) => {
                    let slots = slots
                        .iter()
                        .map(|slot| slot.as_deref().map(set).transpose())
                        .collect::<Result<Vec<_>, _>>()?;
                    Constraint::TypeUnit(TypeUnitMode::Positional(slots))
                }
                (None, Some(target)) => Constraint::TypeUnit(TypeUnitMode::Unit {
                    target: target.clone(),
                }),
                _ => {
                    return Err(ConstraintError::Invalid {
                        name: "type_unit".into(),
                        reason: "exactly one of `positions` or `target` is required".into(),
                    })
                }
            },
        })
    }
}

/// Resolves and checks a list of specs against a library.
pub fn build_constraint_set(specs: &[ConstraintSpec], library: &Library) -> Result<ConstraintSet, ConstraintError> {
    let mut set = ConstraintSet::new();
    for spec in specs {
        set.push(spec.resolve(library)?);
    }
    set.check()?;
    Ok(set)
}
