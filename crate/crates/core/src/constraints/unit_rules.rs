//! Unit propagation for the type/unit constraint.
//!
//! Units are tracked on a three-valued lattice: a definite signature, not
//! yet determinable, or contradictory. Masks only fire on definite
//! contradictions.

use crate::library::{Library, TokenId, UnitRule};
use crate::traversal::{Frame, TraversalState};
use crate::units::{Unit, UnitSignature};

use super::Mask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnitValue {
    Known(UnitSignature),
    Unknown,
    Contradiction,
}

impl UnitValue {
    fn dimensionless() -> Self {
        UnitValue::Known(UnitSignature::dimensionless())
    }
}

/// Output unit of a node given its children's output units.
pub fn combine(rule: &UnitRule, children: &[UnitValue]) -> UnitValue {
    if children.contains(&UnitValue::Contradiction) {
        return UnitValue::Contradiction;
    }
    let known = |v: &UnitValue| match v {
        UnitValue::Known(u) => Some(u.clone()),
        _ => None,
    };
    match rule {
        UnitRule::Fixed { unit } => UnitValue::Known(unit.clone()),
        UnitRule::Dimensionless => {
            let ok = children.iter().all(|c| match c {
                UnitValue::Known(u) => u.is_dimensionless(),
                _ => true,
            });
            if ok {
                UnitValue::dimensionless()
            } else {
                UnitValue::Contradiction
            }
        }
        UnitRule::Preserving => {
            let mut out: Option<UnitSignature> = None;
            for u in children.iter().filter_map(known) {
                match &out {
                    Some(prev) if *prev != u => return UnitValue::Contradiction,
                    _ => out = Some(u),
                }
            }
            out.map_or(UnitValue::Unknown, UnitValue::Known)
        }
        UnitRule::Multiplicative => {
            let mut acc = UnitSignature::dimensionless();
            for c in children {
                match known(c) {
                    Some(u) => acc = acc.mul(&u),
                    None => return UnitValue::Unknown,
                }
            }
            UnitValue::Known(acc)
        }
        UnitRule::Divisive => match children {
            [a, b] => match (known(a), known(b)) {
                (Some(a), Some(b)) => UnitValue::Known(a.div(&b)),
                _ => UnitValue::Unknown,
            },
            _ => UnitValue::Unknown,
        },
        UnitRule::Power => {
            if let Some(UnitValue::Known(e)) = children.get(1) {
                if !e.is_dimensionless() {
                    return UnitValue::Contradiction;
                }
            }
            match children.first() {
                Some(UnitValue::Known(b)) if b.is_dimensionless() => UnitValue::dimensionless(),
                _ => UnitValue::Unknown,
            }
        }
    }
}

/// Bottom-up unit of a complete pre-order slice.
pub fn subtree_unit(library: &Library, slice: &[TokenId]) -> UnitValue {
    let mut stack: Vec<UnitValue> = Vec::new();
    for &t in slice.iter().rev() {
        let token = library.token(t);
        let split = stack.len() - token.arity;
        let mut children = stack.split_off(split);
        children.reverse();
        stack.push(combine(&token.unit_rule, &children));
    }
    debug_assert_eq!(stack.len(), 1);
    stack.pop().unwrap_or(UnitValue::Unknown)
}

fn child_units(library: &Library, state: &TraversalState, frame: &Frame) -> Vec<UnitValue> {
    frame
        .children
        .iter()
        .map(|c| subtree_unit(library, &state.sequence()[c.start..c.start + c.len]))
        .collect()
}

/// Unit required of the next position, walking from the root requirement
/// down the open-node stack.
pub fn required_unit(library: &Library, state: &TraversalState, target: &UnitSignature) -> UnitValue {
    let mut required = UnitValue::Known(target.clone());
    for frame in state.open_stack() {
        let rule = &library.token(frame.token).unit_rule;
        let index = frame.children.len();
        let done = child_units(library, state, frame);
        let known_req = match &required {
            UnitValue::Known(u) => Some(u.clone()),
            _ => None,
        };
        required = match rule {
            UnitRule::Fixed { .. } => UnitValue::Unknown,
            UnitRule::Dimensionless => UnitValue::dimensionless(),
            UnitRule::Preserving => match known_req {
                Some(u) => UnitValue::Known(u),
                None => done
                    .iter()
                    .find_map(|c| match c {
                        UnitValue::Known(u) => Some(UnitValue::Known(u.clone())),
                        _ => None,
                    })
                    .unwrap_or(UnitValue::Unknown),
            },
            UnitRule::Multiplicative => {
                if index + 1 < frame.arity {
                    UnitValue::Unknown
                } else {
                    match (known_req, combine(rule, &done)) {
                        (Some(r), UnitValue::Known(prod)) => UnitValue::Known(r.div(&prod)),
                        _ => UnitValue::Unknown,
                    }
                }
            }
            UnitRule::Divisive => match (index, known_req, done.first()) {
                (1, Some(r), Some(UnitValue::Known(num))) => UnitValue::Known(num.div(&r)),
                _ => UnitValue::Unknown,
            },
            UnitRule::Power => {
                if index == 0 {
                    UnitValue::Unknown
                } else {
                    let base_dimensionless = matches!(
                        done.first(),
                        Some(UnitValue::Known(b)) if b.is_dimensionless()
                    );
                    match known_req {
                        Some(r) if base_dimensionless && !r.is_dimensionless() => {
                            UnitValue::Contradiction
                        }
                        _ => UnitValue::dimensionless(),
                    }
                }
            }
        };
        if required == UnitValue::Contradiction {
            break;
        }
    }
    required
}

/// Whether a token's output can possibly equal `required`.
fn can_produce(rule: &UnitRule, required: &UnitSignature) -> bool {
    match rule {
        UnitRule::Fixed { unit } => unit == required,
        UnitRule::Dimensionless => required.is_dimensionless(),
        UnitRule::Preserving
        | UnitRule::Multiplicative
        | UnitRule::Divisive
        | UnitRule::Power => true,
    }
}

pub fn unit_mask(library: &Library, state: &TraversalState, target: &UnitSignature) -> Mask {
    match required_unit(library, state, target) {
        UnitValue::Known(required) => {
            let mut mask = Mask::none(library.len());
            for (id, token) in library.tokens().iter().enumerate() {
                if !can_produce(&token.unit_rule, &required) {
                    mask.block(id);
                }
            }
            mask
        }
        UnitValue::Unknown => Mask::none(library.len()),
        UnitValue::Contradiction => Mask::all(library.len()),
    }
}

/// Post-hoc check of a complete traversal against a root unit.
pub fn satisfies_unit(library: &Library, sequence: &[TokenId], target: &UnitSignature) -> bool {
    match subtree_unit(library, sequence) {
        UnitValue::Known(u) => u == *target,
        UnitValue::Unknown => true,
        UnitValue::Contradiction => false,
    }
}

impl From<Unit> for UnitValue {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Known(s) => UnitValue::Known(s),
            Unit::Unknown => UnitValue::Unknown,
        }
    }
}
