//! Independent brute-force oracles shared by the integration tests.
//!
//! Nothing here goes through `TraversalState`, the mask functions or the
//! crate's own post-hoc validator.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use insitu::constraints::{build_constraint_set, ConstraintSpec};
use insitu::policy::{Policy, PolicyConfig, Trainer, TrainerConfig};
use insitu::priors::PriorSet;
use insitu::sampler::Sampler;
use insitu::library::{Library, TokenId, TokenSpec, UnitRule};
use insitu::units::UnitSignature;

/// Every complete pre-order traversal with at most `max_len` tokens.
pub fn all_sequences(lib: &Library, max_len: usize) -> BTreeSet<Vec<TokenId>> {
    fn go(lib: &Library, max_len: usize, open: usize, prefix: &mut Vec<TokenId>, out: &mut BTreeSet<Vec<TokenId>>) {
        if open == 0 {
            out.insert(prefix.clone());
            return;
        }
        // Every open slot needs at least one more token.
        if prefix.len() + open > max_len {
            return;
        }
        for t in 0..lib.len() {
            prefix.push(t);
            go(lib, max_len, open - 1 + lib.arity(t), prefix, out);
            prefix.pop();
        }
    }
    let mut out = BTreeSet::new();
    go(lib, max_len, 1, &mut Vec::new(), &mut out);
    out
}

/// Plain recursive tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Node {
    pub token: TokenId,
    pub children: Vec<Node>,
}

impl Node {
    pub fn parse(lib: &Library, seq: &[TokenId]) -> Node {
        fn go(lib: &Library, seq: &[TokenId], at: &mut usize) -> Node {
            let token = seq[*at];
            *at += 1;
            let children = (0..lib.arity(token)).map(|_| go(lib, seq, at)).collect();
            Node { token, children }
        }
        let mut at = 0;
        let n = go(lib, seq, &mut at);
        assert_eq!(at, seq.len(), "trailing tokens");
        n
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Node::size).sum::<usize>()
    }

    pub fn prefix(&self) -> Vec<TokenId> {
        let mut out = vec![self.token];
        for c in &self.children {
            out.extend(c.prefix());
        }
        out
    }

    /// Visits every node with its ancestor tokens (root first).
    pub fn visit(&self, f: &mut dyn FnMut(&Node, &[TokenId])) {
        fn go(n: &Node, path: &mut Vec<TokenId>, f: &mut dyn FnMut(&Node, &[TokenId])) {
            f(n, path);
            path.push(n.token);
            for c in &n.children {
                go(c, path, f);
            }
            path.pop();
        }
        go(self, &mut Vec::new(), f);
    }

    pub fn any(&self, pred: &mut dyn FnMut(&Node, &[TokenId]) -> bool) -> bool {
        let mut hit = false;
        self.visit(&mut |n, p| hit |= pred(n, p));
        hit
    }

    /// Children of every node in `commutative` sorted by their own canonical
    /// prefix, recursively.
    pub fn canonical(&self, commutative: &[TokenId]) -> Node {
        let mut children: Vec<Node> = self.children.iter().map(|c| c.canonical(commutative)).collect();
        if commutative.contains(&self.token) {
            children.sort_by_key(|c| c.prefix());
        }
        Node {
            token: self.token,
            children,
        }
    }
}

/// Position-by-position parent and left-sibling root, from the tree.
pub fn parent_sibling(lib: &Library, seq: &[TokenId]) -> Vec<(Option<TokenId>, Option<TokenId>)> {
    let root = Node::parse(lib, seq);
    let mut out = Vec::new();
    fn go(n: &Node, parent: Option<TokenId>, sibling: Option<TokenId>, out: &mut Vec<(Option<TokenId>, Option<TokenId>)>) {
        out.push((parent, sibling));
        let mut left = None;
        for c in &n.children {
            go(c, Some(n.token), left, out);
            left = Some(c.token);
        }
    }
    go(&root, None, None, &mut out);
    out
}

pub fn ids(lib: &Library, names: &[&str]) -> Vec<TokenId> {
    names.iter().map(|n| lib.id(n).unwrap()).collect()
}

pub type Oracle = Box<dyn Fn(&Library, &[TokenId]) -> bool + Send + Sync>;

/// One constraint configuration with an independently written predicate.
pub struct Case {
    pub class: &'static str,
    pub label: &'static str,
    pub library: Library,
    pub spec: ConstraintSpec,
    pub max_len: usize,
    pub oracle: Oracle,
}

pub fn spec(json: serde_json::Value) -> ConstraintSpec {
    serde_json::from_value(json).unwrap()
}

pub fn base_library() -> Library {
    Library::from_pairs(&[("+", 2), ("sin", 1), ("x", 0)]).unwrap()
}

pub fn trig_library() -> Library {
    Library::from_pairs(&[("+", 2), ("sin", 1), ("cos", 1), ("x", 0)]).unwrap()
}

/// `x` in kg, `y` in m, `c` dimensionless.
pub fn unit_library() -> Library {
    let fixed = |u: UnitSignature| UnitRule::Fixed { unit: u };
    Library::new(&[
        TokenSpec::new("+", 2),
        TokenSpec::new("-", 2),
        TokenSpec::new("*", 2),
        TokenSpec::new("/", 2),
        TokenSpec::new("sin", 1),
        TokenSpec::new("x", 0).unit(fixed(UnitSignature::base("kg"))),
        TokenSpec::new("y", 0).unit(fixed(UnitSignature::base("m"))),
        TokenSpec::new("c", 0).unit(fixed(UnitSignature::dimensionless())),
    ])
    .unwrap()
}

/// Bottom-up integer-exponent unit evaluation of `unit_library` trees;
/// `None` on any mismatch.
pub fn unit_of(lib: &Library, node: &Node) -> Option<BTreeMap<&'static str, i32>> {
    let kids: Option<Vec<_>> = node.children.iter().map(|c| unit_of(lib, c)).collect();
    let kids = kids?;
    let clean = |mut m: BTreeMap<&'static str, i32>| {
        m.retain(|_, e| *e != 0);
        m
    };
    match lib.symbol(node.token) {
        "x" => Some(BTreeMap::from([("kg", 1)])),
        "y" => Some(BTreeMap::from([("m", 1)])),
        "c" => Some(BTreeMap::new()),
        "+" | "-" => (kids[0] == kids[1]).then(|| kids[0].clone()),
        "*" | "/" => {
            let sign = if lib.symbol(node.token) == "*" { 1 } else { -1 };
            let mut out = kids[0].clone();
            for (k, e) in &kids[1] {
                *out.entry(k).or_insert(0) += sign * e;
            }
            Some(clean(out))
        }
        "sin" => kids[0].is_empty().then(BTreeMap::new),
        other => panic!("no unit rule for {other}"),
    }
}

fn count(seq: &[TokenId], t: TokenId) -> usize {
    seq.iter().filter(|&&s| s == t).count()
}

/// One or more configurations for each of the eight constraint classes.
pub fn constraint_cases() -> Vec<Case> {
    let mut cases = Vec::new();

    cases.push(Case {
        class: "length",
        label: "min 3 max 6",
        library: base_library(),
        spec: spec(serde_json::json!({"constraint": "length", "min": 3, "max": 6})),
        max_len: 6,
        oracle: Box::new(|_, s| (3..=6).contains(&s.len())),
    });

    cases.push(Case {
        class: "repeat",
        label: "x between 2 and 3",
        library: base_library(),
        spec: spec(serde_json::json!({"constraint": "repeat", "targets": ["x"], "min": 2, "max": 3})),
        max_len: 6,
        oracle: Box::new(|l, s| (2..=3).contains(&count(s, l.id("x").unwrap()))),
    });
    cases.push(Case {
        class: "repeat",
        label: "at most one sin",
        library: base_library(),
        spec: spec(serde_json::json!({"constraint": "repeat", "targets": ["sin"], "max": 1})),
        max_len: 6,
        oracle: Box::new(|l, s| count(s, l.id("sin").unwrap()) <= 1),
    });

    cases.push(Case {
        class: "relational",
        label: "no trig below trig",
        library: trig_library(),
        spec: spec(serde_json::json!({"constraint": "relational", "targets": ["sin", "cos"],
            "effectors": ["sin", "cos"], "relationship": "descendant"})),
        max_len: 6,
        oracle: Box::new(|l, s| {
            let trig = ids(l, &["sin", "cos"]);
            !Node::parse(l, s).any(&mut |n, path| trig.contains(&n.token) && path.iter().any(|a| trig.contains(a)))
        }),
    });
    cases.push(Case {
        class: "relational",
        label: "x never a child of sin",
        library: trig_library(),
        spec: spec(serde_json::json!({"constraint": "relational", "targets": ["x"],
            "effectors": ["sin"], "relationship": "child"})),
        max_len: 6,
        oracle: Box::new(|l, s| {
            let (x, sin) = (l.id("x").unwrap(), l.id("sin").unwrap());
            !Node::parse(l, s).any(&mut |n, path| n.token == x && path.last() == Some(&sin))
        }),
    });
    cases.push(Case {
        class: "relational",
        label: "sin and x never siblings",
        library: trig_library(),
        spec: spec(serde_json::json!({"constraint": "relational", "targets": ["sin"],
            "effectors": ["x"], "relationship": "sibling"})),
        max_len: 6,
        oracle: Box::new(|l, s| {
            let (x, sin) = (l.id("x").unwrap(), l.id("sin").unwrap());
            !Node::parse(l, s).any(&mut |n, _| {
                let kids: Vec<TokenId> = n.children.iter().map(|c| c.token).collect();
                kids.contains(&x) && kids.contains(&sin)
            })
        }),
    });

    cases.push(Case {
        class: "blacklist",
        label: "three listed sequences",
        library: base_library(),
        spec: spec(serde_json::json!({"constraint": "blacklist",
            "sequences": ["x", "+ x x", "sin sin x"]})),
        max_len: 6,
        oracle: Box::new(|l, s| {
            let listed = ["x", "+ x x", "sin sin x"];
            !listed.iter().any(|t| l.parse(t).unwrap() == s)
        }),
    });

    cases.push(Case {
        class: "valency",
        label: "sin 3, + 1",
        library: base_library(),
        spec: spec(serde_json::json!({"constraint": "valency", "valency": {"sin": 3, "+": 1}})),
        max_len: 6,
        // Completing right after a token of valency n needs n + 1 tokens.
        oracle: Box::new(|l, s| {
            let v = |t: TokenId| match l.symbol(t) {
                "sin" => 3,
                "+" => 1,
                _ => 0,
            };
            s.len() < 2 || s.len() > v(s[s.len() - 2])
        }),
    });

    cases.push(Case {
        class: "lexicographical",
        label: "children of + sorted",
        library: trig_library(),
        spec: spec(serde_json::json!({"constraint": "lexicographical", "operators": ["+"]})),
        max_len: 6,
        oracle: Box::new(|l, s| {
            let plus = l.id("+").unwrap();
            // Default ranks follow declaration order, i.e. the token id.
            !Node::parse(l, s).any(&mut |n, _| n.token == plus && n.children[1].token < n.children[0].token)
        }),
    });

    cases.push(Case {
        class: "subtree_length",
        label: "children of + shrink",
        library: base_library(),
        spec: spec(serde_json::json!({"constraint": "subtree_length", "operators": ["+"]})),
        max_len: 6,
        oracle: Box::new(|l, s| {
            let plus = l.id("+").unwrap();
            !Node::parse(l, s).any(&mut |n, _| n.token == plus && n.children[1].size() > n.children[0].size())
        }),
    });

    cases.push(Case {
        class: "type_unit",
        label: "positional sets",
        library: base_library(),
        spec: spec(serde_json::json!({"constraint": "type_unit",
            "positions": [["+", "sin"], null, ["x"]]})),
        max_len: 6,
        oracle: Box::new(|l, s| {
            let ok0 = l.symbol(s[0]) != "x";
            let ok2 = s.len() < 3 || l.symbol(s[2]) == "x";
            ok0 && ok2
        }),
    });
    cases.push(Case {
        class: "type_unit",
        label: "root in kg",
        library: unit_library(),
        spec: spec(serde_json::json!({"constraint": "type_unit", "target": {"kg": 1}})),
        max_len: 5,
        oracle: Box::new(|l, s| unit_of(l, &Node::parse(l, s)) == Some(BTreeMap::from([("kg", 1)]))),
    });
    cases
}

/// Trainer settings for the bandit: the whole batch is kept, so the baseline
/// is the batch minimum and any sample containing `a` has positive advantage.
pub fn bandit_trainer() -> TrainerConfig {
    TrainerConfig {
        learning_rate: 0.01,
        batch_size: 100,
        risk_quantile: 1.0,
        ..Default::default()
    }
}

/// Trains on {+, sin, x, a} with max length 3 and reward 1 for any sequence
/// containing `a`. Returns the exact probability that `a` appears.
pub fn bandit(config: TrainerConfig, iterations: u64, seed: u64) -> f64 {
    let lib = Library::from_pairs(&[("+", 2), ("sin", 1), ("x", 0), ("a", 0)]).unwrap();
    let a = lib.id("a").unwrap();
    let mut policy = Policy::init(lib.len(), &PolicyConfig::default(), seed).unwrap();
    let priors = PriorSet::new();
    let cs = build_constraint_set(&[spec(serde_json::json!({"constraint": "length", "max": 3}))], &lib).unwrap();
    let mut trainer = Trainer::new(config.clone(), &policy);
    for it in 0..iterations {
        let records = Sampler::new(&lib, &policy, &priors, &cs)
            .sample_batch(seed, it, config.batch_size)
            .unwrap();
        let rewards: Vec<f64> = records.iter().map(|r| f64::from(u8::from(r.sequence.contains(&a)))).collect();
        trainer.train_step(&mut policy, &records, &rewards);
    }
    let e = Sampler::new(&lib, &policy, &priors, &cs).enumerate(3).unwrap();
    e.probabilities.iter().filter(|(s, _)| s.contains(&a)).map(|(_, p)| p).sum()
}
