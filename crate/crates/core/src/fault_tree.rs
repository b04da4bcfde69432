//! Fault trees over pattern events.
//!
//! Leaves are independent base events (or exact complements of one). Internal
//! nodes are AND/OR gates, causal identities (the fed node is the same event
//! as its input), or implications (the input over-approximates the fed node,
//! so its probability is only an upper bound).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::Pattern;

/// Base events beyond this count are rejected.
pub const MAX_BASE_EVENTS: usize = 128;
const COHERENCE_ENUM_LIMIT: usize = 16;
const COMPLEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FtError {
    #[error("invalid fault tree: {}", join(.0))]
    Invalid(Vec<FtIssue>),
    #[error("no probability for leaf `{0}`")]
    MissingProbability(String),
    #[error("probability for `{id}` must lie in [0, 1], got {p}")]
    BadProbability { id: String, p: f64 },
    #[error("unknown leaf `{0}` in probability assignment")]
    UnknownLeaf(String),
    #[error("domain error: {0}")]
    Domain(String),
}

fn join(issues: &[FtIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Structural problem found by [`FaultTree::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtIssue {
    pub node: Option<String>,
    pub message: String,
}

impl fmt::Display for FtIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "{} at `{n}`", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn issue(node: Option<&str>, message: impl Into<String>) -> FtIssue {
    FtIssue {
        node: node.map(str::to_string),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternEvent {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_ref: Option<Pattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_prob: Option<f64>,
    /// This leaf is the negation of another leaf.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complement_of: Option<String>,
    /// Branch that needs several simultaneous failures.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub multi_failure: bool,
}

impl PatternEvent {
    pub fn new(id: &str, description: &str) -> Self {
        Self {
            id: id.to_string(),
            description: description.to_string(),
            pattern_ref: None,
            leaf_prob: None,
            complement_of: None,
            multi_failure: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    CausalIdentity,
    Implication,
    GateInput,
}

/// `from` feeds `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultTree {
    pub top: String,
    pub nodes: Vec<PatternEvent>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub gates: BTreeMap<String, Gate>,
    /// Leaf pairs declared statistically dependent; evaluation assumes
    /// independence, so any entry fails validation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correlated: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
enum Def {
    Var(usize),
    NotVar(usize),
    Gate(Gate, Vec<usize>),
    Same(usize),
}

/// Validated tree in evaluation form.
#[derive(Debug, Clone)]
struct Compiled {
    defs: Vec<Def>,
    support: Vec<u128>,
    /// Node index of each base variable.
    var_nodes: Vec<usize>,
    top: usize,
    upper_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub probability: f64,
    /// An implication edge lies on the way to the top event.
    pub upper_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RareEventApprox {
    pub probability: f64,
    pub error_bound: f64,
    /// Bound exceeds 10% of the approximation.
    pub unreliable: bool,
    /// Top event is monotone in every leaf (`None` when too large to check).
    pub coherent: Option<bool>,
    pub upper_bound: bool,
}

impl FaultTree {
    pub fn node(&self, id: &str) -> Option<&PatternEvent> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Primary leaves (base events that are not complements).
    pub fn leaf_ids(&self) -> Vec<&str> {
        let fed: Vec<&str> = self.edges.iter().map(|e| e.to.as_str()).collect();
        self.nodes
            .iter()
            .filter(|n| !fed.contains(&n.id.as_str()) && n.complement_of.is_none())
            .map(|n| n.id.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<(), Vec<FtIssue>> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Compiled, Vec<FtIssue>> {
        let mut issues = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                issues.push(issue(Some(&n.id), "duplicate node id"));
            }
            if let Some(p) = n.leaf_prob {
                if !(0.0..=1.0).contains(&p) {
                    issues.push(issue(Some(&n.id), format!("leaf probability {p} outside [0, 1]")));
                }
            }
        }
        for pair in &self.correlated {
            issues.push(issue(
                None,
                format!(
                    "leaves `{}` and `{}` are declared correlated; evaluation assumes independent leaves, restructure the tree so they share a common base event",
                    pair[0], pair[1]
                ),
            ));
        }
        let n = self.nodes.len();
        let mut inputs: Vec<Vec<(usize, EdgeKind)>> = vec![Vec::new(); n];
        let mut outputs = vec![0usize; n];
        for e in &self.edges {
            match (index.get(e.from.as_str()), index.get(e.to.as_str())) {
                (Some(&f), Some(&t)) => {
                    inputs[t].push((f, e.kind));
                    outputs[f] += 1;
                }
                _ => issues.push(issue(
                    None,
                    format!("edge `{}` -> `{}` names an unknown node", e.from, e.to),
                )),
            }
        }
        for g in self.gates.keys() {
            if !index.contains_key(g.as_str()) {
                issues.push(issue(Some(g), "gate on unknown node"));
            }
        }

        let sinks: Vec<&str> = (0..n)
            .filter(|&i| outputs[i] == 0)
            .map(|i| self.nodes[i].id.as_str())
            .collect();
        let top = index.get(self.top.as_str()).copied();
        match top {
            None => issues.push(issue(Some(&self.top), "top node not found")),
            Some(t) if outputs[t] != 0 => issues.push(issue(Some(&self.top), "top node feeds another node")),
            _ => {}
        }
        if sinks.len() > 1 {
            issues.push(issue(None, format!("more than one top node: {}", sinks.join(", "))));
        }

        // Definitions and base variables.
        let mut var_of = vec![None; n];
        let mut var_nodes = Vec::new();
        for i in 0..n {
            if inputs[i].is_empty() && self.nodes[i].complement_of.is_none() {
                var_of[i] = Some(var_nodes.len());
                var_nodes.push(i);
            }
        }
        if var_nodes.len() > MAX_BASE_EVENTS {
            issues.push(issue(None, format!("more than {MAX_BASE_EVENTS} base events")));
        }
        let mut defs = vec![Def::Same(0); n];
        let mut upper_edge = vec![false; n];
        for i in 0..n {
            let node = &self.nodes[i];
            let id = Some(node.id.as_str());
            let gate = self.gates.get(&node.id);
            if let Some(other) = &node.complement_of {
                if !inputs[i].is_empty() {
                    issues.push(issue(id, "complement leaf must not have inputs"));
                }
                match index.get(other.as_str()).and_then(|&j| var_of[j].map(|v| (j, v))) {
                    Some((j, v)) => {
                        if let (Some(p), Some(q)) = (node.leaf_prob, self.nodes[j].leaf_prob) {
                            if (p + q - 1.0).abs() > COMPLEMENT_TOL {
                                issues.push(issue(id, format!("probability {p} is not the complement of {q}")));
                            }
                        }
                        defs[i] = Def::NotVar(v);
                    }
                    None => issues.push(issue(id, format!("complement_of `{other}` is not a primary leaf"))),
                }
                continue;
            }
            if let Some(v) = var_of[i] {
                if gate.is_some() {
                    issues.push(issue(id, "gate on a leaf"));
                }
                defs[i] = Def::Var(v);
                continue;
            }
            if node.leaf_prob.is_some() {
                issues.push(issue(id, "internal node carries a leaf probability"));
            }
            let kinds: Vec<EdgeKind> = inputs[i].iter().map(|x| x.1).collect();
            if kinds.iter().all(|&k| k == EdgeKind::GateInput) {
                match gate {
                    Some(&g) => defs[i] = Def::Gate(g, inputs[i].iter().map(|x| x.0).collect()),
                    None => issues.push(issue(id, "gate inputs without a gate type")),
                }
            } else if kinds.len() == 1 {
                if gate.is_some() {
                    issues.push(issue(id, "gate on a node fed by an identity or implication edge"));
                }
                defs[i] = Def::Same(inputs[i][0].0);
                upper_edge[i] = kinds[0] == EdgeKind::Implication;
            } else {
                issues.push(issue(
                    id,
                    "identity and implication edges must be the only input of their node",
                ));
            }
        }
        for i in 0..n {
            if let Def::Same(src) = defs[i] {
                let identity_out = self
                    .edges
                    .iter()
                    .filter(|e| e.from == self.nodes[src].id && e.kind == EdgeKind::CausalIdentity)
                    .count();
                if !upper_edge[i] && identity_out > 0 && outputs[src] != 1 {
                    issues.push(issue(
                        Some(&self.nodes[src].id),
                        "causal identity edge is not one-to-one",
                    ));
                }
            }
        }

        // Cycle detection and supports in topological order.
        let order = match topo_order(&inputs) {
            Ok(o) => o,
            Err(at) => {
                issues.push(issue(Some(&self.nodes[at].id), "cycle"));
                return Err(issues);
            }
        };
        if !issues.is_empty() {
            return Err(issues);
        }
        let mut support = vec![0u128; n];
        let mut upper = vec![false; n];
        for &i in &order {
            match &defs[i] {
                Def::Var(v) | Def::NotVar(v) => support[i] = 1u128 << v,
                Def::Gate(_, ins) => {
                    support[i] = ins.iter().fold(0, |m, &j| m | support[j]);
                    upper[i] = ins.iter().any(|&j| upper[j]);
                }
                Def::Same(j) => {
                    support[i] = support[*j];
                    upper[i] = upper[*j] || upper_edge[i];
                }
            }
        }
        let top = top.expect("checked above");
        Ok(Compiled {
            defs,
            support,
            var_nodes,
            top,
            upper_bound: upper[top],
        })
    }

    fn probabilities(&self, c: &Compiled, overrides: &BTreeMap<String, f64>) -> Result<Vec<f64>, FtError> {
        for (id, &p) in overrides {
            let known = self.node(id).is_some_and(|n| n.complement_of.is_none())
                && c.var_nodes.iter().any(|&i| self.nodes[i].id == *id);
            if !known {
                return Err(FtError::UnknownLeaf(id.clone()));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(FtError::BadProbability { id: id.clone(), p });
            }
        }
        c.var_nodes
            .iter()
            .map(|&i| {
                let id = &self.nodes[i].id;
                overrides
                    .get(id)
                    .copied()
                    .or(self.nodes[i].leaf_prob)
                    .ok_or_else(|| FtError::MissingProbability(id.clone()))
            })
            .collect()
    }

    /// Exact top-event probability under independent leaves.
    pub fn eval_exact(&self, leaf_probs: &BTreeMap<String, f64>) -> Result<Evaluation, FtError> {
        let c = self.compile().map_err(FtError::Invalid)?;
        let p = self.probabilities(&c, leaf_probs)?;
        Ok(Evaluation {
            probability: exact(&c, &p, c.top, 0, 0),
            upper_bound: c.upper_bound,
        })
    }

    /// First-order rare-event approximation: the no-failure value plus, for
    /// every leaf, its probability times the change of the top event when that
    /// leaf alone fails. The error is at most the sum of pairwise products of
    /// leaf probabilities for coherent trees.
    pub fn eval_rare_approx(&self, leaf_probs: &BTreeMap<String, f64>) -> Result<RareEventApprox, FtError> {
        let c = self.compile().map_err(FtError::Invalid)?;
        let p = self.probabilities(&c, leaf_probs)?;
        let base = boolean(&c, c.top, 0);
        let mut approx = f64::from(u8::from(base));
        for (v, &pv) in p.iter().enumerate() {
            let single = boolean(&c, c.top, 1u128 << v);
            approx += pv * (f64::from(u8::from(single)) - f64::from(u8::from(base)));
        }
        let mut error_bound = 0.0;
        let mut prefix = 0.0;
        for &pv in &p {
            error_bound += pv * prefix;
            prefix += pv;
        }
        Ok(RareEventApprox {
            probability: approx,
            error_bound,
            unreliable: error_bound > 0.1 * approx.abs(),
            coherent: coherent(&c),
            upper_bound: c.upper_bound,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fault tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph fault_tree {\n  rankdir=BT;\n  node [shape=box];\n");
        for n in &self.nodes {
            let mut label = n.id.clone();
            if let Some(g) = self.gates.get(&n.id) {
                label.push_str(match g {
                    Gate::And => "\\n[AND]",
                    Gate::Or => "\\n[OR]",
                });
            }
            if let Some(p) = &n.pattern_ref {
                label.push_str(&format!("\\n{p}"));
            }
            let style = if n.multi_failure { ", style=dashed" } else { "" };
            out.push_str(&format!(
                "  \"{}\" [label=\"{}\"{style}];\n",
                escape(&n.id),
                escape_label(&label)
            ));
        }
        for e in &self.edges {
            let attrs = match e.kind {
                EdgeKind::CausalIdentity => " [color=\"black:black\"]",
                EdgeKind::Implication => " [color=\"black:black\", style=dashed, label=\"implies\"]",
                EdgeKind::GateInput => "",
            };
            out.push_str(&format!("  \"{}\" -> \"{}\"{attrs};\n", escape(&e.from), escape(&e.to)));
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn escape_label(s: &str) -> String {
    s.replace('"', "\\\"")
}

fn topo_order(inputs: &[Vec<(usize, EdgeKind)>]) -> Result<Vec<usize>, usize> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = inputs.len();
    let mut state = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&(child, _)) = inputs[node].get(*next) {
                *next += 1;
                match state[child] {
                    0 => {
                        state[child] = 1;
                        stack.push((child, 0));
                    }
                    1 => return Err(child),
                    _ => {}
                }
            } else {
                state[node] = 2;
                order.push(node);
                stack.pop();
            }
        }
    }
    Ok(order)
}

/// Probability of `node` given the variables in `set` fixed to `values`.
fn exact(c: &Compiled, p: &[f64], node: usize, set: u128, values: u128) -> f64 {
    let var = |v: usize| {
        if set >> v & 1 == 1 {
            f64::from((values >> v & 1) as u8)
        } else {
            p[v]
        }
    };
    match &c.defs[node] {
        Def::Var(v) => var(*v),
        Def::NotVar(v) => 1.0 - var(*v),
        Def::Same(j) => exact(c, p, *j, set, values),
        Def::Gate(g, ins) => {
            let mut seen = 0u128;
            let mut shared = 0u128;
            for &j in ins {
                let s = c.support[j] & !set;
                shared |= seen & s;
                seen |= s;
            }
            if shared != 0 {
                let v = shared.trailing_zeros() as usize;
                let bit = 1u128 << v;
                let hi = exact(c, p, node, set | bit, values | bit);
                let lo = exact(c, p, node, set | bit, values & !bit);
                return p[v] * hi + (1.0 - p[v]) * lo;
            }
            match g {
                Gate::And => ins.iter().map(|&j| exact(c, p, j, set, values)).product(),
                Gate::Or => 1.0 - ins.iter().map(|&j| 1.0 - exact(c, p, j, set, values)).product::<f64>(),
            }
        }
    }
}

/// Boolean value of `node` when exactly the leaves in `failed` occur.
fn boolean(c: &Compiled, node: usize, failed: u128) -> bool {
    match &c.defs[node] {
        Def::Var(v) => failed >> v & 1 == 1,
        Def::NotVar(v) => failed >> v & 1 == 0,
        Def::Same(j) => boolean(c, *j, failed),
        Def::Gate(Gate::And, ins) => ins.iter().all(|&j| boolean(c, j, failed)),
        Def::Gate(Gate::Or, ins) => ins.iter().any(|&j| boolean(c, j, failed)),
    }
}

fn coherent(c: &Compiled) -> Option<bool> {
    let n = c.var_nodes.len();
    if n > COHERENCE_ENUM_LIMIT {
        return None;
    }
    let values: Vec<bool> = (0..1u128 << n).map(|m| boolean(c, c.top, m)).collect();
    Some((0..values.len()).all(|m| (0..n).all(|v| !values[m] || values[m | 1 << v])))
}

/// Speed-estimate underestimate equivalent to a relative braking reduction
/// `eta_a_max`: braking scales with the squared speed estimate.
pub fn speed_eta_equiv(eta_a_max: f64) -> Result<f64, FtError> {
    if !(0.0..1.0).contains(&eta_a_max) {
        return Err(FtError::Domain(format!(
            "eta_a_max must lie in [0, 1), got {eta_a_max}"
        )));
    }
    Ok(1.0 - (1.0 - eta_a_max).sqrt())
}

pub const HAZ_FN: &str = "Hazardous-tracking-FNs";
pub const SAFE_FN: &str = "Safe-tracking-FNs";
pub const NOM_SPEED: &str = "Nominal-speed-estimate";
pub const OFF_SPEED: &str = "Off-nominal-speed-estimate";

/// Hazardous braking behavior caused by tracking false negatives, speed
/// underestimates, or both. `hazardous_fn` is the tracker pattern that can
/// cause a crash; the safe leaf is its complement.
pub fn build_hbb_tree(eta_a_max: f64, hazardous_fn: &crate::patterns::CountPattern) -> Result<FaultTree, FtError> {
    if !(eta_a_max > 0.0 && eta_a_max < 1.0) {
        return Err(FtError::Domain(format!(
            "eta_a_max must lie in (0, 1), got {eta_a_max}"
        )));
    }
    let eta_s = speed_eta_equiv(eta_a_max)?;
    let n_max = hazardous_fn.n_max();
    let safe = crate::patterns::CountPattern::new(0, hazardous_fn.k_min().saturating_sub(1), n_max)
        .map_err(|e| FtError::Domain(e.to_string()))?;

    let mut haz = PatternEvent::new(HAZ_FN, "tracker false negatives that can cause a crash");
    haz.pattern_ref = Some(Pattern::Count(*hazardous_fn));
    let mut safe_fn = PatternEvent::new(SAFE_FN, "tracker false negatives too few to cause a crash");
    safe_fn.pattern_ref = if hazardous_fn.k_min() > 0 {
        Some(Pattern::Count(safe))
    } else {
        None
    };
    safe_fn.complement_of = Some(HAZ_FN.into());
    let off = PatternEvent::new(
        OFF_SPEED,
        &format!("speed underestimate above {eta_s:.6} (braking reduction above {eta_a_max})"),
    );
    let mut nom = PatternEvent::new(NOM_SPEED, &format!("speed underestimate at most {eta_s:.6}"));
    nom.complement_of = Some(OFF_SPEED.into());
    let mut both = PatternEvent::new("UBI-and-UIB", "hazardous false negatives with off-nominal speed");
    both.multi_failure = true;

    let nodes = vec![
        PatternEvent::new("HBB", "hazardous braking behavior"),
        PatternEvent::new("UBI-only", "hazardous false negatives with nominal speed"),
        PatternEvent::new("UIB-only", "safe false negatives with off-nominal speed"),
        both,
        haz,
        safe_fn,
        off,
        nom,
    ];
    let gi = |from: &str, to: &str| Edge {
        from: from.into(),
        to: to.into(),
        kind: EdgeKind::GateInput,
    };
    let edges = vec![
        gi("UBI-only", "HBB"),
        gi("UIB-only", "HBB"),
        gi("UBI-and-UIB", "HBB"),
        gi(HAZ_FN, "UBI-only"),
        gi(NOM_SPEED, "UBI-only"),
        gi(SAFE_FN, "UIB-only"),
        gi(OFF_SPEED, "UIB-only"),
        gi(HAZ_FN, "UBI-and-UIB"),
        gi(OFF_SPEED, "UBI-and-UIB"),
    ];
    let gates = [
        ("HBB", Gate::Or),
        ("UBI-only", Gate::And),
        ("UIB-only", Gate::And),
        ("UBI-and-UIB", Gate::And),
    ]
    .into_iter()
    .map(|(k, g)| (k.to_string(), g))
    .collect();
    let tree = FaultTree {
        top: "HBB".into(),
        nodes,
        edges,
        gates,
        correlated: Vec::new(),
    };
    tree.validate().map_err(FtError::Invalid)?;
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::CountPattern;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn probs(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    fn hbb() -> FaultTree {
        build_hbb_tree(0.14, &CountPattern::at_least(19, 150).unwrap()).unwrap()
    }

    fn chain(p: f64) -> FaultTree {
        let mut det = PatternEvent::new("detector", "detector misses");
        det.leaf_prob = Some(p);
        FaultTree {
            top: "ubi".into(),
            nodes: vec![PatternEvent::new("ubi", ""), PatternEvent::new("tracker", ""), det],
            edges: vec![
                Edge {
                    from: "tracker".into(),
                    to: "ubi".into(),
                    kind: EdgeKind::CausalIdentity,
                },
                Edge {
                    from: "detector".into(),
                    to: "tracker".into(),
                    kind: EdgeKind::Implication,
                },
            ],
            gates: BTreeMap::new(),
            correlated: Vec::new(),
        }
    }

    fn or2() -> FaultTree {
        FaultTree {
            top: "top".into(),
            nodes: vec![
                PatternEvent::new("top", ""),
                PatternEvent::new("a", ""),
                PatternEvent::new("b", ""),
            ],
            edges: vec![
                Edge {
                    from: "a".into(),
                    to: "top".into(),
                    kind: EdgeKind::GateInput,
                },
                Edge {
                    from: "b".into(),
                    to: "top".into(),
                    kind: EdgeKind::GateInput,
                },
            ],
            gates: [("top".to_string(), Gate::Or)].into_iter().collect(),
            correlated: Vec::new(),
        }
    }

    #[test]
    fn hbb_values() {
        let t = hbb();
        let mut leaves = t.leaf_ids();
        leaves.sort();
        assert_eq!(leaves, [HAZ_FN, OFF_SPEED]);
        let lp = probs(&[(HAZ_FN, 1e-4), (OFF_SPEED, 1e-5)]);
        let ex = t.eval_exact(&lp).unwrap();
        assert!((ex.probability - (1.1e-4 - 1e-9)).abs() <= 1e-15);
        assert!(!ex.upper_bound);
        let ap = t.eval_rare_approx(&lp).unwrap();
        assert!((ap.probability - 1.1e-4).abs() <= 1e-15);
        assert!((ap.error_bound - 1e-9).abs() <= 1e-20);
        assert!(!ap.unreliable);
        assert_eq!(ap.coherent, Some(true));
        assert!((ap.probability - ex.probability).abs() <= ap.error_bound + 1e-18);
    }

    #[test]
    fn all_zero_and_chain() {
        let t = hbb();
        let zero = probs(&[(HAZ_FN, 0.0), (OFF_SPEED, 0.0)]);
        assert_eq!(t.eval_exact(&zero).unwrap().probability, 0.0);
        let c = chain(0.3);
        let e = c.eval_exact(&BTreeMap::new()).unwrap();
        assert_eq!(e.probability, 0.3);
        assert!(e.upper_bound);
        let a = c.eval_rare_approx(&BTreeMap::new()).unwrap();
        assert_eq!((a.probability, a.error_bound), (0.3, 0.0));
    }

    #[test]
    fn unreliable_when_probabilities_large() {
        let a = or2().eval_rare_approx(&probs(&[("a", 0.5), ("b", 0.5)])).unwrap();
        assert_eq!(a.error_bound, 0.25);
        assert!(a.unreliable);
    }

    #[test]
    fn missing_and_unknown_leaves() {
        let t = hbb();
        assert!(matches!(
            t.eval_exact(&probs(&[(HAZ_FN, 0.1)])),
            Err(FtError::MissingProbability(_))
        ));
        let bad = probs(&[(HAZ_FN, 0.1), (OFF_SPEED, 0.1), (SAFE_FN, 0.9)]);
        assert!(matches!(t.eval_exact(&bad), Err(FtError::UnknownLeaf(_))));
        let out = probs(&[(HAZ_FN, 1.1), (OFF_SPEED, 0.1)]);
        assert!(matches!(t.eval_exact(&out), Err(FtError::BadProbability { .. })));
    }

    #[test]
    fn validation_errors() {
        assert!(chain(0.1).validate().is_ok());

        let mut cyc = or2();
        cyc.edges.push(Edge {
            from: "top".into(),
            to: "a".into(),
            kind: EdgeKind::GateInput,
        });
        cyc.gates.insert("a".into(), Gate::And);
        let errs = cyc.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("cycle")), "{errs:?}");

        let mut two = or2();
        two.nodes.push(PatternEvent::new("stray", ""));
        let errs = two.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("more than one top")));

        let mut corr = or2();
        corr.correlated.push(["a".into(), "b".into()]);
        assert!(corr.validate().is_err());

        let mut incons = hbb();
        for n in incons.nodes.iter_mut() {
            if n.id == HAZ_FN {
                n.leaf_prob = Some(0.1);
            }
            if n.id == SAFE_FN {
                n.leaf_prob = Some(0.5);
            }
        }
        assert!(incons.validate().is_err());

        let mut fanout = chain(0.1);
        fanout.nodes.push(PatternEvent::new("other", ""));
        fanout.edges.push(Edge {
            from: "tracker".into(),
            to: "other".into(),
            kind: EdgeKind::CausalIdentity,
        });
        assert!(fanout.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_dot() {
        let t = hbb();
        let back = FaultTree::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let dot = t.to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"UBI-and-UIB\" [label=\"UBI-and-UIB\\n[AND]\", style=dashed]"));
    }

    #[test]
    fn speed_equivalence() {
        assert_eq!(speed_eta_equiv(0.0).unwrap(), 0.0);
        assert!((speed_eta_equiv(0.14).unwrap() - 0.072_638_150_5).abs() < 1e-9);
        assert_eq!(speed_eta_equiv(0.75).unwrap(), 0.5);
        assert!(speed_eta_equiv(1.0).is_err());
        assert!(build_hbb_tree(1.0, &CountPattern::at_least(19, 150).unwrap()).is_err());
    }

    /// Random coherent tree: gates over leaves and earlier gates.
    fn random_tree(n_leaves: usize, gates: &[(bool, Vec<usize>)]) -> FaultTree {
        let mut nodes: Vec<PatternEvent> = (0..n_leaves).map(|i| PatternEvent::new(&format!("x{i}"), "")).collect();
        let mut edges = Vec::new();
        let mut gate_map = BTreeMap::new();
        let mut used = vec![false; n_leaves + gates.len()];
        for (g, (is_and, ins)) in gates.iter().enumerate() {
            let id = format!("g{g}");
            let avail = n_leaves + g;
            let mut picked: Vec<usize> = ins.iter().map(|&i| i % avail).collect();
            picked.sort();
            picked.dedup();
            for &i in &picked {
                used[i] = true;
                edges.push(Edge {
                    from: nodes[i].id.clone(),
                    to: id.clone(),
                    kind: EdgeKind::GateInput,
                });
            }
            gate_map.insert(id.clone(), if *is_and { Gate::And } else { Gate::Or });
            nodes.push(PatternEvent::new(&id, ""));
        }
        // Feed every dangling node into a final OR so the tree has one top.
        let top = "top".to_string();
        for (i, n) in nodes.iter().enumerate() {
            if !used[i] {
                edges.push(Edge {
                    from: n.id.clone(),
                    to: top.clone(),
                    kind: EdgeKind::GateInput,
                });
            }
        }
        nodes.push(PatternEvent::new(&top, ""));
        gate_map.insert(top.clone(), Gate::Or);
        FaultTree {
            top,
            nodes,
            edges,
            gates: gate_map,
            correlated: Vec::new(),
        }
    }

    /// Independent oracle: sum over all leaf outcomes.
    fn brute_force(t: &FaultTree, p: &BTreeMap<String, f64>) -> f64 {
        let c = t.compile().unwrap();
        let pv = t.probabilities(&c, p).unwrap();
        let n = pv.len();
        (0..1u128 << n)
            .map(|m| {
                if !boolean(&c, c.top, m) {
                    return 0.0;
                }
                (0..n)
                    .map(|v| if m >> v & 1 == 1 { pv[v] } else { 1.0 - pv[v] })
                    .product::<f64>()
            })
            .sum()
    }

    proptest! {
        #[test]
        fn or_of_two(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
            let e = or2().eval_exact(&probs(&[("a", p1), ("b", p2)])).unwrap().probability;
            prop_assert!((e - (p1 + p2 - p1 * p2)).abs() < 1e-12);
        }

        #[test]
        fn exact_matches_enumeration_and_bound_holds(
            n in 1usize..=5,
            gates in prop::collection::vec((prop::bool::ANY, prop::collection::vec(0usize..64, 1..4)), 0..5),
            ps in prop::collection::vec(0.0f64..0.01, 5),
        ) {
            let t = random_tree(n, &gates);
            prop_assert!(t.validate().is_ok());
            let lp: BTreeMap<String, f64> = (0..n).map(|i| (format!("x{i}"), ps[i])).collect();
            let exact = t.eval_exact(&lp).unwrap().probability;
            prop_assert!((exact - brute_force(&t, &lp)).abs() < 1e-15);
            let a = t.eval_rare_approx(&lp).unwrap();
            prop_assert!(a.coherent == Some(true));
            prop_assert!((a.probability - exact).abs() <= a.error_bound + 1e-15);
        }

        #[test]
        fn monotone_in_leaves(p in 0.0f64..0.5, dp in 0.0f64..0.5, q in 0.0f64..1.0) {
            let c = chain(p);
            let lo = c.eval_exact(&BTreeMap::new()).unwrap().probability;
            let hi = c.eval_exact(&probs(&[("detector", p + dp)])).unwrap().probability;
            prop_assert!(hi >= lo);
            let t = hbb();
            let a = t.eval_exact(&probs(&[(HAZ_FN, p), (OFF_SPEED, q)])).unwrap().probability;
            let b = t.eval_exact(&probs(&[(HAZ_FN, p + dp), (OFF_SPEED, q)])).unwrap().probability;
            prop_assert!(b >= a - 1e-15);
        }
    }
}
