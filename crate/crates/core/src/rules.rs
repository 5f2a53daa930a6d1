//! Graph validity rules feeding the rule reward.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Action, ActionTarget};
use crate::graph::{CandidateSet, LabeledGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    DuplicateEdge,
    NodeBudget,
    Valency,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::DuplicateEdge => "duplicate edge",
            Violation::NodeBudget => "node budget exceeded",
            Violation::Valency => "valency exceeded",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(Violation),
}

impl Validity {
    pub fn is_valid(self) -> bool {
        self == Validity::Valid
    }

    pub fn violation(self) -> Option<Violation> {
        match self {
            Validity::Valid => None,
            Validity::Invalid(v) => Some(v),
        }
    }
}

/// Maximum covalent valence per MUTAG atom type. N is 5 so that nitro
/// groups (N with three neighbours) stay constructible.
pub fn default_mutag_valency() -> BTreeMap<String, usize> {
    [("C", 4), ("N", 5), ("O", 2), ("F", 1), ("I", 1), ("Cl", 1), ("Br", 1)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Multi-edges are always forbidden; the graph representation cannot hold
/// them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub max_nodes: usize,
    /// Maximum degree per node type id. Types without an entry are unlimited.
    pub valency_limit: Option<BTreeMap<usize, usize>>,
}

impl RuleSet {
    pub fn new(max_nodes: usize) -> Result<Self> {
        if max_nodes < 2 {
            return Err(Error::Config(format!("max_nodes must be >= 2, got {max_nodes}")));
        }
        Ok(Self {
            max_nodes,
            valency_limit: None,
        })
    }

    /// Attaches a valency table keyed by type name.
    pub fn with_valency(mut self, table: &BTreeMap<String, usize>, candidates: &CandidateSet) -> Result<Self> {
        let mut limits = BTreeMap::new();
        for (name, &limit) in table {
            let id = candidates
                .id_of(name)
                .ok_or_else(|| Error::Config(format!("valency table names unknown type {name:?}")))?;
            if limit < 1 {
                return Err(Error::Config(format!("valency of {name} must be >= 1")));
            }
            limits.insert(id, limit);
        }
        self.valency_limit = Some(limits);
        Ok(self)
    }

    pub fn valency_of(&self, node_type: usize) -> Option<usize> {
        self.valency_limit.as_ref()?.get(&node_type).copied()
    }

    /// First violated rule for taking `action` on `before`, checked in the
    /// order duplicate edge, node budget, valency.
    pub fn check(&self, before: &LabeledGraph, action: &Action) -> Validity {
        let n = before.node_count();
        let (end_type, end_degree, nodes_after) = match action.target(n) {
            ActionTarget::Existing(end) => {
                if before.has_edge(action.start, end) {
                    return Validity::Invalid(Violation::DuplicateEdge);
                }
                (before.node_type(end), before.degree(end) + 1, n)
            }
            ActionTarget::NewNode(node_type) => (node_type, 1, n + 1),
        };
        if nodes_after > self.max_nodes {
            return Validity::Invalid(Violation::NodeBudget);
        }
        let start_type = before.node_type(action.start);
        let start_degree = before.degree(action.start) + 1;
        let over = |t: usize, d: usize| self.valency_of(t).is_some_and(|limit| d > limit);
        if over(start_type, start_degree) || over(end_type, end_degree) {
            return Validity::Invalid(Violation::Valency);
        }
        Validity::Valid
    }

    /// Whole-graph audit: node budget and valency.
    pub fn audit(&self, g: &LabeledGraph) -> Validity {
        if g.node_count() > self.max_nodes {
            return Validity::Invalid(Violation::NodeBudget);
        }
        for (i, d) in g.degrees().into_iter().enumerate() {
            if self.valency_of(g.node_type(i)).is_some_and(|limit| d > limit) {
                return Validity::Invalid(Violation::Valency);
            }
        }
        Validity::Valid
    }
}
