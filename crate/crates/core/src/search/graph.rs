use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ActiveVariable, JointEntry, ParentTable};
use crate::scm::GraphSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub dim: usize,
    /// 0 for observed variables, otherwise one more than the deepest child.
    pub level: usize,
    pub observed: bool,
    #[serde(skip)]
    pub samples: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub parent: String,
    pub child: String,
    pub iteration: usize,
    /// Scores that justified the edge, keyed by the test that produced them.
    pub scores: BTreeMap<String, f64>,
}

/// Output of a search: observed leaves, estimated latents and oriented edges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl DiscoveredGraph {
    pub(crate) fn with_observed(active: &[ActiveVariable]) -> Self {
        DiscoveredGraph {
            nodes: active
                .iter()
                .map(|a| GraphNode {
                    id: a.id.clone(),
                    dim: a.dim(),
                    level: 0,
                    observed: true,
                    samples: a.samples.clone(),
                })
                .collect(),
            edges: Vec::new(),
        }
    }

    /// Records the edges of one substituted cluster.
    pub(crate) fn add_cluster(
        &mut self,
        entry: &JointEntry,
        table: &ParentTable,
        iteration: usize,
        scores: &BTreeMap<String, f64>,
    ) {
        for p in &entry.parents {
            if self.node(p).is_none() {
                let samples = table.estimates[p].samples.clone();
                self.nodes.push(GraphNode {
                    id: p.clone(),
                    dim: samples.ncols(),
                    level: 0,
                    observed: false,
                    samples,
                });
            }
            for c in &entry.children {
                let linked = table
                    .entries
                    .get(c)
                    .is_some_and(|ps| ps.iter().any(|q| q == p));
                if linked {
                    self.edges.push(GraphEdge {
                        parent: p.clone(),
                        child: c.clone(),
                        iteration,
                        scores: scores.clone(),
                    });
                }
            }
        }
    }

    pub(crate) fn finalize(&mut self) {
        let order = self.topological_order().unwrap_or_default();
        let mut level: BTreeMap<String, usize> = BTreeMap::new();
        for id in order.iter().rev() {
            let l = self
                .children(id)
                .iter()
                .map(|c| level.get(c.as_str()).copied().unwrap_or(0) + 1)
                .max()
                .unwrap_or(0);
            level.insert(id.clone(), l);
        }
        for n in &mut self.nodes {
            n.level = level.get(&n.id).copied().unwrap_or(0);
        }
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn parents(&self, id: &str) -> Vec<String> {
        self.edges
            .iter()
            .filter(|e| e.child == id)
            .map(|e| e.parent.clone())
            .collect()
    }

    pub fn children(&self, id: &str) -> Vec<String> {
        self.edges
            .iter()
            .filter(|e| e.parent == id)
            .map(|e| e.child.clone())
            .collect()
    }

    pub fn observed_ids(&self) -> Vec<String> {
        self.nodes.iter().filter(|n| n.observed).map(|n| n.id.clone()).collect()
    }

    pub fn latent_ids(&self) -> Vec<String> {
        self.nodes.iter().filter(|n| !n.observed).map(|n| n.id.clone()).collect()
    }

    pub fn roots(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| self.parents(&n.id).is_empty())
            .map(|n| n.id.clone())
            .collect()
    }

    /// Kahn order from roots to leaves; `None` if the edges contain a cycle.
    pub fn topological_order(&self) -> Option<Vec<String>> {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for e in &self.edges {
            *indegree.entry(e.child.as_str()).or_default() += 1;
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
        let mut order = Vec::new();
        while let Some(id) = ready.pop() {
            order.push(id.to_string());
            for e in self.edges.iter().filter(|e| e.parent == id) {
                let d = indegree.get_mut(e.child.as_str()).expect("known child");
                *d -= 1;
                if *d == 0 {
                    ready.push(e.child.as_str());
                }
            }
        }
        (order.len() == indegree.len()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Graphviz rendering with nodes labelled `id:dim:level`.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph discovered {\n");
        for n in &self.nodes {
            let shape = if n.observed { "box" } else { "ellipse" };
            let _ = writeln!(out, "  \"{}\" [label=\"{}:{}:{}\", shape={shape}];", n.id, n.id, n.dim, n.level);
        }
        for e in &self.edges {
            let _ = writeln!(out, "  \"{}\" -> \"{}\" [style=solid];", e.parent, e.child);
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serialises")
    }

    /// Structure signature that ignores latent names: every latent is
    /// described by the sorted signatures of its children, observed
    /// variables by their ids.
    pub fn canonical_form(&self) -> String {
        let observed: BTreeSet<String> = self.observed_ids().into_iter().collect();
        canonical(&self.roots(), &|id| self.children(id), &observed)
    }

    /// Compares structure with a generating graph. Observed ids must match;
    /// latent names are free.
    pub fn matches_spec(&self, spec: &GraphSpec) -> bool {
        self.canonical_form() == spec_canonical_form(spec)
    }

    /// Pairs each discovered latent with the true latent that has the same
    /// structural signature.
    pub fn latent_matching(&self, spec: &GraphSpec) -> BTreeMap<String, String> {
        let observed: BTreeSet<String> = self.observed_ids().into_iter().collect();
        let mine: BTreeMap<String, String> = self
            .latent_ids()
            .into_iter()
            .map(|id| (signature(&id, &|x| self.children(x), &observed), id))
            .collect();
        let spec_observed: BTreeSet<String> = spec.observed_ids().into_iter().collect();
        let mut out = BTreeMap::new();
        for id in spec.latent_ids() {
            let sig = signature(&id, &|x| spec.children(x), &spec_observed);
            if let Some(found) = mine.get(&sig) {
                out.insert(found.clone(), id);
            }
        }
        out
    }
}

pub fn spec_canonical_form(spec: &GraphSpec) -> String {
    let observed: BTreeSet<String> = spec.observed_ids().into_iter().collect();
    let roots: Vec<String> = spec
        .nodes
        .iter()
        .filter(|n| spec.parents(&n.id).is_empty())
        .map(|n| n.id.clone())
        .collect();
    canonical(&roots, &|id| spec.children(id), &observed)
}

fn canonical(roots: &[String], children: &dyn Fn(&str) -> Vec<String>, observed: &BTreeSet<String>) -> String {
    let mut sigs: Vec<String> = roots.iter().map(|r| signature(r, children, observed)).collect();
    sigs.sort();
    sigs.join(" ")
}

fn signature(id: &str, children: &dyn Fn(&str) -> Vec<String>, observed: &BTreeSet<String>) -> String {
    if observed.contains(id) {
        return id.to_string();
    }
    let mut parts: Vec<String> = children(id)
        .iter()
        .map(|c| signature(c, children, observed))
        .collect();
    parts.sort();
    format!("({})", parts.join(","))
}
