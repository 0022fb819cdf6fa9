use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ScmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Latent,
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub dim: usize,
    pub kind: NodeKind,
    /// Overrides the graph-wide exogenous dimension for this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exogenous_dim: Option<usize>,
}

fn default_exogenous_dim() -> usize {
    2
}

/// Declarative DAG of multi-dimensional latent and observed variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default = "default_exogenous_dim")]
    pub exogenous_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

/// A structural condition that a well-formed spec fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Violation {
    /// The edge relation contains a cycle through these nodes.
    Cycle { nodes: Vec<String> },
    /// An observed node has outgoing edges.
    ObservedNotLeaf { node: String, children: Vec<String> },
    /// A latent node has fewer than two children whose only parent it is.
    TooFewPureChildren {
        latent: String,
        pure_children: Vec<String>,
    },
    /// Two siblings are connected by a directed path.
    SiblingPath {
        parent: String,
        from: String,
        to: String,
    },
}

impl GraphSpec {
    pub fn new(exogenous_dim: usize, seed: u64) -> Self {
        GraphSpec {
            nodes: Vec::new(),
            edges: Vec::new(),
            exogenous_dim,
            seed,
        }
    }

    pub fn latent(mut self, id: &str, dim: usize) -> Self {
        self.nodes.push(NodeSpec {
            id: id.to_string(),
            dim,
            kind: NodeKind::Latent,
            exogenous_dim: None,
        });
        self
    }

    pub fn observed(mut self, id: &str, dim: usize) -> Self {
        self.nodes.push(NodeSpec {
            id: id.to_string(),
            dim,
            kind: NodeKind::Observed,
            exogenous_dim: None,
        });
        self
    }

    pub fn edge(mut self, parent: &str, child: &str) -> Self {
        self.edges.push((parent.to_string(), child.to_string()));
        self
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn exogenous_dim_of(&self, node: &NodeSpec) -> usize {
        node.exogenous_dim.unwrap_or(self.exogenous_dim)
    }

    pub fn observed_ids(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Observed)
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn latent_ids(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Latent)
            .map(|n| n.id.clone())
            .collect()
    }

    /// Parents of `id` in edge-list order.
    pub fn parents(&self, id: &str) -> Vec<String> {
        self.edges
            .iter()
            .filter(|(_, c)| c == id)
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn children(&self, id: &str) -> Vec<String> {
        self.edges
            .iter()
            .filter(|(p, _)| p == id)
            .map(|(_, c)| c.clone())
            .collect()
    }

    /// Checks ids are unique, dims positive and edges reference known ids.
    pub fn check_well_formed(&self) -> Result<(), ScmError> {
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if n.id.is_empty() {
                return Err(ScmError::Malformed("empty node id".into()));
            }
            if !seen.insert(n.id.as_str()) {
                return Err(ScmError::Malformed(format!("duplicate node id {}", n.id)));
            }
            if n.dim == 0 {
                return Err(ScmError::Malformed(format!("node {} has zero dim", n.id)));
            }
            if self.exogenous_dim_of(n) == 0 {
                return Err(ScmError::Malformed(format!(
                    "node {} has zero exogenous dim",
                    n.id
                )));
            }
        }
        for (p, c) in &self.edges {
            for end in [p, c] {
                if !seen.contains(end.as_str()) {
                    return Err(ScmError::Malformed(format!(
                        "edge {p} -> {c} references unknown node {end}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Kahn topological order, ties broken by declaration order. Returns the
    /// nodes left over when a cycle blocks progress.
    pub fn topological_order(&self) -> Result<Vec<String>, Vec<String>> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut children = vec![Vec::new(); self.nodes.len()];
        for (p, c) in &self.edges {
            let (pi, ci) = (index[p.as_str()], index[c.as_str()]);
            indegree[ci] += 1;
            children[pi].push(ci);
        }
        let mut ready: BTreeSet<usize> = (0..self.nodes.len())
            .filter(|&i| indegree[i] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == self.nodes.len() {
            Ok(order.into_iter().map(|i| self.nodes[i].id.clone()).collect())
        } else {
            Err((0..self.nodes.len())
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.nodes[i].id.clone())
                .collect())
        }
    }

    /// Length of the longest path from any root to a leaf, in edges.
    pub fn depth(&self) -> usize {
        let Ok(order) = self.topological_order() else {
            return 0;
        };
        let mut level: HashMap<String, usize> = HashMap::new();
        for id in &order {
            let l = self
                .parents(id)
                .iter()
                .map(|p| level[p] + 1)
                .max()
                .unwrap_or(0);
            level.insert(id.clone(), l);
        }
        level.values().copied().max().unwrap_or(0)
    }
}

/// Returns every structural condition the spec violates (empty when valid).
/// Malformed specs (duplicate ids, dangling edges, zero dims) are errors.
pub fn validate_spec(spec: &GraphSpec) -> Result<Vec<Violation>, ScmError> {
    spec.check_well_formed()?;
    let mut violations = Vec::new();

    if let Err(nodes) = spec.topological_order() {
        violations.push(Violation::Cycle { nodes });
        // Reachability below assumes acyclicity.
        return Ok(violations);
    }

    let mut parents: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut children: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (p, c) in &spec.edges {
        parents.entry(c).or_default().insert(p);
        children.entry(p).or_default().insert(c);
    }

    for node in &spec.nodes {
        let kids: Vec<String> = children
            .get(node.id.as_str())
            .map(|s| s.iter().map(|c| c.to_string()).collect())
            .unwrap_or_default();
        match node.kind {
            NodeKind::Observed if !kids.is_empty() => {
                violations.push(Violation::ObservedNotLeaf {
                    node: node.id.clone(),
                    children: kids,
                });
            }
            NodeKind::Latent => {
                let pure: Vec<String> = kids
                    .into_iter()
                    .filter(|c| parents[c.as_str()].len() == 1)
                    .collect();
                if pure.len() < 2 {
                    violations.push(Violation::TooFewPureChildren {
                        latent: node.id.clone(),
                        pure_children: pure,
                    });
                }
            }
            NodeKind::Observed => {}
        }
    }

    for node in &spec.nodes {
        let Some(kids) = children.get(node.id.as_str()) else {
            continue;
        };
        for &a in kids {
            let reach = reachable(a, &children);
            for &b in kids {
                if a != b && reach.contains(b) {
                    violations.push(Violation::SiblingPath {
                        parent: node.id.clone(),
                        from: a.to_string(),
                        to: b.to_string(),
                    });
                }
            }
        }
    }
    Ok(violations)
}

fn reachable<'a>(from: &'a str, children: &BTreeMap<&'a str, BTreeSet<&'a str>>) -> HashSet<&'a str> {
    let mut seen = HashSet::new();
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if let Some(kids) = children.get(v) {
            for &k in kids {
                if seen.insert(k) {
                    stack.push(k);
                }
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced() -> GraphSpec {
        GraphSpec::new(2, 0)
            .latent("z1", 2)
            .latent("z2", 2)
            .latent("z3", 2)
            .observed("x1", 2)
            .observed("x2", 2)
            .observed("x3", 2)
            .observed("x4", 2)
            .edge("z1", "z2")
            .edge("z1", "z3")
            .edge("z2", "x1")
            .edge("z2", "x2")
            .edge("z3", "x3")
            .edge("z3", "x4")
    }

    #[test]
    fn balanced_tree_is_valid() {
        assert!(validate_spec(&balanced()).unwrap().is_empty());
        assert_eq!(balanced().depth(), 2);
    }

    #[test]
    fn empty_graph_is_valid() {
        assert!(validate_spec(&GraphSpec::new(2, 0)).unwrap().is_empty());
    }

    #[test]
    fn single_pure_child_is_flagged() {
        let spec = GraphSpec::new(2, 0)
            .latent("z1", 1)
            .observed("x1", 1)
            .edge("z1", "x1");
        assert_eq!(
            validate_spec(&spec).unwrap(),
            vec![Violation::TooFewPureChildren {
                latent: "z1".into(),
                pure_children: vec!["x1".into()],
            }]
        );
    }

    #[test]
    fn malformed_specs_are_errors() {
        let dup = GraphSpec::new(2, 0).latent("a", 1).observed("a", 1);
        assert!(matches!(validate_spec(&dup), Err(ScmError::Malformed(_))));
        let dangling = GraphSpec::new(2, 0).latent("a", 1).edge("a", "b");
        assert!(matches!(validate_spec(&dangling), Err(ScmError::Malformed(_))));
    }

    #[test]
    fn cycles_and_observed_parents_are_flagged() {
        let cyc = GraphSpec::new(2, 0)
            .latent("a", 1)
            .latent("b", 1)
            .edge("a", "b")
            .edge("b", "a");
        assert!(matches!(
            validate_spec(&cyc).unwrap()[0],
            Violation::Cycle { .. }
        ));
        let obs = balanced().observed("x5", 1).edge("x1", "x5");
        assert!(validate_spec(&obs)
            .unwrap()
            .contains(&Violation::ObservedNotLeaf {
                node: "x1".into(),
                children: vec!["x5".into()]
            }));
    }

    #[test]
    fn sibling_paths_are_flagged() {
        // z1 -> {z2, x0a}, z2 -> {x1, x2, x0a}: x0a and z2 are siblings under z1
        // and z2 -> x0a is a directed path between them.
        let spec = GraphSpec::new(2, 0)
            .latent("z1", 1)
            .latent("z2", 1)
            .observed("a", 1)
            .observed("b", 1)
            .observed("x1", 1)
            .observed("x2", 1)
            .edge("z1", "z2")
            .edge("z1", "a")
            .edge("z1", "b")
            .edge("z2", "x1")
            .edge("z2", "x2")
            .edge("z2", "a");
        let v = validate_spec(&spec).unwrap();
        assert!(v.contains(&Violation::SiblingPath {
            parent: "z1".into(),
            from: "z2".into(),
            to: "a".into()
        }));
    }

    #[test]
    fn json_layout() {
        let spec = GraphSpec::new(2, 42)
            .latent("z", 2)
            .observed("x", 3)
            .edge("z", "x");
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            text,
            r#"{"nodes":[{"id":"z","dim":2,"kind":"latent"},{"id":"x","dim":3,"kind":"observed"}],"edges":[["z","x"]],"exogenous_dim":2,"seed":42}"#
        );
        let back: GraphSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
