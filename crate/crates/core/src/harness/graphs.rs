//! Reference hierarchies used by the reproduction experiments.
//!
//! Node widths follow one rule: a root is as wide as its exogenous noise and
//! every other node is as wide as its parents plus its own noise. With that
//! choice each generator is a square map, so every node keeps all of the
//! information carried by its parents.

use std::collections::BTreeMap;

use crate::scm::GraphSpec;

/// Builds a spec from `(parent, child)` pairs. Ids starting with `x` are
/// observed, everything else is latent. Nodes are declared in the order
/// they first appear.
pub fn conserving(edges: &[(&str, &str)], exogenous_dim: usize, seed: u64) -> GraphSpec {
    let mut order: Vec<&str> = Vec::new();
    for (p, c) in edges {
        for id in [*p, *c] {
            if !order.contains(&id) {
                order.push(id);
            }
        }
    }
    let mut dims: BTreeMap<&str, usize> = BTreeMap::new();
    // Parents always precede children in these reference graphs, but
    // iterate to a fixed point so the declaration order does not matter.
    for _ in 0..order.len() {
        for id in &order {
            let parents: Vec<&str> = edges.iter().filter(|(_, c)| c == id).map(|(p, _)| *p).collect();
            let sum: usize = parents.iter().map(|p| dims.get(p).copied().unwrap_or(0)).sum();
            dims.insert(id, sum + exogenous_dim);
        }
    }
    let mut spec = GraphSpec::new(exogenous_dim, seed);
    for id in &order {
        spec = if id.starts_with('x') {
            spec.observed(id, dims[id])
        } else {
            spec.latent(id, dims[id])
        };
    }
    for (p, c) in edges {
        spec = spec.edge(p, c);
    }
    spec
}

/// Balanced tree: a root with two latent children, each with two leaves.
pub fn balanced_tree(seed: u64) -> GraphSpec {
    conserving(
        &[
            ("z1", "z2"),
            ("z1", "z3"),
            ("z2", "x1"),
            ("z2", "x2"),
            ("z3", "x3"),
            ("z3", "x4"),
        ],
        2,
        seed,
    )
}

/// Two sibling latents sharing the leaf `x3`.
pub fn v_structure(seed: u64) -> GraphSpec {
    conserving(
        &[
            ("z1", "z2"),
            ("z1", "z3"),
            ("z2", "x1"),
            ("z2", "x2"),
            ("z2", "x3"),
            ("z3", "x3"),
            ("z3", "x4"),
            ("z3", "x5"),
        ],
        2,
        seed,
    )
}

/// Unbalanced tree: one branch is a level deeper than the other.
pub fn unbalanced_tree(seed: u64) -> GraphSpec {
    conserving(
        &[
            ("z1", "z2"),
            ("z1", "z3"),
            ("z2", "z4"),
            ("z2", "x3"),
            ("z3", "x4"),
            ("z3", "x5"),
            ("z4", "x1"),
            ("z4", "x2"),
        ],
        2,
        seed,
    )
}

/// Two co-parents of a latent child, each with their own leaves.
pub fn shared_child(seed: u64) -> GraphSpec {
    conserving(
        &[
            ("z1", "z2"),
            ("z1", "z3"),
            ("z2", "x1"),
            ("z2", "x2"),
            ("z2", "x3"),
            ("z2", "z4"),
            ("z3", "x7"),
            ("z3", "x8"),
            ("z3", "x9"),
            ("z3", "z4"),
            ("z4", "x4"),
            ("z4", "x5"),
            ("z4", "x6"),
        ],
        2,
        seed,
    )
}

/// One latent with `k` observed children.
pub fn star(k: usize, seed: u64) -> GraphSpec {
    let ids: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    let edges: Vec<(&str, &str)> = ids.iter().map(|x| ("z1", x.as_str())).collect();
    conserving(&edges, 2, seed)
}

/// Depth-2 tree with six leaves split evenly under two latents.
pub fn wide_tree(seed: u64) -> GraphSpec {
    conserving(
        &[
            ("z1", "z2"),
            ("z1", "z3"),
            ("z2", "x1"),
            ("z2", "x2"),
            ("z2", "x3"),
            ("z3", "x4"),
            ("z3", "x5"),
            ("z3", "x6"),
        ],
        2,
        seed,
    )
}

/// Depth-3 tree with seven leaves.
pub fn deep_tree(seed: u64) -> GraphSpec {
    conserving(
        &[
            ("z1", "z2"),
            ("z1", "z3"),
            ("z2", "z4"),
            ("z2", "x1"),
            ("z3", "z5"),
            ("z3", "x4"),
            ("z4", "x2"),
            ("z4", "x3"),
            ("z5", "x5"),
            ("z5", "x6"),
            ("z5", "x7"),
        ],
        2,
        seed,
    )
}

/// Looks a reference graph up by name.
pub fn by_name(name: &str, seed: u64) -> Option<GraphSpec> {
    Some(match name {
        "balanced" => balanced_tree(seed),
        "v-structure" => v_structure(seed),
        "unbalanced" => unbalanced_tree(seed),
        "shared-child" => shared_child(seed),
        "wide" => wide_tree(seed),
        "deep" => deep_tree(seed),
        "star" => star(3, seed),
        _ => return None,
    })
}

pub const NAMES: [&str; 7] = ["balanced", "v-structure", "unbalanced", "shared-child", "wide", "deep", "star"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::validate_spec;

    #[test]
    fn reference_graphs_satisfy_the_structural_conditions() {
        for name in NAMES {
            let spec = by_name(name, 0).unwrap();
            assert!(validate_spec(&spec).unwrap().is_empty(), "{name}");
        }
    }

    #[test]
    fn widths_conserve_parent_information() {
        let dims = |s: &GraphSpec| -> BTreeMap<String, usize> { s.nodes.iter().map(|n| (n.id.clone(), n.dim)).collect() };
        let v = dims(&v_structure(0));
        assert_eq!((v["z1"], v["z2"], v["x1"], v["x3"]), (2, 4, 6, 10));
        let s = dims(&shared_child(0));
        assert_eq!((s["z4"], s["x4"], s["x1"], s["x7"]), (10, 12, 6, 6));
    }
}
