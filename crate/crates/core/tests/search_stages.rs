use std::collections::BTreeMap;

use hiercause::eval::{PredictionMatrix, R2Score};
use hiercause::harness::graphs;
use hiercause::scm::GraphSpec;
use hiercause::search::{
    close_dependent_pair, cluster_spouses, merge_duplicates, ActiveVariable, Origin, resolve_supervariables, spec_canonical, Estimate, JointEntry, ParentTable,
    SearchConfig, SupervariableAction,
};
use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

fn noise(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-1.0, 1.0).unwrap();
    Array2::from_shape_simple_fn((n, d), || u.sample(&mut rng))
}

fn estimate(id: &str, samples: Array2<f64>) -> Estimate {
    Estimate {
        id: id.into(),
        samples,
        source: format!("src-{id}"),
        members: vec![id.into()],
    }
}

/// Table where child `x{i}` produced estimate `h1_{i}`.
fn table_of(estimates: Vec<Estimate>) -> ParentTable {
    let mut t = ParentTable::default();
    for (i, e) in estimates.into_iter().enumerate() {
        t.entries.insert(format!("x{i}"), vec![e.id.clone()]);
        t.estimates.insert(e.id.clone(), e);
    }
    t
}

fn matrix(labels: &[&str], cells: &[(&str, &str, f64)]) -> PredictionMatrix {
    let k = labels.len();
    let mut scores = vec![vec![None; k]; k];
    let pos = |l: &str| labels.iter().position(|x| *x == l).unwrap();
    for (a, b, v) in cells {
        scores[pos(a)][pos(b)] = Some(R2Score {
            value: *v,
            n_train: 100,
            n_eval: 100,
            bandwidth: 1.0,
        });
    }
    PredictionMatrix {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        scores,
        failures: Vec::new(),
    }
}

fn full(labels: &[&str], value: impl Fn(&str, &str) -> f64) -> PredictionMatrix {
    let mut cells = Vec::new();
    for a in labels {
        for b in labels {
            if a != b {
                cells.push((*a, *b, value(a, b)));
            }
        }
    }
    matrix(labels, &cells)
}

#[test]
fn star_estimates_collapse_onto_the_lowest_id() {
    let ids = ["h1_0", "h1_1", "h1_2", "h1_3"];
    let t = table_of(ids.iter().map(|id| estimate(id, noise(10, 1, 0))).collect());
    let m = full(&ids, |_, _| 0.9);
    let (t, records) = merge_duplicates(t, &m, 0.6);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].representative, "h1_0");
    assert_eq!(records[0].members, ids.map(String::from).to_vec());
    assert_eq!(t.estimates.len(), 1);
    assert_eq!(t.estimates["h1_0"].members.len(), 4);
    assert!(t.entries.values().all(|ps| ps == &vec!["h1_0".to_string()]));
    assert_eq!(t.children_of("h1_0"), vec!["x0", "x1", "x2", "x3"]);
}

#[test]
fn merging_is_transitive_but_needs_both_directions() {
    let ids = ["h1_0", "h1_1", "h1_2", "h1_3"];
    let t = table_of(ids.iter().map(|id| estimate(id, noise(10, 1, 0))).collect());
    let m = full(&ids, |a, b| match (a, b) {
        ("h1_0", "h1_1") | ("h1_1", "h1_0") | ("h1_1", "h1_2") | ("h1_2", "h1_1") => 0.8,
        // one-directional only: no merge
        ("h1_3", "h1_0") => 0.95,
        _ => 0.1,
    });
    let (t, records) = merge_duplicates(t, &m, 0.6);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].members, vec!["h1_0", "h1_1", "h1_2"]);
    assert_eq!(records[0].min_score, 0.8);
    assert_eq!(t.estimates.keys().collect::<Vec<_>>(), vec!["h1_0", "h1_3"]);
}

#[test]
fn threshold_is_inclusive_for_merging() {
    let ids = ["h1_0", "h1_1"];
    let t = table_of(ids.iter().map(|id| estimate(id, noise(10, 1, 0))).collect());
    let (t, _) = merge_duplicates(t, &full(&ids, |_, _| 0.6), 0.6);
    assert_eq!(t.estimates.len(), 1);
}

#[test]
fn clusters_follow_chains_of_shared_children() {
    let mut t = ParentTable::default();
    for id in ["p1", "p2", "p3", "p4"] {
        t.estimates.insert(id.into(), estimate(id, noise(10, 1, 0)));
    }
    t.entries.insert("c1".into(), vec!["p1".into(), "p2".into()]);
    t.entries.insert("c2".into(), vec!["p2".into(), "p3".into()]);
    t.entries.insert("c3".into(), vec!["p4".into()]);
    t.entries.insert("c4".into(), vec!["p4".into()]);
    let clusters = cluster_spouses(&t);
    assert_eq!(
        clusters,
        vec![
            JointEntry {
                parents: vec!["p1".into(), "p2".into(), "p3".into()],
                children: vec!["c1".into(), "c2".into()],
            },
            JointEntry {
                parents: vec!["p4".into()],
                children: vec!["c3".into(), "c4".into()],
            },
        ]
    );
}

#[test]
fn concatenated_estimate_is_split_into_its_parts() {
    let n = 1200;
    let a = noise(n, 1, 1);
    let b = noise(n, 1, 2);
    let both = concatenate(Axis(1), &[a.view(), b.view()]).unwrap();
    let t = table_of(vec![
        estimate("h1_0", a),
        estimate("h1_1", b),
        estimate("h1_2", both),
    ]);
    let m = full(&["h1_0", "h1_1", "h1_2"], |x, y| match (x, y) {
        ("h1_2", _) => 0.7,
        (_, "h1_2") => 0.45,
        _ => 0.0,
    });
    let (t, records) = resolve_supervariables(t, &m, &SearchConfig::default()).unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert_eq!(r.action, SupervariableAction::Split);
    assert_eq!(r.subset, vec!["h1_0", "h1_1"]);
    assert!(r.score.unwrap() > 0.9, "{:?}", r.score);
    assert!(!t.estimates.contains_key("h1_2"));
    assert_eq!(t.entries["x2"], vec!["h1_0", "h1_1"]);
}

#[test]
fn unexplained_dominator_is_suppressed_unless_shared() {
    let n = 1200;
    let build = |members: Vec<String>| {
        let mut big = estimate("h1_1", noise(n, 2, 3));
        big.members = members;
        table_of(vec![estimate("h1_0", noise(n, 1, 4)), big, estimate("h1_2", noise(n, 1, 5))])
    };
    let m = full(&["h1_0", "h1_1", "h1_2"], |x, y| match (x, y) {
        ("h1_1", "h1_0") | ("h1_1", "h1_2") => 0.8,
        _ => 0.0,
    });
    let cfg = SearchConfig::default();
    let (t, r) = resolve_supervariables(build(vec!["h1_1".into()]), &m, &cfg).unwrap();
    assert_eq!(r[0].action, SupervariableAction::Suppressed);
    assert!(t.suppressed.contains("h1_1"));
    let (t, r) = resolve_supervariables(build(vec!["h1_1".into(), "h1_9".into()]), &m, &cfg).unwrap();
    assert_eq!(r[0].action, SupervariableAction::Retained);
    assert!(t.suppressed.is_empty());
}

#[test]
fn canonical_form_ignores_latent_names() {
    let a = graphs::balanced_tree(0);
    let mut renamed = GraphSpec::new(a.exogenous_dim, 0);
    let rename: BTreeMap<&str, &str> = [("z1", "r"), ("z2", "b"), ("z3", "a")].into_iter().collect();
    for n in &a.nodes {
        let id = rename.get(n.id.as_str()).copied().unwrap_or(&n.id);
        renamed = if n.id.starts_with('x') {
            renamed.observed(id, n.dim)
        } else {
            renamed.latent(id, n.dim)
        };
    }
    for (p, c) in &a.edges {
        let m = |s: &String| rename.get(s.as_str()).map(|s| s.to_string()).unwrap_or_else(|| s.clone());
        renamed = renamed.edge(&m(p), &m(c));
    }
    assert_eq!(spec_canonical(&a), spec_canonical(&renamed));
    assert_ne!(spec_canonical(&a), spec_canonical(&graphs::unbalanced_tree(0)));
}

fn observed(id: &str, samples: Array2<f64>) -> ActiveVariable {
    ActiveVariable {
        id: id.into(),
        samples,
        origin: Origin::Observed,
    }
}

#[test]
fn a_dependent_final_pair_gets_one_common_parent() {
    let a = noise(1000, 2, 20);
    let b = &a + &(noise(1000, 2, 21) * 0.3);
    let mut table = table_of(vec![estimate("h1_0", noise(1000, 2, 22)), estimate("h1_1", noise(1000, 2, 23))]);
    table.suppressed.extend(["h1_0".to_string(), "h1_1".to_string()]);
    let mut active = vec![observed("x0", a), observed("x1", b)];

    let closure = close_dependent_pair(&mut active, &mut table, &SearchConfig::default(), 4)
        .unwrap()
        .expect("dependent pair closes");
    assert_eq!(closure.entry.parents, vec!["h1_0"]);
    assert_eq!(closure.entry.children, vec!["x0", "x1"]);
    assert!(closure.dependence > 0.5);
    assert_eq!(active.len(), 1);
    assert_eq!(active[0].id, "h1_0");
    assert_eq!(table.children_of("h1_0"), vec!["x0", "x1"]);
    assert!(!table.suppressed.contains("h1_0"));
}

#[test]
fn an_independent_final_pair_stays_open() {
    let mut table = table_of(vec![estimate("h1_0", noise(1000, 2, 32)), estimate("h1_1", noise(1000, 2, 33))]);
    let mut active = vec![observed("x0", noise(1000, 2, 30)), observed("x1", noise(1000, 2, 31))];
    let before = table.clone();
    assert!(close_dependent_pair(&mut active, &mut table, &SearchConfig::default(), 4)
        .unwrap()
        .is_none());
    assert_eq!(active.len(), 2);
    assert_eq!(table, before);
}
