use std::collections::BTreeMap;
use std::fs;

use hiercause::harness::graphs;
use hiercause::harness::ingest::{grouping_for_ids, ingest_csv};
use hiercause::harness::HarnessError;
use hiercause::scm::{sample_scm, validate_spec, GeneratorConfig, GraphSpec, ScmInstance};

fn instance(spec: &GraphSpec) -> ScmInstance {
    ScmInstance::generate(spec, &GeneratorConfig::default()).unwrap()
}

#[test]
fn sampling_is_seeded() {
    let spec = graphs::unbalanced_tree(3);
    let inst = instance(&spec);
    let a = sample_scm(&inst, 500, 1).unwrap();
    assert_eq!(a, sample_scm(&inst, 500, 1).unwrap());
    assert_ne!(a, sample_scm(&inst, 500, 2).unwrap());
    assert_eq!(inst, instance(&spec));
}

#[test]
fn every_node_has_its_declared_width_and_unit_scale() {
    for name in graphs::NAMES {
        let spec = graphs::by_name(name, 0).unwrap();
        assert!(validate_spec(&spec).unwrap().is_empty(), "{name}");
        let t = sample_scm(&instance(&spec), 8000, 5).unwrap();
        for node in &spec.nodes {
            let block = t.require(&node.id).unwrap();
            assert_eq!(block.ncols(), node.dim, "{name}/{}", node.id);
            for col in block.columns() {
                let m = col.mean().unwrap();
                let sd = col.std(0.0);
                assert!(m.abs() < 0.1 && (sd - 1.0).abs() < 0.1, "{name}/{}: mean {m} sd {sd}", node.id);
            }
        }
    }
}

#[test]
fn csv_round_trip_preserves_values() {
    let spec = graphs::v_structure(0);
    let t = sample_scm(&instance(&spec), 64, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    t.write_csv(&path).unwrap();
    let back = ingest_csv(&path, &grouping_for_ids(&t.ids())).unwrap();
    assert_eq!(back.dropped_rows, 0);
    assert!(back.ignored_columns.is_empty());
    for id in t.ids() {
        assert_eq!(back.table.require(&id).unwrap(), t.require(&id).unwrap(), "{id}");
    }
}

#[test]
fn ingest_groups_by_longest_prefix_and_drops_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    fs::write(&path, "a1,a2,ab1,note,b\n1,2,3,x,4\n5,NaN,7,y,8\n9,10,11,z,12\n13,14,oops,w,16\n").unwrap();
    let grouping: BTreeMap<String, String> =
        [("a", "A"), ("ab", "AB"), ("b", "B")].into_iter().map(|(p, i)| (p.into(), i.into())).collect();
    let ing = ingest_csv(&path, &grouping).unwrap();
    assert_eq!(ing.dropped_rows, 2);
    assert_eq!(ing.ignored_columns, vec!["note"]);
    assert_eq!(ing.table.n_samples(), 2);
    assert_eq!(ing.table.require("A").unwrap().row(1).to_vec(), vec![9.0, 10.0]);
    assert_eq!(ing.table.require("AB").unwrap().column(0).to_vec(), vec![3.0, 11.0]);
    assert_eq!(ing.table.require("B").unwrap().column(0).to_vec(), vec![4.0, 12.0]);
}

#[test]
fn ingest_reports_unusable_files() {
    let dir = tempfile::tempdir().unwrap();
    let g = |p: &str| -> BTreeMap<String, String> { [(p.to_string(), "v".to_string())].into_iter().collect() };
    let cases = [
        ("empty.csv", "", g("a")),
        ("header.csv", "a,b\n", g("a")),
        ("junk.csv", "a,b\nx,y\n", g("a")),
        ("missing.csv", "a,b\n1,2\n", g("c")),
    ];
    for (name, body, grouping) in cases {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        assert!(matches!(ingest_csv(&path, &grouping), Err(HarnessError::Ingest(_))), "{name}");
    }
}

fn chain_with_identity_child() -> (GraphSpec, ScmInstance) {
    let spec = GraphSpec::new(2, 7).latent("z", 2).observed("x", 2).edge("z", "x");
    let mut inst = instance(&spec);
    let mut weight = ndarray::Array2::zeros((2, 4));
    weight[[0, 0]] = 1.0;
    weight[[1, 1]] = 1.0;
    let mlp = hiercause::nn::Mlp::from_layers(
        vec![hiercause::nn::Dense {
            weight,
            bias: ndarray::Array1::zeros(2),
        }],
        0.2,
    )
    .unwrap();
    inst.set_generator("x", mlp, 0.0).unwrap();
    (spec, inst)
}

#[test]
fn identity_child_without_noise_copies_its_parent() {
    let (_, inst) = chain_with_identity_child();
    let t = sample_scm(&inst, 300, 1).unwrap();
    assert_eq!(t.require("x").unwrap(), t.require("z").unwrap());
}

#[test]
fn roots_are_standard_normal() {
    let (_, inst) = chain_with_identity_child();
    let n = 10_000;
    let t = sample_scm(&inst, n, 2).unwrap();
    for col in t.require("z").unwrap().columns() {
        let m = col.mean().unwrap();
        let var = col.var(0.0);
        assert!(m.abs() <= 4.0 / (n as f64).sqrt(), "{m}");
        assert!((var - 1.0).abs() <= 0.1, "{var}");
    }
}

#[test]
fn growing_n_only_appends_rows() {
    let spec = graphs::balanced_tree(1);
    let inst = instance(&spec);
    let short = sample_scm(&inst, 200, 4).unwrap();
    let long = sample_scm(&inst, 700, 4).unwrap();
    assert_eq!(long.head(200), short);
}

/// Residual of `y` after least-squares regression on `[1, z]`.
fn residual(y: ndarray::ArrayView1<f64>, z: ndarray::ArrayView2<f64>) -> ndarray::Array1<f64> {
    let n = y.len();
    let design = nalgebra::DMatrix::from_fn(n, z.ncols() + 1, |i, j| if j == 0 { 1.0 } else { z[[i, j - 1]] });
    let target = nalgebra::DVector::from_iterator(n, y.iter().copied());
    let beta = design.clone().svd(true, true).solve(&target, 1e-12).unwrap();
    let r = target - design * beta;
    ndarray::Array1::from_iter(r.iter().copied())
}

#[test]
fn fork_children_are_conditionally_uncorrelated() {
    let spec = GraphSpec::new(2, 3)
        .latent("z", 2)
        .observed("x1", 4)
        .observed("x2", 4)
        .edge("z", "x1")
        .edge("z", "x2");
    let inst = instance(&spec);
    let t = sample_scm(&inst, 10_000, 5).unwrap();
    let z = t.require("z").unwrap();
    let (a, b) = (t.require("x1").unwrap(), t.require("x2").unwrap());
    for i in 0..4 {
        let ra = residual(a.column(i), z);
        let rb = residual(b.column(i), z);
        let r = hiercause::stats::correlation(ra.as_slice().unwrap(), rb.as_slice().unwrap());
        assert!(r.abs() <= 0.1, "column {i}: {r}");
    }
}

#[test]
fn basis_synthetic_couples_z_and_s2() {
    let cfg = hiercause::scm::BasisSyntheticConfig::default();
    let gen = hiercause::scm::BasisSynthetic::new(&cfg).unwrap();
    assert_eq!(gen, hiercause::scm::BasisSynthetic::new(&cfg).unwrap());
    let t = gen.sample(10_000, 3).unwrap();
    let (z, s2) = (t.require("z").unwrap(), t.require("s2").unwrap());
    let mut strongest: f64 = 0.0;
    for i in 0..z.ncols() {
        for j in 0..s2.ncols() {
            let (zi, sj) = (z.column(i), s2.column(j));
            let cov = (&zi - zi.mean().unwrap()).dot(&(&sj - sj.mean().unwrap())) / zi.len() as f64;
            assert!((cov - gen.coupling[[j, i]]).abs() < 0.05, "cov {cov} vs {}", gen.coupling[[j, i]]);
            strongest = strongest.max(cov.abs());
        }
    }
    assert!(strongest > 0.1);
}
