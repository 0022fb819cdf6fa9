use hiercause::eval::{
    are_equivalent, independence_score, kernel_r2, kernel_r2_detailed, nw_predict, pairwise_matrix, split_indices,
    Bandwidth, R2Options,
};
use hiercause::par::Execution;
use ndarray::{Array2, ArrayView2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const ORACLE_TOL: f64 = 1e-10;
const SELF_PREDICTION_MIN: f64 = 0.999;
const SELF_PREDICTION_MIN_2D: f64 = 0.995;
const INDEPENDENT_MAX: f64 = 0.05;

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
}

/// Textbook Nadaraya–Watson estimate without any numerical shortcuts.
fn brute_force(train_x: ArrayView2<f64>, train_y: ArrayView2<f64>, query: ArrayView2<f64>, h: f64) -> Array2<f64> {
    let mut out = Array2::zeros((query.nrows(), train_y.ncols()));
    for (q, mut o) in query.rows().into_iter().zip(out.rows_mut()) {
        let w: Vec<f64> = train_x
            .rows()
            .into_iter()
            .map(|t| {
                let d2: f64 = t.iter().zip(q.iter()).map(|(a, b)| (a - b).powi(2)).sum();
                (-d2 / (2.0 * h * h)).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        for (wi, ty) in w.iter().zip(train_y.rows()) {
            o.scaled_add(wi / total, &ty);
        }
    }
    out
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn predictions_match_brute_force() {
    for (seed, h) in [(1, 0.3), (2, 1.0), (3, 2.5)] {
        let tx = gaussian(150, 3, seed);
        let ty = gaussian(150, 2, seed + 10);
        let q = gaussian(50, 3, seed + 20);
        for exec in [Execution::Auto, Execution::Sequential] {
            let fast = nw_predict(tx.view(), ty.view(), q.view(), h, exec);
            let slow = brute_force(tx.view(), ty.view(), q.view(), h);
            let diff = max_abs_diff(&fast, &slow);
            assert!(diff <= ORACLE_TOL, "h={h}: {diff}");
        }
    }
}

#[test]
fn held_out_score_matches_brute_force() {
    let n = 200;
    let x = gaussian(n, 2, 7);
    let y = x.mapv(|v| v.sin()) + gaussian(n, 2, 8) * 0.2;
    let opts = R2Options {
        bandwidth: Bandwidth::Fixed(0.4),
        seed: 5,
        ..R2Options::default()
    };
    let fit = kernel_r2_detailed(x.view(), y.view(), &opts).unwrap();
    let (train, eval) = split_indices(n, opts.budget, opts.seed);
    assert_eq!((fit.train_rows.clone(), fit.eval_rows.clone()), (train.clone(), eval.clone()));

    let xt = x.select(Axis(0), &train);
    let mean = xt.mean_axis(Axis(0)).unwrap();
    let std = xt.std_axis(Axis(0), 0.0);
    let xs = (&x - &mean) / &std;
    let fitted = brute_force(
        xs.select(Axis(0), &train).view(),
        y.select(Axis(0), &train).view(),
        xs.select(Axis(0), &eval).view(),
        0.4,
    );
    assert!(max_abs_diff(&fitted, &fit.fitted) <= ORACLE_TOL);
    let ye = y.select(Axis(0), &eval);
    let r2: f64 = (0..ye.ncols())
        .map(|c| {
            let col = ye.column(c);
            let m = col.mean().unwrap();
            let sst: f64 = col.iter().map(|v| (v - m).powi(2)).sum();
            let sse: f64 = col.iter().zip(fitted.column(c)).map(|(t, f)| (t - f).powi(2)).sum();
            1.0 - sse / sst
        })
        .sum::<f64>()
        / ye.ncols() as f64;
    assert!((r2 - fit.score.value).abs() <= ORACLE_TOL, "{r2} vs {}", fit.score.value);
}

#[test]
fn a_variable_predicts_itself() {
    for (seed, n) in [(0, 200), (1, 1000), (2, 8192), (3, 8192)] {
        let x = gaussian(n, 1, seed);
        let s = kernel_r2(x.view(), x.view(), &R2Options::default()).unwrap();
        assert!(s.value >= SELF_PREDICTION_MIN, "seed {seed}, n {n}: {}", s.value);
    }
    // Held-out smoothing in two dimensions leaves a small gap to 1.
    for seed in 0..3 {
        let x = gaussian(8192, 2, seed);
        let s = kernel_r2(x.view(), x.view(), &R2Options::default()).unwrap();
        assert!(s.value >= SELF_PREDICTION_MIN_2D, "seed {seed}: {}", s.value);
    }
}

#[test]
fn independent_variables_score_near_zero() {
    for seed in 0..10 {
        let a = gaussian(4000, 2, 100 + seed);
        let b = gaussian(4000, 2, 200 + seed);
        let opts = R2Options {
            seed,
            ..R2Options::default()
        };
        let s = independence_score(a.view(), b.view(), &opts).unwrap();
        assert!(s <= INDEPENDENT_MAX, "seed {seed}: {s}");
        assert!(!are_equivalent(a.view(), b.view(), 0.6, &opts).unwrap());
    }
}

#[test]
fn parallel_and_sequential_agree_exactly() {
    let vars: Vec<(String, Array2<f64>)> = (0..3).map(|i| (format!("v{i}"), gaussian(600, 2, i))).collect();
    let views: Vec<_> = vars.iter().map(|(id, a)| (id.clone(), a.view())).collect();
    let run = |execution| {
        pairwise_matrix(
            &views,
            &R2Options {
                execution,
                ..R2Options::default()
            },
        )
        .unwrap()
    };
    assert_eq!(run(Execution::Auto), run(Execution::Sequential));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scores_never_exceed_one(seed in 0u64..1000, dx in 1usize..4, dy in 1usize..3, h in 0.05f64..3.0) {
        let x = gaussian(120, dx, seed);
        let y = gaussian(120, dy, seed + 1);
        let opts = R2Options { bandwidth: Bandwidth::Fixed(h), seed, ..R2Options::default() };
        let s = kernel_r2(x.view(), y.view(), &opts).unwrap();
        prop_assert!(s.value <= 1.0 && s.value.is_finite());
    }

    #[test]
    fn predictions_stay_inside_the_target_hull(seed in 0u64..1000, h in 0.01f64..5.0) {
        let tx = gaussian(60, 2, seed);
        let ty = gaussian(60, 1, seed + 1);
        let q = gaussian(20, 2, seed + 2) * 3.0;
        let p = nw_predict(tx.view(), ty.view(), q.view(), h, Execution::Sequential);
        let lo = ty.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ty.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }

    #[test]
    fn splits_are_disjoint_and_bounded(n in 2usize..500, budget in 2usize..600, seed in 0u64..100) {
        let (a, b) = split_indices(n, budget, seed);
        prop_assert_eq!(a.len() + b.len(), n.min(budget));
        prop_assert!(a.iter().all(|i| !b.contains(i)));
    }
}

#[test]
fn concatenation_predicts_its_part_but_not_conversely() {
    let b = gaussian(4000, 2, 30);
    let extra = gaussian(4000, 2, 31);
    let a = ndarray::concatenate(Axis(1), &[b.view(), extra.view()]).unwrap();
    let opts = R2Options::default();
    assert!(kernel_r2(a.view(), b.view(), &opts).unwrap().value >= 0.9);
    assert!(kernel_r2(b.view(), a.view(), &opts).unwrap().value < 0.6);
    assert!(!are_equivalent(a.view(), b.view(), 0.6, &opts).unwrap());
}

#[test]
fn weak_dependence_is_not_independence() {
    let a = gaussian(4000, 1, 40);
    let b = &a * 0.65 + gaussian(4000, 1, 41) * 0.76;
    let s = independence_score(a.view(), b.view(), &R2Options::default()).unwrap();
    assert!(s > 0.2 && s < 0.5, "{s}");
    assert!(!hiercause::eval::is_independent(a.view(), b.view(), 0.1, &R2Options::default()).unwrap());
}

#[test]
fn appended_noise_columns_do_not_inflate_scores() {
    let x = gaussian(4000, 1, 50);
    let y = x.mapv(|v| v.tanh()) + gaussian(4000, 1, 51) * 0.5;
    let opts = R2Options::default();
    let base = kernel_r2(x.view(), y.view(), &opts).unwrap().value;
    for extra in 1..=3 {
        let padded = ndarray::concatenate(Axis(1), &[x.view(), gaussian(4000, extra, 60 + extra as u64).view()]).unwrap();
        let s = kernel_r2(padded.view(), y.view(), &opts).unwrap().value;
        assert!(s <= base + 0.05, "{extra} extra columns: {s} vs {base}");
    }
}

#[test]
fn copies_fill_the_matrix_with_ones() {
    let a = gaussian(8192, 2, 70);
    let views = vec![("a".to_string(), a.view()), ("b".to_string(), a.view())];
    let m = pairwise_matrix(&views, &R2Options::default()).unwrap();
    assert!(m.value(0, 1).unwrap() >= 0.999 && m.value(1, 0).unwrap() >= 0.999);
    assert!(m.value(0, 0).is_none());
}
