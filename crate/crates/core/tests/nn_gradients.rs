use hiercause::nn::{Adam, AdamConfig, Gradients, Mlp};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FD_STEP: f64 = 1e-6;
const FD_MAX_REL_ERR: f64 = 1e-4;
/// Floor on the denominator so near-zero gradients are compared absolutely.
const FD_FLOOR: f64 = 1e-4;

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
}

fn flat(g: &Gradients) -> Vec<f64> {
    g.layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

fn loss(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    net.mse_grad(x.view(), y.view()).unwrap().1
}

fn max_relative_error(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (grads, _) = net.mse_grad(x.view(), y.view()).unwrap();
    let analytic = flat(&grads);
    let params = net.flatten();
    let dims = net.dims();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let probe = |delta: f64| {
            let mut p = params.clone();
            p[i] += delta;
            let mut m = Mlp::unflatten(&dims, net.slope, &p).unwrap();
            m.activate_output = net.activate_output;
            loss(&m, x, y)
        };
        let numeric = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn backprop_matches_finite_differences() {
    for (seed, dims) in [(0, vec![3, 8, 2]), (1, vec![4, 6, 6, 6, 3]), (2, vec![2, 5, 5, 5, 5, 1])] {
        let net = Mlp::init(&dims, 0.2, seed).unwrap();
        let x = gaussian(16, dims[0], seed + 100);
        let y = gaussian(16, *dims.last().unwrap(), seed + 200);
        let err = max_relative_error(&net, &x, &y);
        assert!(err <= FD_MAX_REL_ERR, "dims {dims:?}: {err:e}");
    }
}

#[test]
fn backprop_matches_finite_differences_with_activated_output() {
    let net = Mlp::init(&[3, 7, 7, 2], 0.2, 9).unwrap().with_output_activation(true);
    let x = gaussian(20, 3, 10);
    let y = gaussian(20, 2, 11);
    let err = max_relative_error(&net, &x, &y);
    assert!(err <= FD_MAX_REL_ERR, "{err:e}");
}

#[test]
fn adam_reduces_a_regression_loss() {
    let mut net = Mlp::init(&[2, 16, 16, 1], 0.2, 3).unwrap();
    let x = gaussian(256, 2, 4);
    let y = x.map_axis(ndarray::Axis(1), |r| (r[0] * r[1]).tanh()).insert_axis(ndarray::Axis(1));
    let mut opt = Adam::new(
        &net,
        AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
    );
    let start = loss(&net, &x, &y);
    for _ in 0..300 {
        let (g, _) = net.mse_grad(x.view(), y.view()).unwrap();
        opt.step(&mut net, &g).unwrap();
    }
    let end = loss(&net, &x, &y);
    assert!(end < 0.2 * start, "{start} -> {end}");
    assert_eq!(opt.step, 300);
}
