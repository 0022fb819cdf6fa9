//! Dense Leaky-ReLU networks with hand-written reverse-mode gradients and Adam.
//!
//! Layer weights are stored `out × in`, so a batch `X` (rows are samples) maps to
//! `X · Wᵀ + b`. Hidden layers are followed by a Leaky-ReLU; the final layer is
//! linear unless `activate_output` is set.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SLOPE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer dimension list needs at least two positive entries, got {0:?}")]
    BadDims(Vec<usize>),
    #[error("activation slope must lie in (0, 1), got {0}")]
    BadSlope(f64),
    #[error("width mismatch: expected {expected} columns, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("row count mismatch: inputs have {inputs} rows, targets have {targets}")]
    RowMismatch { inputs: usize, targets: usize },
    #[error("layer {layer} does not compose: previous output {prev_out}, next input {next_in}")]
    LayerShape {
        layer: usize,
        prev_out: usize,
        next_in: usize,
    },
    #[error("non-finite gradient at optimizer step {step}")]
    Divergence { step: u64 },
    #[error("gradient shape does not match parameters")]
    GradientShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub slope: f64,
    #[serde(default)]
    pub activate_output: bool,
}

/// Per-layer gradients (or any other tensor list) shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            layers: mlp
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn matches(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers.len()
            && self
                .layers
                .iter()
                .zip(&mlp.layers)
                .all(|(g, p)| g.weight.dim() == p.weight.dim() && g.bias.len() == p.bias.len())
    }
}

/// Intermediate values kept by [`Mlp::forward_trace`] for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Element-wise Leaky-ReLU.
pub fn leaky_relu(x: &Array2<f64>, slope: f64) -> Array2<f64> {
    x.mapv(|v| leaky(v, slope))
}

impl Mlp {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(dims: &[usize], slope: f64, seed: u64) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::BadDims(dims.to_vec()));
        }
        check_slope(slope)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                });
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp {
            layers,
            slope,
            activate_output: false,
        })
    }

    /// Builds a network from explicit layers, checking that shapes compose.
    pub fn from_layers(layers: Vec<Dense>, slope: f64) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BadDims(vec![]));
        }
        check_slope(slope)?;
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(NnError::LayerShape {
                    layer: i,
                    prev_out: l.out_dim(),
                    next_in: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(NnError::LayerShape {
                    layer: i,
                    prev_out: layers[i - 1].out_dim(),
                    next_in: l.in_dim(),
                });
            }
        }
        Ok(Mlp {
            layers,
            slope,
            activate_output: false,
        })
    }

    pub fn with_output_activation(mut self, on: bool) -> Self {
        self.activate_output = on;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    fn check_width(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.in_dim() {
            return Err(NnError::WidthMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_width(&x)?;
        let mut h = affine(&self.layers[0], x);
        if self.activated(0) {
            h.mapv_inplace(|v| leaky(v, self.slope));
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = affine(layer, h.view());
            if self.activated(i) {
                h.mapv_inplace(|v| leaky(v, self.slope));
            }
        }
        Ok(h)
    }

    /// Forward pass that keeps every layer input and pre-activation.
    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace, NnError> {
        self.check_width(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, h.view());
            let next = if self.activated(i) {
                leaky_relu(&z, self.slope)
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok(Trace {
            inputs,
            pre,
            output: h,
        })
    }

    /// Backpropagates `grad_out` (∂loss/∂output) through a recorded trace.
    /// Returns parameter gradients and ∂loss/∂input.
    pub fn backward(&self, trace: &Trace, grad_out: ArrayView2<f64>) -> (Gradients, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                let slope = self.slope;
                Zip::from(&mut g).and(&trace.pre[i]).for_each(|gv, &z| {
                    if z <= 0.0 {
                        *gv *= slope;
                    }
                });
            }
            let weight = g.t().dot(&trace.inputs[i]);
            let bias = g.sum_axis(Axis(0));
            let g_in = g.dot(&self.layers[i].weight);
            grads.push(Dense { weight, bias });
            g = g_in;
        }
        grads.reverse();
        (Gradients { layers: grads }, g)
    }

    /// Gradient of `(1/n) Σ ‖f(x) − y‖²` together with the loss value.
    pub fn mse_grad(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
    ) -> Result<(Gradients, f64), NnError> {
        if x.nrows() != y.nrows() {
            return Err(NnError::RowMismatch {
                inputs: x.nrows(),
                targets: y.nrows(),
            });
        }
        if y.ncols() != self.out_dim() {
            return Err(NnError::WidthMismatch {
                expected: self.out_dim(),
                got: y.ncols(),
            });
        }
        let trace = self.forward_trace(x)?;
        let n = x.nrows().max(1) as f64;
        let resid = trace.output() - &y;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let grad_out = resid * (2.0 / n);
        let (grads, _) = self.backward(&trace, grad_out.view());
        Ok((grads, loss))
    }

    /// Flattens all parameters layer by layer (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    /// Inverse of [`Mlp::flatten`] given layer dims.
    pub fn unflatten(dims: &[usize], slope: f64, values: &[f64]) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::BadDims(dims.to_vec()));
        }
        let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if expected != values.len() {
            return Err(NnError::WidthMismatch {
                expected,
                got: values.len(),
            });
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut at = 0;
        for w in dims.windows(2) {
            let (i, o) = (w[0], w[1]);
            let weight = Array2::from_shape_vec((o, i), values[at..at + o * i].to_vec())
                .expect("sizes checked above");
            at += o * i;
            let bias = Array1::from(values[at..at + o].to_vec());
            at += o;
            layers.push(Dense { weight, bias });
        }
        Mlp::from_layers(layers, slope)
    }
}

fn check_slope(slope: f64) -> Result<(), NnError> {
    if slope > 0.0 && slope < 1.0 {
        Ok(())
    } else {
        Err(NnError::BadSlope(slope))
    }
}

fn affine(layer: &Dense, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Gradients::zeros_like(mlp),
            second: Gradients::zeros_like(mlp),
        }
    }

    /// Applies one bias-corrected Adam update in place.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if !grads.matches(mlp) || !self.first.matches(mlp) {
            return Err(NnError::GradientShape);
        }
        if !grads.is_finite() {
            return Err(NnError::Divergence {
                step: self.step + 1,
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 / (1.0 - beta1.powi(t));
        let c2 = 1.0 / (1.0 - beta2.powi(t));
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
        };
        for (((p, m), v), g) in mlp
            .layers
            .iter_mut()
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
            .zip(&grads.layers)
        {
            Zip::from(&mut p.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = Mlp::init(&[2, 4, 2], 0.2, 7).unwrap();
        let b = Mlp::init(&[2, 4, 2], 0.2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), vec![2, 4, 2]);
        let c = Mlp::init(&[2, 4, 2], 0.2, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_input() {
        assert!(matches!(Mlp::init(&[], 0.2, 0), Err(NnError::BadDims(_))));
        assert!(matches!(Mlp::init(&[3], 0.2, 0), Err(NnError::BadDims(_))));
        assert!(matches!(Mlp::init(&[3, 0], 0.2, 0), Err(NnError::BadDims(_))));
        assert!(matches!(Mlp::init(&[3, 3], 1.0, 0), Err(NnError::BadSlope(_))));
    }

    #[test]
    fn four_layer_wide_shape_is_accepted() {
        let m = Mlp::init(&[2, 60, 60, 60, 2], 0.2, 1).unwrap();
        assert_eq!(m.depth(), 4);
        let x = Array2::from_elem((3, 2), 0.5);
        assert_eq!(m.forward(x.view()).unwrap().dim(), (3, 2));
    }

    #[test]
    fn single_layer_is_affine() {
        let m = Mlp::init(&[3, 3], 0.2, 3).unwrap();
        let x = array![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]];
        let out = m.forward(x.view()).unwrap();
        let expect = x.dot(&m.layers[0].weight.t()) + &m.layers[0].bias;
        assert_eq!(out, expect);
    }

    #[test]
    fn zero_weights_return_bias() {
        let layers = vec![
            Dense {
                weight: Array2::zeros((4, 2)),
                bias: Array1::zeros(4),
            },
            Dense {
                weight: Array2::zeros((3, 4)),
                bias: array![1.0, -2.0, 0.25],
            },
        ];
        let m = Mlp::from_layers(layers, 0.2).unwrap();
        let out = m
            .forward(array![[5.0, 6.0], [-1.0, 2.0]].view())
            .unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![1.0, -2.0, 0.25]);
        }
    }

    #[test]
    fn activated_identity_layer() {
        let layers = vec![Dense {
            weight: array![[1.0]],
            bias: array![0.0],
        }];
        let m = Mlp::from_layers(layers, 0.2)
            .unwrap()
            .with_output_activation(true);
        let out = m.forward(array![[-1.0], [1.0]].view()).unwrap();
        assert!((out[[0, 0]] + 0.2).abs() < 1e-15);
        assert_eq!(out[[1, 0]], 1.0);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let m = Mlp::init(&[3, 2], 0.2, 0).unwrap();
        let err = m.forward(Array2::zeros((2, 4)).view()).unwrap_err();
        assert_eq!(err, NnError::WidthMismatch { expected: 3, got: 4 });
        let err = m
            .mse_grad(Array2::zeros((2, 3)).view(), Array2::zeros((3, 2)).view())
            .unwrap_err();
        assert!(matches!(err, NnError::RowMismatch { .. }));
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let m = Mlp::init(&[2, 5, 3], 0.2, 11).unwrap();
        let x = array![[0.3, -0.7], [1.1, 0.2], [-0.4, 0.9]];
        let y = m.forward(x.view()).unwrap();
        let (g, loss) = m.mse_grad(x.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn trace_output_matches_forward() {
        let m = Mlp::init(&[3, 7, 7, 2], 0.2, 5).unwrap();
        let x = array![[0.3, -0.7, 2.0], [1.1, 0.2, -3.0]];
        let t = m.forward_trace(x.view()).unwrap();
        assert_eq!(t.output(), &m.forward(x.view()).unwrap());
    }

    #[test]
    fn flatten_round_trips() {
        let m = Mlp::init(&[3, 5, 2], 0.2, 9).unwrap();
        let back = Mlp::unflatten(&m.dims(), m.slope, &m.flatten()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut m = Mlp::init(&[2, 3, 1], 0.2, 0).unwrap();
        let before = m.clone();
        let mut opt = Adam::new(&m, AdamConfig::default());
        let zero = Gradients::zeros_like(&m);
        opt.step(&mut m, &zero).unwrap();
        assert_eq!(m, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = Mlp::init(&[2, 1], 0.2, 0).unwrap();
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        g.layers[0].weight = array![[3.0, -0.01]];
        g.layers[0].bias = array![1e-3];
        let mut opt = Adam::new(&m, AdamConfig::default());
        opt.step(&mut m, &g).unwrap();
        let dw = &m.layers[0].weight - &before.layers[0].weight;
        assert!((dw[[0, 0]] + 1e-3).abs() < 1e-9);
        assert!((dw[[0, 1]] - 1e-3).abs() < 1e-9);
        let db = m.layers[0].bias[0] - before.layers[0].bias[0];
        assert!((db + 1e-3).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut m = Mlp::init(&[2, 1], 0.2, 0).unwrap();
        let mut g = Gradients::zeros_like(&m);
        g.layers[0].bias[0] = f64::NAN;
        let mut opt = Adam::new(&m, AdamConfig::default());
        assert_eq!(
            opt.step(&mut m, &g).unwrap_err(),
            NnError::Divergence { step: 1 }
        );
    }
}
