use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GraphSpec, SampleTable, ScmError};
use crate::nn::{Dense, Mlp, DEFAULT_SLOPE};
use crate::stats::{derive_seed, hstack, ColumnScaler};

/// Gaussian `rows × cols` matrix whose singular values are rescaled linearly
/// into `[lo, hi]`, so its condition number is at most `hi / lo`.
pub fn well_conditioned(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let raw = DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let svd = raw.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let s = svd.singular_values;
    let (smin, smax) = s
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));
    let rescaled = s.map(|x| {
        if smax - smin > 1e-12 {
            lo + (hi - lo) * (x - smin) / (smax - smin)
        } else {
            (lo * hi).sqrt()
        }
    });
    let m = u * DMatrix::from_diagonal(&rescaled) * v_t;
    Array2::from_shape_fn((rows, cols), |(i, j)| m[(i, j)])
}

/// Ratio of the largest to the smallest singular value.
pub fn condition_number(w: &Array2<f64>) -> f64 {
    let m = DMatrix::<f64>::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
    let s = m.singular_values();
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

fn standard_normal(n: usize, width: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, width), |_| StandardNormal.sample(rng))
}

/// Builds a Leaky-ReLU network whose every weight matrix is well conditioned.
fn conditioned_mlp(
    dims: &[usize],
    slope: f64,
    range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Mlp, ScmError> {
    let layers = dims
        .windows(2)
        .map(|w| Dense {
            weight: well_conditioned(w[1], w[0], range.0, range.1, rng),
            bias: Array1::zeros(w[1]),
        })
        .collect();
    Ok(Mlp::from_layers(layers, slope)?)
}

fn check_conditioning(node: &str, mlp: &Mlp, bound: f64) -> Result<(), ScmError> {
    for (i, l) in mlp.layers.iter().enumerate() {
        let c = condition_number(&l.weight);
        if c > bound * (1.0 + 1e-9) {
            return Err(ScmError::Generator {
                node: node.to_string(),
                reason: format!("layer {i} condition number {c:.3} exceeds bound {bound}"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Multiplier applied to exogenous noise of non-root nodes.
    pub noise_scale: f64,
    pub slope: f64,
    /// Singular values of generator weights are mapped into this interval.
    pub singular_range: (f64, f64),
    /// Hidden width of the two-layer generators; defaults to the input width.
    pub hidden_width: Option<usize>,
    /// Standardise each generated node using statistics from a fixed
    /// calibration draw, keeping magnitudes stable across depth.
    pub normalize: bool,
    pub calibration_samples: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            noise_scale: 1.0,
            slope: DEFAULT_SLOPE,
            singular_range: (0.5, 2.0),
            hidden_width: None,
            normalize: true,
            calibration_samples: 4096,
        }
    }
}

/// Generator of one node: `value = scaler(mlp(parents ⊕ noise_scale · ε))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGenerator {
    pub parents: Vec<String>,
    pub exogenous_dim: usize,
    pub noise_scale: f64,
    pub mlp: Mlp,
    pub output: ColumnScaler,
}

/// A graph spec with concrete generator networks attached to every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmInstance {
    pub spec: GraphSpec,
    pub config: GeneratorConfig,
    generators: BTreeMap<String, NodeGenerator>,
    order: Vec<String>,
}

impl ScmInstance {
    /// Draws generator weights from `spec.seed`. Roots whose dimension equals
    /// their exogenous dimension copy their noise, so they are exactly
    /// standard normal; every other node gets a two-layer generator.
    pub fn generate(spec: &GraphSpec, config: &GeneratorConfig) -> Result<Self, ScmError> {
        spec.check_well_formed()?;
        let order = spec
            .topological_order()
            .map_err(|nodes| ScmError::Malformed(format!("cycle through {nodes:?}")))?;
        let (lo, hi) = config.singular_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(ScmError::Malformed(format!(
                "invalid singular value range ({lo}, {hi})"
            )));
        }
        let mut generators = BTreeMap::new();
        for id in &order {
            let node = spec.node(id).expect("ordered ids exist");
            let parents = spec.parents(id);
            let exo = spec.exogenous_dim_of(node);
            let in_dim: usize = parents
                .iter()
                .map(|p| spec.node(p).expect("checked").dim)
                .sum::<usize>()
                + exo;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("generator/{id}")));
            let (mlp, noise_scale) = if parents.is_empty() && node.dim == exo {
                (identity_mlp(exo, config.slope)?, 1.0)
            } else {
                let hidden = config.hidden_width.unwrap_or(in_dim);
                let mlp = conditioned_mlp(&[in_dim, hidden, node.dim], config.slope, (lo, hi), &mut rng)?;
                check_conditioning(id, &mlp, hi / lo)?;
                let scale = if parents.is_empty() { 1.0 } else { config.noise_scale };
                (mlp, scale)
            };
            generators.insert(
                id.clone(),
                NodeGenerator {
                    parents,
                    exogenous_dim: exo,
                    noise_scale,
                    output: ColumnScaler::identity(node.dim),
                    mlp,
                },
            );
        }
        let mut instance = ScmInstance {
            spec: spec.clone(),
            config: config.clone(),
            generators,
            order,
        };
        if config.normalize {
            instance.calibrate()?;
        }
        Ok(instance)
    }

    /// Fits each non-identity node's output scaler on a calibration draw.
    fn calibrate(&mut self) -> Result<(), ScmError> {
        let n = self.config.calibration_samples.max(2);
        let seed = derive_seed(self.spec.seed, "calibration");
        let mut values: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for id in self.order.clone() {
            let raw = self.node_raw(&id, n, seed, &values)?;
            let is_copy_root = {
                let g = &self.generators[&id];
                g.parents.is_empty() && g.mlp.depth() == 1
            };
            let g = self.generators.get_mut(&id).expect("generator exists");
            if !is_copy_root {
                g.output = ColumnScaler::fit(raw.view());
            }
            values.insert(id, g.output.transform(raw.view()));
        }
        Ok(())
    }

    pub fn generator(&self, id: &str) -> Option<&NodeGenerator> {
        self.generators.get(id)
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    /// Replaces a node's generator. The network must map
    /// `Σ parent dims + exogenous dim` columns to the node dim.
    pub fn set_generator(&mut self, id: &str, mlp: Mlp, noise_scale: f64) -> Result<(), ScmError> {
        let dim = self
            .spec
            .node(id)
            .ok_or_else(|| ScmError::UnknownVariable(id.to_string()))?
            .dim;
        let g = self.generators.get_mut(id).expect("every node has a generator");
        let in_dim: usize = g
            .parents
            .iter()
            .map(|p| self.spec.node(p).expect("checked").dim)
            .sum::<usize>()
            + g.exogenous_dim;
        if mlp.in_dim() != in_dim || mlp.out_dim() != dim {
            return Err(ScmError::Generator {
                node: id.to_string(),
                reason: format!(
                    "network maps {} -> {}, node needs {} -> {}",
                    mlp.in_dim(),
                    mlp.out_dim(),
                    in_dim,
                    dim
                ),
            });
        }
        g.mlp = mlp;
        g.noise_scale = noise_scale;
        g.output = ColumnScaler::identity(dim);
        Ok(())
    }

    /// Unscaled generator output for one node given already computed parents.
    fn node_raw(
        &self,
        id: &str,
        n: usize,
        seed: u64,
        values: &BTreeMap<String, Array2<f64>>,
    ) -> Result<Array2<f64>, ScmError> {
        let g = &self.generators[id];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
        let mut eps = standard_normal(n, g.exogenous_dim, &mut rng);
        eps *= g.noise_scale;
        let mut parts: Vec<ArrayView2<f64>> = g.parents.iter().map(|p| values[p].view()).collect();
        parts.push(eps.view());
        let input = hstack(n, &parts);
        let out = g.mlp.forward(input.view())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ScmError::Overflow { node: id.to_string() });
        }
        Ok(out)
    }
}

fn identity_mlp(dim: usize, slope: f64) -> Result<Mlp, ScmError> {
    Ok(Mlp::from_layers(
        vec![Dense {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }],
        slope,
    )?)
}

/// Samples every node (latent and observed) in topological order. Each node
/// draws its noise from its own stream, so increasing `n` only appends rows.
pub fn sample_scm(instance: &ScmInstance, n: usize, seed: u64) -> Result<SampleTable, ScmError> {
    if n == 0 {
        return Err(ScmError::Table("sample count must be positive".into()));
    }
    let mut values: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    for id in &instance.order {
        let raw = instance.node_raw(id, n, seed, &values)?;
        let scaled = instance.generators[id].output.transform(raw.view());
        if scaled.iter().any(|v| !v.is_finite()) {
            return Err(ScmError::Overflow { node: id.clone() });
        }
        values.insert(id.clone(), scaled);
    }
    let blocks = instance
        .spec
        .nodes
        .iter()
        .map(|node| (node.id.clone(), values.remove(&node.id).expect("sampled")))
        .collect();
    SampleTable::from_blocks(blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisSyntheticConfig {
    pub d_z: usize,
    pub d_s1: usize,
    pub d_s2: usize,
    /// Number of linear layers in each mixing network.
    pub depth: usize,
    /// Hidden width; defaults to the mixing input width (square layers).
    pub width: Option<usize>,
    pub slope: f64,
    pub singular_range: (f64, f64),
    pub seed: u64,
}

impl Default for BasisSyntheticConfig {
    fn default() -> Self {
        BasisSyntheticConfig {
            d_z: 2,
            d_s1: 2,
            d_s2: 2,
            depth: 2,
            width: None,
            slope: DEFAULT_SLOPE,
            singular_range: (0.5, 2.0),
            seed: 0,
        }
    }
}

/// Two-view generator: `v1 = g1(max(z,0), s1)`, `v2 = g2(min(z,0), s2)` with
/// `s2 ~ N(Az + b, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSynthetic {
    pub config: BasisSyntheticConfig,
    /// `d_s2 × d_z` coupling matrix.
    pub coupling: Array2<f64>,
    pub offset: Array1<f64>,
    pub g1: Mlp,
    pub g2: Mlp,
}

impl BasisSynthetic {
    pub fn new(config: &BasisSyntheticConfig) -> Result<Self, ScmError> {
        let c = config;
        if c.d_z == 0 || c.d_s1 == 0 || c.d_s2 == 0 || c.depth == 0 {
            return Err(ScmError::Malformed(
                "basis generator dims and depth must be at least 1".into(),
            ));
        }
        let (lo, hi) = c.singular_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(ScmError::Malformed(format!(
                "invalid singular value range ({lo}, {hi})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(c.seed, "basis/coupling"));
        let coupling = Array2::from_shape_fn((c.d_s2, c.d_z), |_| rng.random_range(-1.0..1.0));
        let offset = Array1::from_shape_fn(c.d_s2, |_| rng.random_range(-1.0..1.0));
        let make = |label: &str, width: usize| -> Result<Mlp, ScmError> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(c.seed, label));
            let hidden = c.width.unwrap_or(width);
            let mut dims = vec![width];
            dims.extend(std::iter::repeat_n(hidden, c.depth - 1));
            dims.push(width);
            let mlp = conditioned_mlp(&dims, c.slope, (lo, hi), &mut rng)?;
            check_conditioning(label, &mlp, hi / lo)?;
            Ok(mlp)
        };
        Ok(BasisSynthetic {
            config: c.clone(),
            coupling,
            offset,
            g1: make("basis/g1", c.d_z + c.d_s1)?,
            g2: make("basis/g2", c.d_z + c.d_s2)?,
        })
    }

    /// Table with slices `z`, `s1`, `s2`, `v1`, `v2`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleTable, ScmError> {
        if n == 0 {
            return Err(ScmError::Table("sample count must be positive".into()));
        }
        let c = &self.config;
        let draw = |label: &str, width: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label));
            standard_normal(n, width, &mut rng)
        };
        let z = draw("z", c.d_z);
        let s1 = draw("s1", c.d_s1);
        let mut s2 = draw("s2", c.d_s2);
        s2 += &z.dot(&self.coupling.t());
        s2 += &self.offset;
        let z_pos = z.mapv(|v| v.max(0.0));
        let z_neg = z.mapv(|v| v.min(0.0));
        let v1 = self.g1.forward(hstack(n, &[z_pos.view(), s1.view()]).view())?;
        let v2 = self.g2.forward(hstack(n, &[z_neg.view(), s2.view()]).view())?;
        for (name, m) in [("v1", &v1), ("v2", &v2)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ScmError::Overflow { node: name.into() });
            }
        }
        SampleTable::from_blocks(vec![
            ("z".into(), z),
            ("s1".into(), s1),
            ("s2".into(), s2),
            ("v1".into(), v1),
            ("v2".into(), v2),
        ])
    }
}

pub fn sample_basis_synthetic(
    config: &BasisSyntheticConfig,
    n: usize,
    seed: u64,
) -> Result<SampleTable, ScmError> {
    BasisSynthetic::new(config)?.sample(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditioning_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (r, c) in [(4, 4), (6, 4), (3, 8)] {
            let w = well_conditioned(r, c, 0.5, 2.0, &mut rng);
            assert!(condition_number(&w) <= 4.0 + 1e-9);
        }
    }

    #[test]
    fn basis_views_have_square_widths() {
        let t = sample_basis_synthetic(&BasisSyntheticConfig::default(), 500, 3).unwrap();
        assert_eq!(t.slice("v1").unwrap().width, 4);
        assert_eq!(t.slice("v2").unwrap().width, 4);
        let g = BasisSynthetic::new(&BasisSyntheticConfig::default()).unwrap();
        assert_ne!(g.g1, g.g2);
    }

    #[test]
    fn root_copies_noise() {
        let spec = GraphSpec::new(2, 0)
            .latent("z", 2)
            .observed("a", 2)
            .observed("b", 2)
            .edge("z", "a")
            .edge("z", "b");
        let inst = ScmInstance::generate(&spec, &GeneratorConfig::default()).unwrap();
        let g = inst.generator("z").unwrap();
        assert_eq!(g.mlp.depth(), 1);
        assert_eq!(g.output, ColumnScaler::identity(2));
        let a = inst.generator("a").unwrap();
        assert_eq!(a.mlp.dims(), vec![4, 4, 2]);
    }
}
