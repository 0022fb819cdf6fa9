//! Reproduction drivers. Each function returns plain data; writing files is
//! left to the caller.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Preset};
use crate::basis::{fit_basis, fit_individual_baseline, BasisError};
use crate::eval::{kernel_r2, pairwise_matrix, summarize_matrices, MatrixSummary, PredictionMatrix, R2Options};
use crate::scm::{sample_basis_synthetic, sample_scm, BasisSyntheticConfig, GraphSpec, SampleTable, ScmInstance};
use crate::search::{discover, estimate_parents, ActiveVariable, Discovery, FitCounter, Origin, SearchError};
use crate::stats::{derive_seed, format_mean_std, mean_std};

/// Latent, first-private and second-private widths of a two-view dataset.
pub type BasisDims = (usize, usize, usize);

/// The four dimension settings of the identifiability table.
pub const TABLE1_DIMS: [BasisDims; 4] = [(2, 2, 2), (2, 2, 3), (4, 4, 4), (4, 4, 6)];

/// Seed used to draw samples for experiment seed `seed`.
pub fn sample_seed(seed: u64) -> u64 {
    derive_seed(seed, "samples")
}

/// Two-view dataset for one seed: mixing networks and coupling come from
/// `seed`, samples from [`sample_seed`].
pub fn basis_dataset(dims: BasisDims, n: usize, seed: u64) -> Result<SampleTable, HarnessError> {
    let cfg = BasisSyntheticConfig {
        d_z: dims.0,
        d_s1: dims.1,
        d_s2: dims.2,
        seed,
        ..BasisSyntheticConfig::default()
    };
    Ok(sample_basis_synthetic(&cfg, n, sample_seed(seed))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisScore {
    /// Recovered shared latent predicting the true one.
    pub r2_z: f64,
    /// True first-private latent predicting the recovered shared latent.
    pub r2_s1: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Joint,
    Individual,
}

/// Fits one model on `table` (as produced by [`basis_dataset`]) and scores it.
pub fn score_basis(table: &SampleTable, dims: BasisDims, model: Model, preset: &Preset, seed: u64) -> Result<BasisScore, HarnessError> {
    let v1 = table.require("v1")?;
    let v2 = table.require("v2")?;
    let cfg = crate::basis::BasisConfig {
        seed,
        ..preset.basis.clone()
    }
    .with_dims(v1.ncols(), v2.ncols(), dims.0, dims.1, dims.2);
    let fit = match model {
        Model::Joint => fit_basis(v1, v2, &cfg)?,
        Model::Individual => fit_individual_baseline(v1, v2, &cfg)?,
    };
    let opts = R2Options::default();
    let z = fit.z_samples.view();
    Ok(BasisScore {
        r2_z: kernel_r2(z, table.require("z")?, &opts)?.value,
        r2_s1: kernel_r2(table.require("s1")?, z, &opts)?.value,
        final_loss: fit.final_loss,
    })
}

/// Per-seed scores of every model and dimension setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityTable {
    pub dims: Vec<BasisDims>,
    pub seeds: Vec<u64>,
    /// `joint[d][s]`: score for dimension setting `d` and seed `s`.
    pub joint: Vec<Vec<BasisScore>>,
    /// `None` where the baseline does not apply.
    pub individual: Vec<Option<Vec<BasisScore>>>,
}

impl IdentifiabilityTable {
    pub fn joint_r2(&self, d: usize) -> Vec<f64> {
        self.joint[d].iter().map(|s| s.r2_z).collect()
    }

    pub fn individual_r2(&self, d: usize) -> Option<Vec<f64>> {
        self.individual[d].as_ref().map(|v| v.iter().map(|s| s.r2_z).collect())
    }

    /// Rows `joint` and `individual`, one column per dimension setting,
    /// cells `mean±std` over seeds or `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for (z, s1, s2) in &self.dims {
            let _ = write!(out, ",dz={z} ds1={s1} ds2={s2}");
        }
        out.push('\n');
        out.push_str("joint");
        for d in 0..self.dims.len() {
            let _ = write!(out, ",{}", format_mean_std(&self.joint_r2(d)));
        }
        out.push('\n');
        out.push_str("individual");
        for d in 0..self.dims.len() {
            match self.individual_r2(d) {
                Some(v) => {
                    let _ = write!(out, ",{}", format_mean_std(&v));
                }
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
        out
    }
}

pub fn identifiability_table(preset: &Preset, dims: &[BasisDims], seeds: &[u64]) -> Result<IdentifiabilityTable, HarnessError> {
    let mut joint = Vec::new();
    let mut individual = Vec::new();
    for &d in dims {
        let mut j = Vec::new();
        let mut ind = Some(Vec::new());
        for &seed in seeds {
            let table = basis_dataset(d, preset.n_samples, seed)?;
            j.push(score_basis(&table, d, Model::Joint, preset, seed)?);
            match score_basis(&table, d, Model::Individual, preset, seed) {
                Ok(s) => {
                    if let Some(v) = ind.as_mut() {
                        v.push(s);
                    }
                }
                Err(HarnessError::Basis(BasisError::NotApplicable(_))) => ind = None,
                Err(e) => return Err(e),
            }
        }
        joint.push(j);
        individual.push(ind);
    }
    Ok(IdentifiabilityTable {
        dims: dims.to_vec(),
        seeds: seeds.to_vec(),
        joint,
        individual,
    })
}

/// Shared-latent recovery as a function of the training-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeCurve {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `r2[i][s]` for size `i` and seed `s`.
    pub r2: Vec<Vec<f64>>,
}

impl SampleSizeCurve {
    pub fn means(&self) -> Vec<f64> {
        self.r2.iter().map(|v| mean_std(v).0).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,mean,std\n");
        for (n, v) in self.sizes.iter().zip(&self.r2) {
            let (m, s) = mean_std(v);
            let _ = writeln!(out, "{n},{m:.4},{s:.4}");
        }
        out
    }
}

/// Fits on the first `n` rows of one large draw per seed, so smaller
/// datasets are prefixes of larger ones.
pub fn sample_size_curve(preset: &Preset, dims: BasisDims, sizes: &[usize], seeds: &[u64]) -> Result<SampleSizeCurve, HarnessError> {
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let mut r2 = vec![Vec::new(); sizes.len()];
    for &seed in seeds {
        let full = basis_dataset(dims, largest, seed)?;
        for (i, &n) in sizes.iter().enumerate() {
            let table = full.head(n);
            r2[i].push(score_basis(&table, dims, Model::Joint, preset, seed)?.r2_z);
        }
    }
    Ok(SampleSizeCurve {
        sizes: sizes.to_vec(),
        seeds: seeds.to_vec(),
        r2,
    })
}

/// Generating graph and samples (latents included) for one seed.
pub fn hierarchy_dataset(spec: &GraphSpec, preset: &Preset, n: usize) -> Result<SampleTable, HarnessError> {
    let instance = ScmInstance::generate(spec, &preset.generator)?;
    Ok(sample_scm(&instance, n, sample_seed(spec.seed))?)
}

fn observed_active(table: &SampleTable, ids: &[String]) -> Result<Vec<ActiveVariable>, HarnessError> {
    let mut ids = ids.to_vec();
    ids.sort();
    ids.iter()
        .map(|id| {
            Ok(ActiveVariable {
                id: id.clone(),
                samples: table.require(id)?.to_owned(),
                origin: Origin::Observed,
            })
        })
        .collect()
}

/// Pairwise scores among the first-round parent estimates, labelled by the
/// observed variable each estimate was fitted for.
pub fn first_round_matrix(table: &SampleTable, observed: &[String], preset: &Preset, seed: u64) -> Result<PredictionMatrix, HarnessError> {
    let active = observed_active(table, observed)?;
    let cfg = crate::search::SearchConfig {
        seed,
        ..preset.search.clone()
    };
    let stage = estimate_parents(&active, &cfg, 1, &FitCounter::default())?;
    if let Some((id, msg)) = stage.skipped.first() {
        return Err(HarnessError::Experiment(format!("estimate for {id} failed: {msg}")));
    }
    let vars: Vec<(String, ArrayView2<f64>)> = stage
        .table
        .estimates
        .values()
        .map(|e| (e.source.clone(), e.samples.view()))
        .collect();
    Ok(pairwise_matrix(&vars, &cfg.r2)?)
}

/// First-round matrices over seeds for one reference graph.
pub fn pairwise_table(
    graph: fn(u64) -> GraphSpec,
    preset: &Preset,
    seeds: &[u64],
) -> Result<(Vec<PredictionMatrix>, MatrixSummary), HarnessError> {
    let mut matrices = Vec::new();
    for &seed in seeds {
        let spec = graph(seed);
        let table = hierarchy_dataset(&spec, preset, preset.n_samples)?;
        matrices.push(first_round_matrix(&table, &spec.observed_ids(), preset, seed)?);
    }
    let summary = summarize_matrices(&matrices);
    Ok((matrices, summary))
}

/// Outcome of one search on synthetic data with known structure.
#[derive(Debug, Clone)]
pub struct StructureRun {
    pub seed: u64,
    pub matched: bool,
    pub converged: bool,
    pub discovery: Discovery,
    /// Recovered latent predicting its true counterpart, keyed by true id.
    pub latent_r2: BTreeMap<String, f64>,
}

pub fn structure_run(spec: &GraphSpec, preset: &Preset, seed: u64) -> Result<StructureRun, HarnessError> {
    let table = hierarchy_dataset(spec, preset, preset.n_samples)?;
    let cfg = crate::search::SearchConfig {
        seed,
        ..preset.search.clone()
    };
    let (discovery, converged) = match discover(&table, &spec.observed_ids(), &cfg) {
        Ok(d) => (d, true),
        Err(SearchError::NotConverged { partial, .. }) => (*partial, false),
        Err(e) => return Err(e.into()),
    };
    let mut latent_r2 = BTreeMap::new();
    for (mine, truth) in discovery.graph.latent_matching(spec) {
        let node = discovery.graph.node(&mine).expect("matched node exists");
        let score = kernel_r2(node.samples.view(), table.require(&truth)?, &R2Options::default())?;
        latent_r2.insert(truth, score.value);
    }
    Ok(StructureRun {
        seed,
        matched: converged && discovery.graph.matches_spec(spec),
        converged,
        discovery,
        latent_r2,
    })
}

/// Structure recovery summary for several graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub graph: String,
    pub seed: u64,
    pub matched: bool,
    pub converged: bool,
    pub fits: usize,
    pub iterations: usize,
    pub latent_r2: BTreeMap<String, f64>,
}

impl From<(&str, &StructureRun)> for RecoveryRow {
    fn from((graph, run): (&str, &StructureRun)) -> Self {
        RecoveryRow {
            graph: graph.to_string(),
            seed: run.seed,
            matched: run.matched,
            converged: run.converged,
            fits: run.discovery.total_fits(),
            iterations: run.discovery.iterations.len(),
            latent_r2: run.latent_r2.clone(),
        }
    }
}

/// `graph,latent,mean±std,runs` over the seeds in which the latent was found,
/// followed by one `graph,matched,k/n` line per graph.
pub fn recovery_csv(rows: &[RecoveryRow]) -> String {
    let mut per: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    let mut matched: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in rows {
        for (latent, v) in &r.latent_r2 {
            per.entry((&r.graph, latent)).or_default().push(*v);
        }
        let m = matched.entry(&r.graph).or_default();
        m.0 += usize::from(r.matched);
        m.1 += 1;
    }
    let mut out = String::from("graph,latent,r2,runs\n");
    for ((g, l), v) in &per {
        let _ = writeln!(out, "{g},{l},{},{}", format_mean_std(v), v.len());
    }
    for (g, (k, n)) in matched {
        let _ = writeln!(out, "{g},matched,{k}/{n},{n}");
    }
    out
}
