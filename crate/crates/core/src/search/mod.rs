//! Iterative active-set search for latent hierarchies.
//!
//! Each iteration fits a two-view model per active variable to estimate its
//! parents, merges estimates that predict each other, splits estimates that
//! are concatenations of others, groups co-parents, rejects substitutions
//! that would put a variable and its descendant into the active set, and
//! finally swaps children for their estimated parents.

mod graph;
mod stages;

use stages::prune_independent;

pub use graph::{spec_canonical_form as spec_canonical, DiscoveredGraph, GraphEdge, GraphNode};
pub use stages::{
    close_dependent_pair, cluster_spouses, detect_directed_paths, estimate_parents, merge_duplicates,
    resolve_supervariables, update_active_set, ActiveUpdate, MergeRecord, PairClosure, PathTest, StageOne,
    SupervariableAction, SupervariableRecord,
};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisConfig, BasisError, EncoderInput};
use crate::eval::{EvalError, PredictionMatrix, R2Options, DEFAULT_EPS, DEFAULT_TAU};
use crate::scm::SampleTable;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search config: {0}")]
    Config(String),
    #[error("observed variable {0} is not in the table")]
    UnknownVariable(String),
    #[error("need at least {min} samples, table has {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("no convergence after {iterations} iterations; {} variables still active", .active.len())]
    NotConverged {
        iterations: usize,
        active: Vec<String>,
        partial: Box<Discovery>,
    },
    #[error("two-view fit in iteration {iteration} for {context}: {source}")]
    Fit {
        iteration: usize,
        context: String,
        #[source]
        source: BasisError,
    },
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("log output: {0}")]
    Log(String),
}

/// How the shared-latent width of each parent-estimation fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LatentDimRule {
    /// `d_ẑ = d_v1 − exogenous_dim`, `d_ŝ1 = exogenous_dim`, and the second
    /// view keeps `d_v2 − d_ẑ` private dims.
    ExogenousResidual,
    /// Fixed `d_ẑ`; the private part of `v1` takes the remaining width.
    Fixed { d_z: usize },
    /// Try every `d_ẑ ≤ max` and keep the smallest within `tolerance` of the
    /// best reconstruction loss.
    Sweep { max: usize, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Network shape and training schedule; dims are filled in per fit.
    pub basis: BasisConfig,
    pub latent_dims: LatentDimRule,
    /// Encoder layout of the parent-estimation fits.
    pub parent_encoder: EncoderInput,
    pub exogenous_dim: usize,
    pub tau: f64,
    pub eps: f64,
    /// Defaults to twice the number of observed variables.
    pub max_iterations: Option<usize>,
    pub min_samples: usize,
    pub r2: R2Options,
    pub seed: u64,
    /// Largest subset size searched exhaustively when splitting an estimate.
    pub exhaustive_subset_max: usize,
    /// Keep a dominating estimate that no subset explains when it was merged
    /// from several children instead of suppressing it.
    pub keep_shared_dominators: bool,
    /// When exactly two dependent variables remain and no substitution
    /// happened, join them under one common parent instead of iterating on.
    pub close_final_pair: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            basis: BasisConfig::default(),
            latent_dims: LatentDimRule::ExogenousResidual,
            parent_encoder: EncoderInput::CrossView,
            exogenous_dim: 2,
            tau: DEFAULT_TAU,
            eps: DEFAULT_EPS,
            max_iterations: None,
            min_samples: 200,
            r2: R2Options::default(),
            seed: 0,
            exhaustive_subset_max: 3,
            keep_shared_dominators: true,
            close_final_pair: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(SearchError::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(SearchError::Config(format!("eps {} outside (0, 1)", self.eps)));
        }
        if self.basis.steps == 0 {
            return Err(SearchError::Config("basis steps must be positive".into()));
        }
        Ok(())
    }
}

/// Where an active variable came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Observed,
    Estimated { iteration: usize, children: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveVariable {
    pub id: String,
    pub samples: Array2<f64>,
    pub origin: Origin,
}

impl ActiveVariable {
    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

/// One parent estimate produced in stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub id: String,
    pub samples: Array2<f64>,
    /// Active variable whose fit produced this estimate.
    pub source: String,
    /// Estimates merged into this one (including itself).
    pub members: Vec<String>,
}

/// Estimated-parent bookkeeping for one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParentTable {
    /// Active child id → ids of its estimated parents.
    pub entries: BTreeMap<String, Vec<String>>,
    pub estimates: BTreeMap<String, Estimate>,
    /// Co-parent clusters and the union of their children.
    pub joint: Vec<JointEntry>,
    pub suppressed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointEntry {
    pub parents: Vec<String>,
    pub children: Vec<String>,
}

impl ParentTable {
    /// Children currently mapped to `estimate`.
    pub fn children_of(&self, estimate: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, ps)| ps.iter().any(|p| p == estimate))
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn samples(&self, id: &str) -> ArrayView2<'_, f64> {
        self.estimates[id].samples.view()
    }
}

/// Counts two-view fits, split by stage.
#[derive(Debug, Default)]
pub struct FitCounter {
    parent_fits: AtomicUsize,
    path_fits: AtomicUsize,
}

impl FitCounter {
    pub fn parent_fits(&self) -> usize {
        self.parent_fits.load(Ordering::Relaxed)
    }

    pub fn path_fits(&self) -> usize {
        self.path_fits.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.parent_fits() + self.path_fits()
    }

    pub(crate) fn add_parent(&self, k: usize) {
        self.parent_fits.fetch_add(k, Ordering::Relaxed);
    }

    pub(crate) fn add_path(&self, k: usize) {
        self.path_fits.fetch_add(k, Ordering::Relaxed);
    }
}

/// Audit record of one iteration, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub active_before: Vec<String>,
    pub estimates: Vec<EstimateLog>,
    pub skipped: Vec<(String, String)>,
    pub matrix: Option<PredictionMatrix>,
    pub merges: Vec<MergeRecord>,
    pub supervariables: Vec<SupervariableRecord>,
    pub clusters: Vec<JointEntry>,
    pub path_tests: Vec<PathTest>,
    pub suppressed: Vec<String>,
    pub substituted: Vec<JointEntry>,
    pub pruned: Vec<(String, f64)>,
    pub closure: Option<PairClosure>,
    pub active_after: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateLog {
    pub id: String,
    pub source: String,
    pub d_z: usize,
    pub final_loss: f64,
}

/// Result of a search run.
#[derive(Debug, Clone)]
pub struct Discovery {
    pub graph: DiscoveredGraph,
    pub iterations: Vec<IterationLog>,
    pub parent_fits: usize,
    pub path_fits: usize,
}

impl Discovery {
    pub fn total_fits(&self) -> usize {
        self.parent_fits + self.path_fits
    }

    /// Active sets before each iteration, for schedule checks.
    pub fn schedule(&self) -> Vec<Vec<String>> {
        self.iterations.iter().map(|l| l.active_before.clone()).collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), SearchError> {
        for log in &self.iterations {
            let line = serde_json::to_string(log).map_err(|e| SearchError::Log(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| SearchError::Log(e.to_string()))?;
        }
        Ok(())
    }
}

/// Scores behind a substitution: the weakest merge link of each parent,
/// the explaining score of any split it resolved, and the strongest
/// directed-path test score.
fn provenance(entry: &JointEntry, log: &IterationLog) -> BTreeMap<String, f64> {
    let mut scores = BTreeMap::new();
    for p in &entry.parents {
        if let Some(m) = log.merges.iter().find(|m| &m.representative == p) {
            scores.insert(format!("merge:{p}"), m.min_score);
        }
    }
    for sv in &log.supervariables {
        if let Some(score) = sv.score {
            if sv.subset.iter().any(|s| entry.parents.contains(s)) {
                scores.insert(format!("split:{}", sv.estimate), score);
            }
        }
    }
    if let Some(t) = log.path_tests.iter().find(|t| t.parents == entry.parents) {
        let max = t.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            scores.insert("path_test".into(), max);
        }
    }
    scores
}

/// Runs the search on the listed observed variables of `table`.
pub fn discover(table: &SampleTable, observed: &[String], cfg: &SearchConfig) -> Result<Discovery, SearchError> {
    cfg.validate()?;
    if table.n_samples() < cfg.min_samples {
        return Err(SearchError::TooFewSamples {
            n: table.n_samples(),
            min: cfg.min_samples,
        });
    }
    let mut ids: Vec<String> = observed.to_vec();
    ids.sort();
    ids.dedup();
    let mut active = Vec::with_capacity(ids.len());
    for id in &ids {
        let samples = table
            .get(id)
            .ok_or_else(|| SearchError::UnknownVariable(id.clone()))?
            .to_owned();
        active.push(ActiveVariable {
            id: id.clone(),
            samples,
            origin: Origin::Observed,
        });
    }

    let mut graph = DiscoveredGraph::with_observed(&active);
    let counter = FitCounter::default();
    let cap = cfg.max_iterations.unwrap_or(2 * ids.len()).max(1);
    let mut logs = Vec::new();
    let mut iteration = 0;

    while !active.is_empty() {
        iteration += 1;
        if iteration > cap {
            graph.finalize();
            let remaining: Vec<String> = active.iter().map(|a| a.id.clone()).collect();
            return Err(SearchError::NotConverged {
                iterations: cap,
                active: remaining,
                partial: Box::new(Discovery {
                    graph,
                    iterations: logs,
                    parent_fits: counter.parent_fits(),
                    path_fits: counter.path_fits(),
                }),
            });
        }
        let active_before: Vec<String> = active.iter().map(|a| a.id.clone()).collect();
        let mut log = IterationLog {
            iteration,
            active_before: active_before.clone(),
            estimates: Vec::new(),
            skipped: Vec::new(),
            matrix: None,
            merges: Vec::new(),
            supervariables: Vec::new(),
            clusters: Vec::new(),
            path_tests: Vec::new(),
            suppressed: Vec::new(),
            substituted: Vec::new(),
            pruned: Vec::new(),
            closure: None,
            active_after: Vec::new(),
        };

        let stage1 = estimate_parents(&active, cfg, iteration, &counter)?;
        log.estimates = stage1.logs;
        log.skipped = stage1.skipped;
        let mut table = stage1.table;

        let matrix = if table.estimates.len() >= 2 {
            let vars: Vec<(String, ArrayView2<f64>)> = table
                .estimates
                .values()
                .map(|e| (e.id.clone(), e.samples.view()))
                .collect();
            Some(crate::eval::pairwise_matrix(&vars, &cfg.r2)?)
        } else {
            None
        };

        if let Some(m) = &matrix {
            let (merged, merges) = merge_duplicates(table, m, cfg.tau);
            table = merged;
            log.merges = merges;
            let (resolved, records) = resolve_supervariables(table, m, cfg)?;
            table = resolved;
            log.supervariables = records;
        }
        log.matrix = matrix;

        table.joint = cluster_spouses(&table);
        log.clusters = table.joint.clone();

        let tests = detect_directed_paths(&table, &active, cfg, iteration, &counter)?;
        for t in &tests {
            if t.suppressed {
                table.suppressed.extend(t.parents.iter().cloned());
            }
        }
        log.path_tests = tests;
        log.suppressed = table.suppressed.iter().cloned().collect();

        let update = update_active_set(&mut active, &table, cfg, iteration)?;
        for entry in &update.substituted {
            graph.add_cluster(entry, &table, iteration, &provenance(entry, &log));
        }
        log.substituted = update.substituted;
        log.pruned.extend(update.pruned);
        if cfg.close_final_pair && log.substituted.is_empty() && active_before.len() == 2 && active.len() == 2 {
            if let Some(closure) = close_dependent_pair(&mut active, &mut table, cfg, iteration)? {
                let mut scores = BTreeMap::new();
                scores.insert("pair_dependence".to_string(), closure.dependence);
                graph.add_cluster(&closure.entry, &table, iteration, &scores);
                log.substituted.push(closure.entry.clone());
                log.pruned.extend(prune_independent(&mut active, cfg)?);
                log.closure = Some(closure);
            }
        }
        log.active_after = active.iter().map(|a| a.id.clone()).collect();
        logs.push(log);
    }

    graph.finalize();
    Ok(Discovery {
        graph,
        iterations: logs,
        parent_fits: counter.parent_fits(),
        path_fits: counter.path_fits(),
    })
}
