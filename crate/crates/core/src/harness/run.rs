use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode, Target};
use super::experiments::{
    basis_dataset, hierarchy_dataset, identifiability_table, pairwise_table, recovery_csv, sample_size_curve,
    structure_run, BasisDims, RecoveryRow, TABLE1_DIMS,
};
use super::ingest::{grouping_for_ids, ingest_csv};
use super::{graphs, HarnessError, Preset};
use crate::basis::{fit_basis, sweep_latent_dim, BasisConfig};
use crate::eval::{kernel_r2, pairwise_matrix, summarize_matrices, R2Options};
use crate::io::{create_dir, write_json, write_text};
use crate::scm::{GraphSpec, SampleTable};
use crate::search::{discover, Discovery, SearchConfig, SearchError};
use crate::stats::format_mean_std;

const DEFAULT_DIMS: BasisDims = (2, 2, 2);

/// Files written by a run, keyed by path relative to the output directory,
/// with the SHA-256 of their contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(skip)]
    root: PathBuf,
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Artifacts {
    fn new(root: &Path) -> Self {
        Artifacts {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    fn register(&mut self, rel: &str) -> Result<(), HarnessError> {
        let bytes = std::fs::read(self.root.join(rel)).map_err(|e| HarnessError::Experiment(format!("{rel}: {e}")))?;
        self.files.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn path(&self, rel: &str) -> Result<PathBuf, HarnessError> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            create_dir(parent)?;
        }
        Ok(p)
    }

    fn text(&mut self, rel: &str, content: &str) -> Result<(), HarnessError> {
        write_text(&self.path(rel)?, content)?;
        self.register(rel)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), HarnessError> {
        write_json(&self.path(rel)?, value)?;
        self.register(rel)
    }

    fn table(&mut self, rel_base: &str, table: &SampleTable) -> Result<(), HarnessError> {
        table.write(&self.path(rel_base)?)?;
        self.register(&format!("{rel_base}.f64"))?;
        self.register(&format!("{rel_base}.json"))
    }

    fn merge(&mut self, other: Artifacts) {
        self.files.extend(other.files);
    }
}

/// Written next to the artifacts; re-running its config reproduces them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    pub manifest: Manifest,
    /// Human-readable remarks (dropped rows, non-converged seeds, ...).
    pub notes: Vec<String>,
    /// Seeds whose search stopped at the iteration cap.
    pub not_converged: Vec<u64>,
}

pub fn config_hash(cfg: &ExperimentConfig, preset: &Preset) -> String {
    let bytes = serde_json::to_vec(&(cfg, preset)).expect("config serialises");
    sha256_hex(&bytes)
}

fn spec_for(graph: &str, seed: u64) -> Result<GraphSpec, HarnessError> {
    if let Some(spec) = graphs::by_name(graph, seed) {
        return Ok(spec);
    }
    let mut spec: GraphSpec = crate::io::read_json(Path::new(graph))?;
    spec.seed = seed;
    Ok(spec)
}

struct Loaded {
    table: SampleTable,
    truth: Option<GraphSpec>,
    note: Option<String>,
}

fn load(cfg: &ExperimentConfig, preset: &Preset, seed: u64) -> Result<Option<Loaded>, HarnessError> {
    if let Some(data) = &cfg.data {
        if data.extension().is_some_and(|e| e == "csv") {
            let grouping = if cfg.grouping.is_empty() {
                grouping_for_ids(&csv_ids(data)?)
            } else {
                cfg.grouping.clone()
            };
            let ing = ingest_csv(data, &grouping)?;
            let note = (ing.dropped_rows > 0 || !ing.ignored_columns.is_empty()).then(|| {
                format!(
                    "dropped {} rows; ignored columns {:?}",
                    ing.dropped_rows, ing.ignored_columns
                )
            });
            return Ok(Some(Loaded {
                table: ing.table,
                truth: None,
                note,
            }));
        }
        return Ok(Some(Loaded {
            table: SampleTable::read(data)?,
            truth: None,
            note: None,
        }));
    }
    if let Some(g) = &cfg.graph {
        let spec = spec_for(g, seed)?;
        let table = hierarchy_dataset(&spec, preset, preset.n_samples)?;
        return Ok(Some(Loaded {
            table,
            truth: Some(spec),
            note: None,
        }));
    }
    Ok(None)
}

/// Variable ids implied by `<id>_<k>` headers.
fn csv_ids(path: &Path) -> Result<Vec<String>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::Ingest(e.to_string()))?;
    let mut ids: Vec<String> = reader
        .headers()
        .map_err(|e| HarnessError::Ingest(e.to_string()))?
        .iter()
        .map(|h| match h.rsplit_once('_') {
            Some((id, k)) if k.chars().all(|c| c.is_ascii_digit()) => id.to_string(),
            _ => h.to_string(),
        })
        .collect();
    ids.dedup();
    Ok(ids)
}

fn views_of(cfg: &ExperimentConfig, table: &SampleTable) -> Result<(ndarray::Array2<f64>, ndarray::Array2<f64>), HarnessError> {
    let (a, b) = match &cfg.views {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (vec!["v1".to_string()], vec!["v2".to_string()]),
    };
    let a: Vec<&str> = a.iter().map(String::as_str).collect();
    let b: Vec<&str> = b.iter().map(String::as_str).collect();
    let view = |ids: &[&str]| {
        table.concat(ids).map_err(|e| HarnessError::Config {
            pointer: "/views".into(),
            message: format!("{e}; set `views` to the variable ids of each view"),
        })
    };
    Ok((view(&a)?, view(&b)?))
}

fn basis_source(cfg: &ExperimentConfig, preset: &Preset, seed: u64) -> Result<(SampleTable, Option<String>), HarnessError> {
    match load(cfg, preset, seed)? {
        Some(l) => Ok((l.table, l.note)),
        None => Ok((basis_dataset(cfg.dims.unwrap_or(DEFAULT_DIMS), preset.n_samples, seed)?, None)),
    }
}

fn two_view_config(cfg: &ExperimentConfig, preset: &Preset, seed: u64, d_v1: usize, d_v2: usize) -> BasisConfig {
    let (dz, ds1, ds2) = cfg.dims.unwrap_or(DEFAULT_DIMS);
    BasisConfig {
        seed,
        ..preset.basis.clone()
    }
    .with_dims(d_v1, d_v2, dz, ds1, ds2)
}

#[derive(Serialize)]
struct FitReport {
    final_loss: f64,
    r2_z: Option<f64>,
    r2_s1: Option<f64>,
}

#[derive(Serialize)]
struct DiscoverReport {
    converged: bool,
    matched: Option<bool>,
    parent_fits: usize,
    path_fits: usize,
    iterations: usize,
    latent_r2: BTreeMap<String, f64>,
}

fn write_discovery(art: &mut Artifacts, dir: &str, d: &Discovery) -> Result<(), HarnessError> {
    art.text(&format!("{dir}/graph.dot"), &d.graph.to_dot())?;
    art.json(&format!("{dir}/graph.json"), &d.graph.to_json())?;
    let mut lines = Vec::new();
    d.write_jsonl(&mut lines)?;
    art.text(&format!("{dir}/iterations.jsonl"), &String::from_utf8_lossy(&lines))
}

struct SeedOutput {
    artifacts: Artifacts,
    notes: Vec<String>,
    not_converged: bool,
    score: Option<f64>,
    matrix: Option<crate::eval::PredictionMatrix>,
}

fn run_seed(cfg: &ExperimentConfig, preset: &Preset, root: &Path, seed: u64) -> Result<SeedOutput, HarnessError> {
    let dir = format!("seed-{seed}");
    let mut out = SeedOutput {
        artifacts: Artifacts::new(root),
        notes: Vec::new(),
        not_converged: false,
        score: None,
        matrix: None,
    };
    let art = &mut out.artifacts;
    match cfg.mode {
        Mode::Gen => {
            if let Some(g) = &cfg.graph {
                let spec = spec_for(g, seed)?;
                art.json(&format!("{dir}/spec.json"), &spec)?;
                art.table(&format!("{dir}/table"), &hierarchy_dataset(&spec, preset, preset.n_samples)?)?;
            } else {
                let dims = cfg.dims.unwrap_or(DEFAULT_DIMS);
                art.table(&format!("{dir}/table"), &basis_dataset(dims, preset.n_samples, seed)?)?;
            }
        }
        Mode::FitBasis => {
            let (table, note) = basis_source(cfg, preset, seed)?;
            out.notes.extend(note);
            let (v1, v2) = views_of(cfg, &table)?;
            let bc = two_view_config(cfg, preset, seed, v1.ncols(), v2.ncols());
            let fit = fit_basis(v1.view(), v2.view(), &bc)?;
            fit.save(&art.path(&format!("{dir}/model"))?)?;
            art.register(&format!("{dir}/model.f64"))?;
            art.register(&format!("{dir}/model.json"))?;
            let latent = SampleTable::from_blocks(vec![("z_hat".into(), fit.z_samples.clone())])?;
            art.table(&format!("{dir}/latent"), &latent)?;
            let opts = R2Options::default();
            let score = |truth: &str, forward: bool| -> Result<Option<f64>, HarnessError> {
                let Some(t) = table.get(truth) else { return Ok(None) };
                let z = fit.z_samples.view();
                let s = if forward { kernel_r2(z, t, &opts)? } else { kernel_r2(t, z, &opts)? };
                Ok(Some(s.value))
            };
            let report = FitReport {
                final_loss: fit.final_loss,
                r2_z: score("z", true)?,
                r2_s1: score("s1", false)?,
            };
            out.score = report.r2_z;
            art.json(&format!("{dir}/report.json"), &report)?;
        }
        Mode::SweepBasis => {
            let (table, note) = basis_source(cfg, preset, seed)?;
            out.notes.extend(note);
            let (v1, v2) = views_of(cfg, &table)?;
            let bc = two_view_config(cfg, preset, seed, v1.ncols(), v2.ncols());
            let sweep = sweep_latent_dim(v1.view(), v2.view(), &bc, cfg.d_max, cfg.tolerance)?;
            out.score = Some(sweep.chosen as f64);
            art.json(&format!("{dir}/sweep.json"), &sweep)?;
        }
        Mode::Discover => {
            let loaded = load(cfg, preset, seed)?
                .ok_or_else(|| HarnessError::Experiment("discover needs `graph` or `data`".into()))?;
            out.notes.extend(loaded.note.clone());
            let observed = analysed_ids(cfg, &loaded);
            let search = SearchConfig {
                seed,
                ..preset.search.clone()
            };
            let (d, converged) = match discover(&loaded.table, &observed, &search) {
                Ok(d) => (d, true),
                Err(SearchError::NotConverged { partial, .. }) => (*partial, false),
                Err(e) => return Err(e.into()),
            };
            write_discovery(art, &dir, &d)?;
            let mut latent_r2 = BTreeMap::new();
            let matched = match &loaded.truth {
                Some(spec) => {
                    for (mine, truth) in d.graph.latent_matching(spec) {
                        let node = d.graph.node(&mine).expect("matched node");
                        let s = kernel_r2(node.samples.view(), loaded.table.require(&truth)?, &R2Options::default())?;
                        latent_r2.insert(truth, s.value);
                    }
                    Some(converged && d.graph.matches_spec(spec))
                }
                None => None,
            };
            if !converged {
                out.not_converged = true;
                out.notes.push(format!("seed {seed}: search hit the iteration cap; partial graph written"));
            }
            let pruned: Vec<String> = d
                .iterations
                .iter()
                .flat_map(|l| l.pruned.iter())
                .filter(|(id, _)| observed.contains(id))
                .map(|(id, s)| format!("{id} ({s:.3})"))
                .collect();
            if !pruned.is_empty() {
                out.notes.push(format!("seed {seed}: observed variables pruned as independent: {}", pruned.join(", ")));
            }
            art.json(
                &format!("{dir}/result.json"),
                &DiscoverReport {
                    converged,
                    matched,
                    parent_fits: d.parent_fits,
                    path_fits: d.path_fits,
                    iterations: d.iterations.len(),
                    latent_r2,
                },
            )?;
        }
        Mode::EvalMatrix => {
            let loaded = load(cfg, preset, seed)?
                .ok_or_else(|| HarnessError::Experiment("eval-matrix needs `graph` or `data`".into()))?;
            out.notes.extend(loaded.note.clone());
            let ids = analysed_ids(cfg, &loaded);
            let views = ids
                .iter()
                .map(|id| Ok((id.clone(), loaded.table.require(id)?)))
                .collect::<Result<Vec<(String, ArrayView2<f64>)>, HarnessError>>()?;
            let opts = R2Options {
                seed,
                ..preset.search.r2.clone()
            };
            let m = pairwise_matrix(&views, &opts)?;
            art.text(&format!("{dir}/matrix.csv"), &m.to_csv())?;
            art.json(&format!("{dir}/matrix.json"), &m)?;
            out.matrix = Some(m);
        }
        Mode::Reproduce => unreachable!("handled by run"),
    }
    Ok(out)
}

/// Variables named in the config, else the observed variables of a
/// generated dataset, else every variable in the table.
fn analysed_ids(cfg: &ExperimentConfig, loaded: &Loaded) -> Vec<String> {
    if !cfg.observed.is_empty() {
        cfg.observed.clone()
    } else if let Some(spec) = &loaded.truth {
        spec.observed_ids()
    } else {
        loaded.table.ids()
    }
}

fn reproduce(target: Target, cfg: &ExperimentConfig, preset: &Preset, art: &mut Artifacts) -> Result<Vec<String>, HarnessError> {
    let seeds = &cfg.seeds;
    let mut notes = Vec::new();
    match target {
        Target::Table1 => {
            let dims: Vec<BasisDims> = match cfg.dims {
                Some(d) => vec![d],
                None => TABLE1_DIMS.to_vec(),
            };
            let t = identifiability_table(preset, &dims, seeds)?;
            art.text("table1.csv", &t.to_csv())?;
            art.json("table1.json", &t)?;
        }
        Target::Table2 => {
            let (matrices, summary) = pairwise_table(graphs::v_structure, preset, seeds)?;
            for (seed, m) in seeds.iter().zip(&matrices) {
                art.text(&format!("seed-{seed}/matrix.csv"), &m.to_csv())?;
            }
            art.text("table2.csv", &summary.to_csv())?;
            art.json("table2.json", &summary)?;
        }
        Target::Fig4 => {
            let mut rows = Vec::new();
            for (name, graph) in [
                ("balanced", graphs::balanced_tree as fn(u64) -> GraphSpec),
                ("v-structure", graphs::v_structure),
                ("unbalanced", graphs::unbalanced_tree),
            ] {
                for &seed in seeds {
                    let run = structure_run(&graph(seed), preset, seed)?;
                    write_discovery(art, &format!("{name}/seed-{seed}"), &run.discovery)?;
                    if !run.converged {
                        notes.push(format!("{name} seed {seed}: iteration cap reached"));
                    }
                    rows.push(RecoveryRow::from((name, &run)));
                }
            }
            art.text("fig4.csv", &recovery_csv(&rows))?;
            art.json("fig4.json", &rows)?;
        }
        Target::Samplesize => {
            let curve = sample_size_curve(preset, cfg.dims.unwrap_or(DEFAULT_DIMS), &cfg.sample_sizes, seeds)?;
            art.text("samplesize.csv", &curve.to_csv())?;
            art.json("samplesize.json", &curve)?;
        }
    }
    Ok(notes)
}

/// Executes a validated config and writes its artifacts plus `manifest.json`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let preset = cfg.resolved_preset()?;
    let root = cfg.out.clone();
    create_dir(&root)?;
    let mut artifacts = Artifacts::new(&root);
    let mut notes = Vec::new();
    let mut not_converged = Vec::new();

    if cfg.mode == Mode::Reproduce {
        let target = cfg.target.expect("validated");
        notes.extend(reproduce(target, cfg, &preset, &mut artifacts)?);
    } else {
        let outputs = crate::par::map_indexed(cfg.seeds.len(), |i| run_seed(cfg, &preset, &root, cfg.seeds[i]));
        let mut scores = Vec::new();
        let mut matrices = Vec::new();
        for (seed, o) in cfg.seeds.iter().zip(outputs) {
            let o = o?;
            artifacts.merge(o.artifacts);
            notes.extend(o.notes);
            if o.not_converged {
                not_converged.push(*seed);
            }
            scores.extend(o.score);
            matrices.extend(o.matrix);
        }
        if !scores.is_empty() && cfg.mode == Mode::FitBasis {
            artifacts.text("summary.csv", &format!("metric,value\nr2_z,{}\n", format_mean_std(&scores)))?;
        }
        if !matrices.is_empty() {
            artifacts.text("summary.csv", &summarize_matrices(&matrices).to_csv())?;
        }
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg, &preset),
        config: cfg.clone(),
        preset,
        seeds: cfg.seeds.clone(),
        artifacts: artifacts.files.clone(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(RunSummary {
        out: root,
        manifest,
        notes,
        not_converged,
    })
}

/// Re-executes the config stored in a manifest into `out` and lists the
/// artifacts whose contents differ from the recorded hashes.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<(RunSummary, Vec<String>), HarnessError> {
    let recorded: Manifest = crate::io::read_json(manifest_path)?;
    let cfg = ExperimentConfig {
        out: out.to_path_buf(),
        ..recorded.config.clone()
    };
    let summary = run(&cfg)?;
    let mut differing: Vec<String> = recorded
        .artifacts
        .iter()
        .filter(|(k, v)| summary.manifest.artifacts.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    differing.extend(
        summary
            .manifest
            .artifacts
            .keys()
            .filter(|k| !recorded.artifacts.contains_key(*k))
            .cloned(),
    );
    Ok((summary, differing))
}
