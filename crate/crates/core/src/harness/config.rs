use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiments::BasisDims;
use super::{preset, HarnessError, Preset};
use crate::basis::BasisConfig;
use crate::scm::GeneratorConfig;
use crate::search::SearchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Gen,
    #[default]
    FitBasis,
    SweepBasis,
    Discover,
    EvalMatrix,
    Reproduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Table1,
    Table2,
    Fig4,
    Samplesize,
}

/// Everything a run needs. Fields left out of a config file take their
/// defaults; `basis`, `search` and `generator` replace the preset's values
/// when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub target: Option<Target>,
    pub preset: String,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub tau: Option<f64>,
    pub eps: Option<f64>,
    pub n_samples: Option<usize>,
    /// Reference graph name or path to a graph spec JSON file.
    pub graph: Option<String>,
    /// Sample table (`<base>` of a `.f64`/`.json` pair) or a `.csv` file.
    pub data: Option<PathBuf>,
    /// Column prefix → variable id, for CSV input.
    pub grouping: BTreeMap<String, String>,
    /// Variables to analyse; defaults to the observed or all variables.
    pub observed: Vec<String>,
    /// Variable ids forming the first and second view of a two-view fit.
    pub views: Option<(Vec<String>, Vec<String>)>,
    /// Shared and private widths of two-view fits and generated data.
    pub dims: Option<BasisDims>,
    /// Largest shared width tried by the sweep.
    pub d_max: usize,
    /// Relative loss tolerance of the sweep.
    pub tolerance: f64,
    pub sample_sizes: Vec<usize>,
    pub basis: Option<BasisConfig>,
    pub search: Option<SearchConfig>,
    pub generator: Option<GeneratorConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::default(),
            target: None,
            preset: "basis-desk".into(),
            seeds: vec![0],
            out: PathBuf::from("out"),
            tau: None,
            eps: None,
            n_samples: None,
            graph: None,
            data: None,
            grouping: BTreeMap::new(),
            observed: Vec::new(),
            views: None,
            dims: None,
            d_max: 4,
            tolerance: 0.05,
            sample_sizes: vec![1000, 2000, 5000, 10_000, 16_000],
            basis: None,
            search: None,
            generator: None,
        }
    }
}

fn invalid(pointer: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses a config, reporting the JSON pointer of the offending field.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = e
                .path()
                .iter()
                .map(|seg| match seg {
                    serde_path_to_error::Segment::Seq { index } => format!("/{index}"),
                    serde_path_to_error::Segment::Map { key } => format!("/{key}"),
                    serde_path_to_error::Segment::Enum { variant } => format!("/{variant}"),
                    serde_path_to_error::Segment::Unknown => "/?".into(),
                })
                .collect::<String>();
            invalid(&pointer, e.inner().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(invalid("/seeds", "at least one seed is required"));
        }
        for (ptr, v) in [("/tau", self.tau), ("/eps", self.eps)] {
            if let Some(v) = v {
                if !(v > 0.0 && v < 1.0) {
                    return Err(invalid(ptr, format!("{v} is outside (0, 1)")));
                }
            }
        }
        if preset(&self.preset).is_none() {
            return Err(invalid("/preset", format!("unknown preset {:?}", self.preset)));
        }
        if self.mode == Mode::Reproduce && self.target.is_none() {
            return Err(invalid("/target", "reproduce needs a target"));
        }
        if let Some(data) = &self.data {
            let exists = if data.extension().is_some_and(|e| e == "csv") {
                data.exists()
            } else {
                data.with_extension("json").exists() && data.with_extension("f64").exists()
            };
            if !exists {
                return Err(invalid("/data", format!("{} not found", data.display())));
            }
        }
        if let Some(g) = &self.graph {
            if super::graphs::by_name(g, 0).is_none() && !Path::new(g).exists() {
                return Err(invalid("/graph", format!("{g:?} is neither a reference graph nor a file")));
            }
        }
        if let Some((a, b)) = &self.views {
            if a.is_empty() || b.is_empty() {
                return Err(invalid("/views", "both views need at least one variable"));
            }
        }
        if self.n_samples == Some(0) {
            return Err(invalid("/n_samples", "must be positive"));
        }
        Ok(())
    }

    /// Preset with this config's overrides applied.
    pub fn resolved_preset(&self) -> Result<Preset, HarnessError> {
        let mut p = preset(&self.preset).ok_or_else(|| invalid("/preset", format!("unknown preset {:?}", self.preset)))?;
        if let Some(b) = &self.basis {
            p.basis = b.clone();
        }
        if let Some(s) = &self.search {
            p.search = s.clone();
        }
        if let Some(g) = &self.generator {
            p.generator = g.clone();
        }
        if let Some(n) = self.n_samples {
            p.n_samples = n;
        }
        if let Some(t) = self.tau {
            p.search.tau = t;
        }
        if let Some(e) = self.eps {
            p.search.eps = e;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_carry_a_pointer() {
        let err = ExperimentConfig::from_json(r#"{"basis": {"steps": "many"}}"#).unwrap_err();
        match err {
            HarnessError::Config { pointer, .. } => assert_eq!(pointer, "/basis/steps"),
            other => panic!("{other:?}"),
        }
        let err = ExperimentConfig::from_json(r#"{"sedes": [1]}"#).unwrap_err();
        assert!(matches!(err, HarnessError::Config { .. }));
    }

    #[test]
    fn validation_rejects_bad_thresholds_and_empty_seed_lists() {
        let bad_tau = ExperimentConfig {
            tau: Some(1.5),
            ..ExperimentConfig::default()
        };
        assert!(matches!(bad_tau.validate(), Err(HarnessError::Config { pointer, .. }) if pointer == "/tau"));
        let no_seeds = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(no_seeds.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn overrides_replace_preset_values() {
        let cfg = ExperimentConfig::from_json(r#"{"preset": "basis", "tau": 0.7, "n_samples": 500}"#).unwrap();
        let p = cfg.resolved_preset().unwrap();
        assert_eq!(p.search.tau, 0.7);
        assert_eq!(p.n_samples, 500);
        assert_eq!(p.basis.steps, 20_000);
    }
}
