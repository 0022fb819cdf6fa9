//! Named hyperparameter bundles.
//!
//! The full presets use the published network shapes. The `-desk` variants
//! shrink widths and schedules so a run fits in minutes on one core; their
//! scores are expected to sit somewhat below the full presets.

use serde::{Deserialize, Serialize};

use crate::basis::BasisConfig;
use crate::scm::GeneratorConfig;
use crate::search::SearchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    /// Samples drawn per synthetic dataset.
    pub n_samples: usize,
    /// Network and schedule for standalone two-view fits.
    pub basis: BasisConfig,
    /// Search settings, including the network used for every fit it runs.
    pub search: SearchConfig,
    /// Generator settings for synthetic hierarchies.
    pub generator: GeneratorConfig,
}

impl Default for Preset {
    fn default() -> Self {
        preset("basis-desk").expect("built-in preset")
    }
}

pub const PRESETS: [&str; 6] = [
    "basis",
    "basis-desk",
    "synthetic-hierarchy",
    "synthetic-hierarchy-desk",
    "personality",
    "digits",
];

fn shaped(depth: usize, encoder_width: f64, decoder_width: f64, steps: usize) -> BasisConfig {
    BasisConfig {
        encoder_depth: depth,
        decoder_depth: depth,
        encoder_width,
        decoder_width,
        steps,
        ..BasisConfig::default()
    }
}

fn search_with(basis: BasisConfig) -> SearchConfig {
    SearchConfig {
        basis,
        ..SearchConfig::default()
    }
}

/// Hierarchy generator used by the synthetic presets.
pub fn hierarchy_generator() -> GeneratorConfig {
    GeneratorConfig {
        noise_scale: HIERARCHY_NOISE_SCALE,
        ..GeneratorConfig::default()
    }
}

/// Multiplier on the exogenous noise of non-root nodes in the synthetic
/// hierarchies.
pub const HIERARCHY_NOISE_SCALE: f64 = 2.0;

pub fn preset(name: &str) -> Option<Preset> {
    let basis_full = shaped(4, 30.0, 30.0, 20_000);
    let basis_desk = shaped(4, 15.0, 15.0, 10_000);
    let p = match name {
        "basis" => Preset {
            name: name.into(),
            n_samples: 16_384,
            search: search_with(basis_full.clone()),
            basis: basis_full,
            generator: GeneratorConfig::default(),
        },
        "basis-desk" => Preset {
            name: name.into(),
            n_samples: 16_384,
            search: search_with(basis_desk.clone()),
            basis: basis_desk,
            generator: GeneratorConfig::default(),
        },
        "synthetic-hierarchy" => {
            let b = shaped(8, 50.0, 50.0, 20_000);
            Preset {
                name: name.into(),
                n_samples: 16_384,
                search: search_with(b.clone()),
                basis: b,
                generator: hierarchy_generator(),
            }
        }
        "synthetic-hierarchy-desk" => {
            let b = BasisConfig {
                min_width: 32,
                max_width: Some(128),
                ..shaped(4, 4.0, 4.0, 3_000)
            };
            Preset {
                name: name.into(),
                n_samples: 8_192,
                search: search_with(b.clone()),
                basis: b,
                generator: hierarchy_generator(),
            }
        }
        "personality" => {
            let b = shaped(4, 8.0, 8.0, 20_000);
            Preset {
                name: name.into(),
                n_samples: 0,
                search: search_with(b.clone()),
                basis: b,
                generator: GeneratorConfig::default(),
            }
        }
        "digits" => {
            let b = shaped(4, 4.0, 2.0, 20_000);
            Preset {
                name: name.into(),
                n_samples: 0,
                search: search_with(b.clone()),
                basis: b,
                generator: GeneratorConfig::default(),
            }
        }
        _ => return None,
    };
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_preset_resolves() {
        for name in PRESETS {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            assert_eq!(p.basis.lr, 1e-3);
            assert_eq!(p.basis.slope, 0.2);
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn full_presets_match_published_shapes() {
        let b = preset("basis").unwrap().basis;
        assert_eq!((b.encoder_depth, b.encoder_width, b.steps), (4, 30.0, 20_000));
        let h = preset("synthetic-hierarchy").unwrap().search.basis;
        assert_eq!((h.encoder_depth, h.decoder_width), (8, 50.0));
        let d = preset("digits").unwrap().basis;
        assert_eq!((d.encoder_width, d.decoder_width), (4.0, 2.0));
    }
}
