//! Run configuration read from TOML.
//!
//! ```toml
//! data = "scores.csv"
//! id_column = "id"
//! methods = ["ae", "lof", "iforest"]
//! cutoffs = [5.0, 10.0, 15.0]
//! seed = 7
//! out = "report"
//!
//! [autoencoder]
//! epochs = 300
//!
//! [lof]
//! k = 50
//!
//! [synthetic]
//! specs = "perturbations.json"
//!
//! [data_quality]
//! corrected = "fixed.csv"
//!
//! [experts]
//! sheet = "labels.csv"
//!
//! [subset]
//! size = 49
//! duplicates = 9
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! of the configuration file. Every omitted value has a default that is
//! written out in full by [`RunConfig::resolve`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{AeError, NetworkConfig};
use crate::experts::Weighting;
use crate::iforest::ForestConfig;
use crate::lof::LofConfig;
use crate::perturbation::{PerturbationPlan, DIFF_TOLERANCE};
use crate::ranking::Method;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Autoencoder(#[from] AeError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSection {
    pub encoding_dim: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub min_improvement: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LofSection {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IforestSection {
    pub trees: Option<usize>,
    pub subsample: Option<usize>,
    pub seed: Option<u64>,
}

/// Synthetic perturbations, read from `specs` or generated from `plan`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub specs: Option<PathBuf>,
    pub dimensions_per_spec: Option<Vec<usize>>,
    pub magnitudes: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataQualitySection {
    /// Corrected version of `data`, same ids and columns.
    pub corrected: PathBuf,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertsSection {
    pub sheet: PathBuf,
    /// Weighting used for the difficulty-weighted vote.
    pub difficulty_weighting: Option<Weighting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSection {
    pub size: usize,
    #[serde(default)]
    pub duplicates: usize,
    pub seed: Option<u64>,
}

/// Configuration as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub id_column: Option<String>,
    pub methods: Option<Vec<Method>>,
    pub cutoffs: Option<Vec<f64>>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub autoencoder: AutoencoderSection,
    #[serde(default)]
    pub lof: LofSection,
    #[serde(default)]
    pub iforest: IforestSection,
    pub synthetic: Option<SyntheticSection>,
    pub data_quality: Option<DataQualitySection>,
    pub experts: Option<ExpertsSection>,
    pub subset: Option<SubsetSection>,
}

pub const DEFAULT_CUTOFFS: [f64; 3] = [5.0, 10.0, 15.0];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config and makes its relative paths relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    /// A minimal config: all methods, default cutoffs, no evaluation stages.
    pub fn for_data(data: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            data: data.into(),
            id_column: None,
            methods: None,
            cutoffs: None,
            seed,
            out: None,
            autoencoder: AutoencoderSection::default(),
            lof: LofSection::default(),
            iforest: IforestSection::default(),
            synthetic: None,
            data_quality: None,
            experts: None,
            subset: None,
        }
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data);
        if let Some(out) = &mut self.out {
            fix(out);
        }
        if let Some(s) = self.synthetic.as_mut().and_then(|s| s.specs.as_mut()) {
            fix(s);
        }
        if let Some(dq) = &mut self.data_quality {
            fix(&mut dq.corrected);
        }
        if let Some(e) = &mut self.experts {
            fix(&mut e.sheet);
        }
    }

    /// Fills every default for a dataset of `n` rows and `d` columns.
    pub fn resolve(&self, n: usize, d: usize) -> Result<ResolvedConfig, ConfigError> {
        let mut methods = self.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
        methods.sort();
        methods.dedup();
        if methods.is_empty() {
            return Err(ConfigError::Invalid("methods must not be empty".into()));
        }
        let cutoffs = self.cutoffs.clone().unwrap_or_else(|| DEFAULT_CUTOFFS.to_vec());
        if cutoffs.is_empty() || cutoffs.iter().any(|c| !(*c > 0.0 && *c < 100.0)) {
            return Err(ConfigError::Invalid(
                "cutoffs must lie strictly between 0 and 100".into(),
            ));
        }

        let autoencoder = if methods.contains(&Method::Ae) {
            let a = &self.autoencoder;
            let mut net = NetworkConfig::for_input_dim(d, a.seed.unwrap_or(self.seed))?;
            net.encoding_dim = a.encoding_dim.unwrap_or(net.encoding_dim);
            net.hidden_layers = a.hidden_layers.unwrap_or(net.hidden_layers);
            net.learning_rate = a.learning_rate.unwrap_or(net.learning_rate);
            net.epochs = a.epochs.unwrap_or(net.epochs);
            net.batch_size = a.batch_size.unwrap_or(net.batch_size).min(n.max(1));
            net.patience = a.patience.unwrap_or(net.patience);
            net.min_improvement = a.min_improvement.unwrap_or(net.min_improvement);
            net.layer_widths()?;
            Some(net)
        } else {
            None
        };
        let lof = methods.contains(&Method::Lof).then(|| LofConfig {
            k: self.lof.k.unwrap_or(LofConfig::default_for(n).k),
        });
        let iforest = methods.contains(&Method::Iforest).then(|| {
            let mut f = ForestConfig::new(self.iforest.seed.unwrap_or(self.seed));
            f.trees = self.iforest.trees.unwrap_or(f.trees);
            f.subsample = Some(
                ForestConfig {
                    subsample: self.iforest.subsample,
                    ..f.clone()
                }
                .subsample_for(n),
            );
            f
        });

        let synthetic = self.synthetic.as_ref().map(|s| {
            let default = PerturbationPlan::default();
            ResolvedSynthetic {
                specs: s.specs.clone(),
                plan: PerturbationPlan {
                    dimensions_per_spec: s.dimensions_per_spec.clone().unwrap_or(default.dimensions_per_spec),
                    magnitudes: s.magnitudes.clone().unwrap_or(default.magnitudes),
                },
                seed: s.seed.unwrap_or(self.seed),
            }
        });
        let data_quality = self.data_quality.as_ref().map(|q| ResolvedDataQuality {
            corrected: q.corrected.clone(),
            tolerance: q.tolerance.unwrap_or(DIFF_TOLERANCE),
        });
        let experts = self.experts.as_ref().map(|e| ResolvedExperts {
            sheet: e.sheet.clone(),
            difficulty_weighting: e.difficulty_weighting.unwrap_or(Weighting::InverseDifficulty),
        });
        if let Some(w) = experts.as_ref().map(|e| e.difficulty_weighting) {
            if w == Weighting::JobRelevance {
                return Err(ConfigError::Invalid(
                    "difficulty_weighting must be inverse_difficulty or reversed_difficulty".into(),
                ));
            }
        }
        let subset = self.subset.as_ref().map(|s| ResolvedSubset {
            size: s.size,
            duplicates: s.duplicates,
            seed: s.seed.unwrap_or(self.seed),
        });

        Ok(ResolvedConfig {
            data: self.data.clone(),
            id_column: self.id_column.clone(),
            methods,
            cutoffs,
            seed: self.seed,
            autoencoder,
            lof,
            iforest,
            synthetic,
            data_quality,
            experts,
            subset,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSynthetic {
    pub specs: Option<PathBuf>,
    pub plan: PerturbationPlan,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDataQuality {
    pub corrected: PathBuf,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedExperts {
    pub sheet: PathBuf,
    pub difficulty_weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSubset {
    pub size: usize,
    pub duplicates: usize,
    pub seed: u64,
}

/// Effective configuration with every default filled in; embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub data: PathBuf,
    pub id_column: Option<String>,
    /// Sorted, without duplicates.
    pub methods: Vec<Method>,
    pub cutoffs: Vec<f64>,
    pub seed: u64,
    pub autoencoder: Option<NetworkConfig>,
    pub lof: Option<LofConfig>,
    pub iforest: Option<ForestConfig>,
    pub synthetic: Option<ResolvedSynthetic>,
    pub data_quality: Option<ResolvedDataQuality>,
    pub experts: Option<ResolvedExperts>,
    pub subset: Option<ResolvedSubset>,
}
