//! Optional TOML config file. Every field is optional; command-line flags
//! take precedence.
//!
//! ```toml
//! [special_tokens]
//! mask = "[MASK]"
//!
//! [train]
//! strategy = "dynamic"
//! epochs = 3
//! batch_size = 32
//! learning_rate = 0.1
//! seed = 7
//! bins = "auto"
//!
//! [sampler]
//! theta = 10.0
//! alpha = 0.5
//! tau = 0.2
//! mask_fraction = 0.15
//!
//! [model]
//! dim = 32
//! context_radius = 5
//!
//! [analysis]
//! knn = [3, 5, 7]
//! nn_k = 10
//! bins = "auto"
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::corpus::SpecialTokens;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub special_tokens: Option<SpecialTokens>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub strategy: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub bins: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub mask_fraction: Option<f64>,
    pub smoothing: Option<f64>,
    pub weight_ceiling: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: Option<usize>,
    pub context_radius: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub knn: Option<Vec<usize>>,
    pub nn_k: Option<usize>,
    pub bins: Option<String>,
    pub common_range: Option<String>,
    pub rare_range: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn specials(&self) -> SpecialTokens {
        self.special_tokens.clone().unwrap_or_default()
    }
}
