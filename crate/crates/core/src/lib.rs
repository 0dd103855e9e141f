//! Weighted masking for masked language model pretraining.
//!
//! Two masking strategies replace the uniform position choice of standard
//! MLM pretraining:
//!
//! - **frequency weighting**: each token gets the static weight
//!   `max(count, theta)^(-alpha)`;
//! - **dynamic weighting**: each token gets `exp(loss / tau)`, refreshed
//!   after every batch from the current model's prediction loss.
//!
//! Within a sentence, positions are drawn without replacement with
//! probability proportional to their token's weight. A small context-mean
//! predictor ([`model::MlmModel`]) supplies the losses that drive the dynamic
//! loop, and [`analysis`] measures how the resulting token embeddings are
//! spread across frequency ranks.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod manifest;
pub mod masking;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use analysis::{AnalysisReport, FrequencyBins};
pub use corpus::{FrequencyTable, SpecialTokens, TokenId, TokenizedCorpus, Vocab};
pub use error::{Error, Result};
pub use masking::{MaskAction, MaskedExample};
pub use model::{ForwardRecord, Gradients, MlmModel, ModelConfig};
pub use sampler::{CumulativeIndex, SamplerConfig, WeightDictionary, WeightSource};
pub use trainer::{Strategy, TrainConfig, TrainMetrics, TrainOutcome};
