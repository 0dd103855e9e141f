//! Python bindings: `import wsmlm`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use wsmlm_core::analysis::{self, AnalysisConfig, Embeddings, FrequencyBins};
use wsmlm_core::corpus::{self, ZipfParams};
use wsmlm_core::masking;
use wsmlm_core::model;
use wsmlm_core::rng;
use wsmlm_core::sampler::{self, SamplerConfig};
use wsmlm_core::trainer::{self, TrainConfig};
use wsmlm_core::{
    CumulativeIndex, Error, FrequencyTable, MaskedExample, MlmModel, ModelConfig, Strategy,
    TokenId, TokenizedCorpus, Vocab, WeightDictionary,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Stream(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Domain(_) | Error::EmptyCorpus | Error::EmptySentence => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Vocab", module = "wsmlm", frozen)]
#[derive(Clone)]
struct PyVocab {
    inner: Vocab,
}

#[pymethods]
impl PyVocab {
    /// The five default specials followed by `words` placeholder tokens.
    #[staticmethod]
    fn synthetic(words: usize) -> Self {
        Self { inner: Vocab::synthetic(words) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = Vocab::load(&path, &Default::default()).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn id(&self, token: &str) -> Option<TokenId> {
        self.inner.id(token)
    }

    fn token(&self, id: TokenId) -> PyResult<String> {
        if id as usize >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("token id {id} out of range")));
        }
        Ok(self.inner.token(id).to_string())
    }

    #[getter]
    fn mask_id(&self) -> TokenId {
        self.inner.mask_id()
    }

    #[getter]
    fn special_ids(&self) -> Vec<TokenId> {
        self.inner.special_ids().to_vec()
    }

    fn is_maskable(&self, id: TokenId) -> bool {
        self.inner.is_maskable(id)
    }

    fn maskable_ids(&self) -> Vec<TokenId> {
        self.inner.maskable_ids().to_vec()
    }
}

#[pyclass(name = "Corpus", module = "wsmlm", frozen)]
struct PyCorpus {
    inner: TokenizedCorpus,
}

#[pymethods]
impl PyCorpus {
    #[new]
    fn new(sentences: Vec<Vec<TokenId>>, vocab: &PyVocab) -> PyResult<Self> {
        let inner = TokenizedCorpus::new(sentences, &vocab.inner).map_err(err)?;
        Ok(Self { inner })
    }

    /// Whitespace-tokenised text file; unknown words map to UNK.
    #[staticmethod]
    fn load(path: PathBuf, vocab: &PyVocab) -> PyResult<Self> {
        let inner = corpus::load_corpus(&path, &vocab.inner).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn sentences(&self) -> Vec<Vec<TokenId>> {
        self.inner.sentences().to_vec()
    }

    fn num_tokens(&self) -> usize {
        self.inner.num_tokens()
    }
}

#[pyfunction]
#[pyo3(signature = (vocab_size, num_sentences, seed=0, min_len=5, max_len=20, exponent=1.1))]
fn generate_zipf_corpus(
    vocab_size: usize,
    num_sentences: usize,
    seed: u64,
    min_len: usize,
    max_len: usize,
    exponent: f64,
) -> PyResult<(PyVocab, PyCorpus)> {
    let params = ZipfParams { vocab_size, num_sentences, min_len, max_len, exponent };
    let (vocab, corpus) = corpus::generate_zipf_corpus(&params, seed).map_err(err)?;
    Ok((PyVocab { inner: vocab }, PyCorpus { inner: corpus }))
}

#[pyclass(name = "FrequencyTable", module = "wsmlm", frozen)]
struct PyFrequencyTable {
    inner: FrequencyTable,
}

#[pymethods]
impl PyFrequencyTable {
    #[staticmethod]
    fn count(corpus: &PyCorpus, vocab: &PyVocab) -> PyResult<Self> {
        let inner = corpus::count_frequencies(&corpus.inner, &vocab.inner).map_err(err)?;
        Ok(Self { inner })
    }

    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    /// Token ids, most frequent first.
    fn ranking(&self) -> Vec<TokenId> {
        self.inner.ranking().to_vec()
    }

    fn rank(&self, id: TokenId) -> PyResult<usize> {
        if id as usize >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("token id {id} out of range")));
        }
        Ok(self.inner.rank(id))
    }

    fn total(&self) -> u64 {
        self.inner.total()
    }
}

#[pyclass(name = "CumulativeIndex", module = "wsmlm")]
struct PyCumulativeIndex {
    inner: CumulativeIndex,
}

#[pymethods]
impl PyCumulativeIndex {
    #[new]
    fn new(weights: Vec<f64>) -> PyResult<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PyValueError::new_err("weights must be finite and non-negative"));
        }
        Ok(Self { inner: CumulativeIndex::new(weights) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn set(&mut self, i: usize, weight: f64) -> PyResult<()> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("index {i} out of range")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(PyValueError::new_err("weight must be finite and non-negative"));
        }
        self.inner.set(i, weight);
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn prefix_sum(&self, i: usize) -> PyResult<f64> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.prefix_sum(i))
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    /// Smallest index whose inclusive prefix sum exceeds `u`.
    fn sample(&self, u: f64) -> PyResult<usize> {
        self.inner.sample(u).map_err(err)
    }
}

#[pyclass(name = "WeightDictionary", module = "wsmlm")]
struct PyWeightDictionary {
    inner: WeightDictionary,
}

#[pymethods]
impl PyWeightDictionary {
    #[staticmethod]
    fn uniform(vocab: &PyVocab) -> Self {
        Self { inner: WeightDictionary::uniform(&vocab.inner) }
    }

    #[staticmethod]
    #[pyo3(signature = (table, theta=10.0, alpha=0.5))]
    fn frequency(table: &PyFrequencyTable, theta: f64, alpha: f64) -> PyResult<Self> {
        let cfg = SamplerConfig { theta, alpha, ..SamplerConfig::default() };
        cfg.validate().map_err(err)?;
        let inner = sampler::build_frequency_weights(&table.inner, &cfg).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (vocab, tau=0.2))]
    fn dynamic(vocab: &PyVocab, tau: f64) -> Self {
        Self { inner: sampler::init_dynamic_weights(&vocab.inner, tau) }
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    #[getter]
    fn version(&self) -> u64 {
        self.inner.version()
    }

    /// Share of the global weight mass held by `id`.
    fn share(&self, id: TokenId) -> PyResult<f64> {
        if id as usize >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("token id {id} out of range")));
        }
        Ok(self.inner.share(id))
    }

    /// Overwrites each token's weight with `exp(loss / tau)`. Returns
    /// `(updated, saturated)`.
    #[pyo3(signature = (token_losses, tau=0.2, smoothing=None))]
    fn update(
        &mut self,
        token_losses: BTreeMap<TokenId, f64>,
        tau: f64,
        smoothing: Option<f64>,
    ) -> PyResult<(usize, usize)> {
        let s = self.inner.update_weights(&token_losses, tau, smoothing).map_err(err)?;
        Ok((s.updated, s.saturated))
    }

    fn sentence_probabilities(&self, sentence: Vec<TokenId>) -> PyResult<Vec<f64>> {
        self.check(&sentence)?;
        sampler::sentence_probabilities(&sentence, &self.inner).map_err(err)
    }

    #[pyo3(signature = (sentence, mask_fraction=0.15, seed=0))]
    fn sample_positions(&self, sentence: Vec<TokenId>, mask_fraction: f64, seed: u64) -> PyResult<Vec<usize>> {
        self.check(&sentence)?;
        let mut r = rng::seeded(seed);
        sampler::sample_mask_positions(&sentence, &self.inner, mask_fraction, &mut r).map_err(err)
    }
}

impl PyWeightDictionary {
    fn check(&self, sentence: &[TokenId]) -> PyResult<()> {
        match sentence.iter().find(|&&t| t as usize >= self.inner.len()) {
            Some(t) => Err(PyIndexError::new_err(format!("token id {t} out of range"))),
            None => Ok(()),
        }
    }
}

#[pyfunction]
fn clip_frequency(freq: u64, theta: f64) -> f64 {
    sampler::clip_frequency(freq, theta)
}

#[pyfunction]
fn frequency_weight(clipped_freq: f64, alpha: f64) -> f64 {
    sampler::frequency_weight(clipped_freq, alpha)
}

/// `(weight, saturated)` for `exp(loss / tau)` under the default ceiling.
#[pyfunction]
fn dynamic_weight(loss: f64, tau: f64) -> (f64, bool) {
    let w = sampler::dynamic_weight(loss, tau);
    (w.value, w.saturated)
}

#[pyfunction]
fn mask_count(maskable: usize, mask_fraction: f64) -> usize {
    sampler::mask_count(maskable, mask_fraction)
}

#[pyclass(name = "MaskedExample", module = "wsmlm", frozen)]
struct PyMaskedExample {
    inner: MaskedExample,
}

#[pymethods]
impl PyMaskedExample {
    #[getter]
    fn input_ids(&self) -> Vec<TokenId> {
        self.inner.input_ids.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<Option<TokenId>> {
        self.inner.labels.clone()
    }

    #[getter]
    fn masked_positions(&self) -> Vec<usize> {
        self.inner.masked_positions.clone()
    }

    /// `"mask"`, `"random"` or `"keep"` per masked position.
    #[getter]
    fn actions(&self) -> Vec<&'static str> {
        self.inner
            .actions
            .iter()
            .map(|a| match a {
                masking::MaskAction::Mask => "mask",
                masking::MaskAction::Random => "random",
                masking::MaskAction::Keep => "keep",
            })
            .collect()
    }

    fn reconstruct(&self) -> Vec<TokenId> {
        self.inner.reconstruct()
    }
}

#[pyfunction]
#[pyo3(signature = (sentence, positions, vocab, seed=0))]
fn apply_mask(sentence: Vec<TokenId>, positions: Vec<usize>, vocab: &PyVocab, seed: u64) -> PyResult<PyMaskedExample> {
    let mut r = rng::seeded(seed);
    let inner = masking::apply_mask(&sentence, &positions, &vocab.inner, &mut r).map_err(err)?;
    Ok(PyMaskedExample { inner })
}

#[pyclass(name = "Model", module = "wsmlm", frozen)]
struct PyModel {
    inner: MlmModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (vocab_size, dim=32, context_radius=5, seed=0))]
    fn new(vocab_size: usize, dim: usize, context_radius: usize, seed: u64) -> PyResult<Self> {
        let inner = MlmModel::new(vocab_size, ModelConfig { dim, context_radius }, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: MlmModel::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Token embedding matrix as a list of rows.
    fn embeddings(&self) -> Vec<Vec<f64>> {
        self.inner.embeddings.chunks(self.inner.dim()).map(<[f64]>::to_vec).collect()
    }

    /// Loss at each masked position of `example`.
    fn position_losses(&self, example: &PyMaskedExample, mask_id: TokenId) -> PyResult<Vec<f64>> {
        let rec = model::forward(&self.inner, &example.inner, mask_id).map_err(err)?;
        Ok(rec.positions.iter().map(|p| p.loss).collect())
    }
}

#[pyclass(name = "TrainResult", module = "wsmlm", frozen)]
struct PyTrainResult {
    outcome: trainer::TrainOutcome,
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn model(&self) -> PyModel {
        PyModel { inner: self.outcome.model.clone() }
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.outcome.weights.weights().to_vec()
    }

    /// Per-epoch metrics as plain Python data.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.outcome.metrics)
    }

    fn masked_histogram(&self) -> Vec<u64> {
        self.outcome.metrics.total_histogram()
    }
}

#[pyfunction]
#[pyo3(signature = (
    corpus, vocab, strategy="dynamic", epochs=3, batch_size=32, learning_rate=0.1, seed=0,
    theta=10.0, alpha=0.5, tau=0.2, mask_fraction=0.15, dim=32, context_radius=5, bins=None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    corpus: &PyCorpus,
    vocab: &PyVocab,
    strategy: &str,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    theta: f64,
    alpha: f64,
    tau: f64,
    mask_fraction: f64,
    dim: usize,
    context_radius: usize,
    bins: Option<&str>,
) -> PyResult<PyTrainResult> {
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let bins = bins
        .map(|b| FrequencyBins::parse(b, vocab.inner.len()))
        .transpose()
        .map_err(err)?;
    let config = TrainConfig {
        strategy,
        epochs,
        batch_size,
        learning_rate,
        sampler: SamplerConfig { theta, alpha, tau, mask_fraction, ..SamplerConfig::default() },
        model: ModelConfig { dim, context_radius },
        seed,
        bins,
    };
    let outcome = py
        .detach(|| trainer::train(&corpus.inner, &vocab.inner, &config))
        .map_err(err)?;
    Ok(PyTrainResult { outcome })
}

/// Embedding statistics with the vocab-scaled default configuration.
#[pyfunction]
#[pyo3(signature = (model, table, knn=None))]
fn analyze<'py>(
    py: Python<'py>,
    model: &PyModel,
    table: &PyFrequencyTable,
    knn: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = AnalysisConfig::auto(model.inner.vocab_size()).map_err(err)?;
    if let Some(k) = knn {
        cfg.knn = k;
    }
    let report = analysis::analyze(&Embeddings::of(&model.inner), &table.inner, &cfg).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn nearest_neighbors(model: &PyModel, token: TokenId, k: usize) -> PyResult<Vec<TokenId>> {
    analysis::nearest_neighbors(&Embeddings::of(&model.inner), token, k).map_err(err)
}

#[pymodule]
fn wsmlm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocab>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyFrequencyTable>()?;
    m.add_class::<PyCumulativeIndex>()?;
    m.add_class::<PyWeightDictionary>()?;
    m.add_class::<PyMaskedExample>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(generate_zipf_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(clip_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(frequency_weight, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_weight, m)?)?;
    m.add_function(wrap_pyfunction!(mask_count, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_neighbors, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
