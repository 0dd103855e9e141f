//! Pretraining loop for the three masking strategies.
//!
//! Every batch: choose mask positions from the current weight dictionary,
//! corrupt them, run forward/backward and take one SGD step on the mean
//! position loss. Under the dynamic strategy the batch's per-token mean
//! losses are written back into the dictionary before the next batch
//! samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::FrequencyBins;
use crate::corpus::{count_frequencies, FrequencyTable, TokenId, TokenizedCorpus, Vocab};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, MaskedExample};
use crate::model::{self, ForwardRecord, Gradients, MlmModel, ModelConfig};
use crate::rng::{self, Stream};
use crate::sampler::{
    build_frequency_weights, init_dynamic_weights, sample_mask_positions, SamplerConfig,
    WeightDictionary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Frequency,
    Dynamic,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "frequency" => Ok(Strategy::Frequency),
            "dynamic" => Ok(Strategy::Dynamic),
            other => Err(Error::config(format!(
                "unknown strategy {other:?} (expected uniform, frequency or dynamic)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Frequency => "frequency",
            Strategy::Dynamic => "dynamic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub seed: u64,
    /// Bins for per-bin loss metrics; scaled defaults when unset.
    pub bins: Option<FrequencyBins>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dynamic,
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.1,
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            bins: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        self.sampler.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub masked_positions: u64,
    /// Mean masked-position loss per frequency bin (`None` if the bin saw
    /// no masked positions).
    pub bin_loss: Vec<Option<f64>>,
    pub bin_masked: Vec<u64>,
    /// Mean frequency rank of the masked tokens; larger means rarer.
    pub mean_masked_rank: f64,
    /// Masked count per token id.
    pub histogram: Vec<u64>,
}

/// Sparse log of dictionary writes, one entry per batch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DynamicTrace {
    pub initial_total: f64,
    pub batches: Vec<BatchUpdate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchUpdate {
    /// Dictionary total after this batch's update.
    pub total: f64,
    pub updates: Vec<(TokenId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub strategy: Strategy,
    pub bins: FrequencyBins,
    pub batches: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Dynamic strategy only.
    pub dynamic: Option<DynamicTrace>,
    /// End-of-epoch dictionary weights; dynamic strategy only.
    pub weight_snapshots: Vec<Vec<f64>>,
    pub saturations: u64,
}

impl TrainMetrics {
    /// Masked count per token id summed over epochs.
    pub fn total_histogram(&self) -> Vec<u64> {
        let mut total = vec![0; self.epochs.first().map_or(0, |e| e.histogram.len())];
        for e in &self.epochs {
            for (t, c) in total.iter_mut().zip(&e.histogram) {
                *t += c;
            }
        }
        total
    }

    pub fn final_epoch(&self) -> &EpochMetrics {
        self.epochs.last().expect("training ran at least one epoch")
    }
}

/// Share of the global weight mass held by `token` after each batch of a
/// dynamic run.
pub fn sampling_probability_trace(metrics: &TrainMetrics, token: TokenId) -> Result<Vec<f64>> {
    let trace = metrics
        .dynamic
        .as_ref()
        .ok_or_else(|| Error::domain("probability traces need a dynamic run"))?;
    let vocab_size = metrics.epochs.first().map_or(0, |e| e.histogram.len());
    if token as usize >= vocab_size {
        return Err(Error::domain(format!("token {token} outside vocab of {vocab_size}")));
    }
    let mut weight = 1.0;
    Ok(trace
        .batches
        .iter()
        .map(|b| {
            if let Some(&(_, w)) = b.updates.iter().find(|(t, _)| *t == token) {
                weight = w;
            }
            weight / b.total
        })
        .collect())
}

/// What a batch produced, handed to [`TrainObserver::batch_end`].
#[derive(Debug)]
pub struct BatchReport<'a> {
    pub epoch: usize,
    pub examples: &'a [MaskedExample],
    pub records: &'a [ForwardRecord],
    /// Mean loss per distinct masked token over the whole batch.
    pub token_losses: &'a BTreeMap<TokenId, f64>,
    pub mean_loss: f64,
}

/// Hooks into the training loop; both default to no-ops.
pub trait TrainObserver {
    /// Called with the dictionary that will be used to sample `batch`.
    fn batch_start(&mut self, _batch: usize, _weights: &WeightDictionary) {}
    fn batch_end(&mut self, _batch: usize, _report: &BatchReport<'_>) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlmModel,
    pub metrics: TrainMetrics,
    pub weights: WeightDictionary,
    pub table: FrequencyTable,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub records: Vec<ForwardRecord>,
    pub token_losses: BTreeMap<TokenId, f64>,
    pub mean_loss: f64,
    pub positions: usize,
}

/// Forward, backward and one SGD step on the mean loss of all masked
/// positions in `examples`. Strategy-agnostic: the strategies differ only
/// in how `examples` were produced. Leaves `model` untouched on error.
pub fn train_step(
    model: &mut MlmModel,
    examples: &[MaskedExample],
    mask_id: TokenId,
    learning_rate: f64,
) -> Result<StepResult> {
    let records = examples
        .par_iter()
        .map(|ex| model::forward(model, ex, mask_id))
        .collect::<Result<Vec<_>>>()?;
    let positions: usize = records.iter().map(|r| r.positions.len()).sum();
    let mut sums: BTreeMap<TokenId, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for p in records.iter().flat_map(|r| &r.positions) {
        if !p.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss for token {}", p.label)));
        }
        total += p.loss;
        let e = sums.entry(p.label).or_default();
        e.0 += p.loss;
        e.1 += 1;
    }
    let token_losses = sums
        .into_iter()
        .map(|(t, (s, n))| (t, s / n as f64))
        .collect();
    let mut grads = Gradients::zeros(model);
    for r in &records {
        model::accumulate_gradients(model, r, &mut grads);
    }
    grads.scale(1.0 / positions as f64);
    let before = model.clone();
    model::sgd_step(model, &grads, learning_rate)?;
    if !model.is_finite() {
        *model = before;
        return Err(Error::NonFinite("parameters after SGD step".into()));
    }
    Ok(StepResult {
        records,
        token_losses,
        mean_loss: total / positions as f64,
        positions,
    })
}

pub fn train(corpus: &TokenizedCorpus, vocab: &Vocab, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(corpus, vocab, config, &mut ())
}

pub fn train_with_observer(
    corpus: &TokenizedCorpus,
    vocab: &Vocab,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let table = count_frequencies(corpus, vocab)?;
    let bins = match &config.bins {
        Some(b) => b.clone(),
        None => FrequencyBins::auto(vocab.len())?,
    };
    let mut weights = match config.strategy {
        Strategy::Uniform => WeightDictionary::uniform(vocab),
        Strategy::Frequency => build_frequency_weights(&table, &config.sampler)?,
        Strategy::Dynamic => init_dynamic_weights(vocab, config.sampler.tau)
            .with_ceiling(config.sampler.weight_ceiling),
    };
    let mut model = MlmModel::new(vocab.len(), config.model, config.seed)?;
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut position_rng = rng::stream(config.seed, Stream::Positions);
    let mut corruption_rng = rng::stream(config.seed, Stream::Corruption);

    let mut metrics = TrainMetrics {
        strategy: config.strategy,
        bins: bins.clone(),
        batches: 0,
        epochs: Vec::with_capacity(config.epochs),
        dynamic: (config.strategy == Strategy::Dynamic).then(|| DynamicTrace {
            initial_total: weights.total(),
            batches: Vec::new(),
        }),
        weight_snapshots: Vec::new(),
        saturations: 0,
    };

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut batch_index = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = EpochAccumulator::new(vocab.len(), bins.len());
        for chunk in order.chunks(config.batch_size) {
            observer.batch_start(batch_index, &weights);
            let mut examples = Vec::with_capacity(chunk.len());
            for &si in chunk {
                let sentence = &corpus.sentences()[si];
                let positions = match sample_mask_positions(
                    sentence,
                    &weights,
                    config.sampler.mask_fraction,
                    &mut position_rng,
                ) {
                    Ok(p) => p,
                    Err(Error::EmptySentence) => continue,
                    Err(e) => return Err(e),
                };
                examples.push(apply_mask(sentence, &positions, vocab, &mut corruption_rng)?);
            }
            if examples.is_empty() {
                batch_index += 1;
                continue;
            }
            let last_good = model.clone();
            let step = train_step(&mut model, &examples, vocab.mask_id(), config.learning_rate)
                .map_err(|e| match e {
                    Error::NonFinite(reason) => Error::Diverged {
                        batch: batch_index,
                        reason,
                        last_good: Box::new(last_good),
                    },
                    other => other,
                })?;
            for p in step.records.iter().flat_map(|r| &r.positions) {
                acc.record(p.label, p.loss, table.rank(p.label), bins.bin_of(table.rank(p.label)));
            }
            if config.strategy == Strategy::Dynamic {
                let summary = weights.update_weights(
                    &step.token_losses,
                    config.sampler.tau,
                    config.sampler.smoothing,
                )?;
                metrics.saturations += summary.saturated as u64;
                if let Some(trace) = metrics.dynamic.as_mut() {
                    trace.batches.push(BatchUpdate {
                        total: weights.total(),
                        updates: step
                            .token_losses
                            .keys()
                            .map(|&t| (t, weights.weight(t)))
                            .collect(),
                    });
                }
            }
            observer.batch_end(
                batch_index,
                &BatchReport {
                    epoch,
                    examples: &examples,
                    records: &step.records,
                    token_losses: &step.token_losses,
                    mean_loss: step.mean_loss,
                },
            );
            batch_index += 1;
        }
        metrics.epochs.push(acc.finish(epoch));
        if config.strategy == Strategy::Dynamic {
            metrics.weight_snapshots.push(weights.weights().to_vec());
        }
    }
    metrics.batches = batch_index;
    Ok(TrainOutcome {
        model,
        metrics,
        weights,
        table,
    })
}

struct EpochAccumulator {
    loss_sum: f64,
    rank_sum: f64,
    count: u64,
    bin_loss: Vec<f64>,
    bin_count: Vec<u64>,
    histogram: Vec<u64>,
}

impl EpochAccumulator {
    fn new(vocab_size: usize, bins: usize) -> Self {
        Self {
            loss_sum: 0.0,
            rank_sum: 0.0,
            count: 0,
            bin_loss: vec![0.0; bins],
            bin_count: vec![0; bins],
            histogram: vec![0; vocab_size],
        }
    }

    fn record(&mut self, label: TokenId, loss: f64, rank: usize, bin: Option<usize>) {
        self.loss_sum += loss;
        self.rank_sum += rank as f64;
        self.count += 1;
        self.histogram[label as usize] += 1;
        if let Some(b) = bin {
            self.bin_loss[b] += loss;
            self.bin_count[b] += 1;
        }
    }

    fn finish(self, epoch: usize) -> EpochMetrics {
        let n = self.count.max(1) as f64;
        EpochMetrics {
            epoch,
            mean_loss: self.loss_sum / n,
            masked_positions: self.count,
            bin_loss: self
                .bin_loss
                .iter()
                .zip(&self.bin_count)
                .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                .collect(),
            bin_masked: self.bin_count,
            mean_masked_rank: self.rank_sum / n,
            histogram: self.histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLoss {
    pub start: usize,
    pub end: usize,
    pub positions: u64,
    pub mean_loss: Option<f64>,
}

/// Held-out style evaluation: every maskable position of every sentence is
/// replaced by MASK on its own and scored. Results are grouped by the
/// frequency bin of the original token.
pub fn evaluate_by_bin(
    model: &MlmModel,
    corpus: &TokenizedCorpus,
    vocab: &Vocab,
    table: &FrequencyTable,
    bins: &FrequencyBins,
) -> Result<Vec<BinLoss>> {
    let per_sentence = corpus
        .sentences()
        .par_iter()
        .map(|s| {
            let mut out = Vec::new();
            for p in (0..s.len()).filter(|&p| vocab.is_maskable(s[p])) {
                let mut input = s.clone();
                input[p] = vocab.mask_id();
                let mut labels = vec![None; s.len()];
                labels[p] = Some(s[p]);
                let ex = MaskedExample {
                    input_ids: input,
                    labels,
                    masked_positions: vec![p],
                    actions: Vec::new(),
                };
                let rec = model::forward(model, &ex, vocab.mask_id())?;
                out.push((s[p], rec.positions[0].loss));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![(0.0, 0u64); bins.len()];
    for (tok, loss) in per_sentence.into_iter().flatten() {
        if let Some(b) = bins.bin_of(table.rank(tok)) {
            sums[b].0 += loss;
            sums[b].1 += 1;
        }
    }
    Ok(bins
        .ranges()
        .iter()
        .zip(sums)
        .map(|(r, (s, n))| BinLoss {
            start: r.start,
            end: r.end,
            positions: n,
            mean_loss: (n > 0).then(|| s / n as f64),
        })
        .collect())
}
