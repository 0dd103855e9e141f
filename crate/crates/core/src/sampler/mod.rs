//! Token sampling weights and mask-position selection.
//!
//! A [`WeightDictionary`] holds one positive weight per vocabulary entry.
//! Inside a sentence, the probability of masking position `i` is its token's
//! weight divided by the sum over the sentence's maskable positions.

mod cumulative;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cumulative::{cumulative_sample, CumulativeIndex};

use crate::corpus::{FrequencyTable, TokenId, Vocab};
use crate::error::{Error, Result};

/// Dynamic weights are clamped here so prefix sums stay finite.
pub const WEIGHT_CEILING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Counts at or below this are raised to it before weighting.
    pub theta: f64,
    pub alpha: f64,
    pub tau: f64,
    pub mask_fraction: f64,
    /// Optional EMA factor for dynamic updates: the stored weight becomes
    /// `s * old + (1 - s) * exp(loss / tau)`. `None` overwrites.
    pub smoothing: Option<f64>,
    /// Upper clamp for `exp(loss / tau)`.
    pub weight_ceiling: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            theta: 10.0,
            alpha: 0.5,
            tau: 0.2,
            mask_fraction: 0.15,
            smoothing: None,
            weight_ceiling: WEIGHT_CEILING,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 1.0 && self.theta.is_finite()) {
            return Err(Error::config(format!("theta must be >= 1, got {}", self.theta)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::config(format!(
                "mask fraction must be in (0, 1), got {}",
                self.mask_fraction
            )));
        }
        if !(self.weight_ceiling >= 1.0 && self.weight_ceiling.is_finite()) {
            return Err(Error::config(format!(
                "weight ceiling must be finite and >= 1, got {}",
                self.weight_ceiling
            )));
        }
        if let Some(s) = self.smoothing {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::config(format!("smoothing must be in [0, 1), got {s}")));
            }
        }
        Ok(())
    }
}

pub fn clip_frequency(freq: u64, theta: f64) -> f64 {
    let f = freq as f64;
    if f > theta {
        f
    } else {
        theta
    }
}

pub fn frequency_weight(clipped_freq: f64, alpha: f64) -> f64 {
    clipped_freq.powf(-alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicWeight {
    pub value: f64,
    /// The raw `exp(loss / tau)` exceeded the ceiling.
    pub saturated: bool,
}

/// `exp(loss / tau)`, clamped at [`WEIGHT_CEILING`].
pub fn dynamic_weight(loss: f64, tau: f64) -> DynamicWeight {
    dynamic_weight_clamped(loss, tau, WEIGHT_CEILING)
}

pub fn dynamic_weight_clamped(loss: f64, tau: f64, ceiling: f64) -> DynamicWeight {
    let raw = (loss / tau).exp();
    if raw <= ceiling {
        DynamicWeight {
            value: raw,
            saturated: false,
        }
    } else {
        DynamicWeight {
            value: ceiling,
            saturated: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightSource {
    Uniform,
    Frequency { theta: f64, alpha: f64 },
    Dynamic { tau: f64 },
}

/// Per-token sampling weights backed by a [`CumulativeIndex`].
///
/// Single writer, many readers: sampling only needs `&self`, and
/// [`update_weights`](Self::update_weights) bumps `version` so readers can
/// tell when a snapshot is stale.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDictionary {
    index: CumulativeIndex,
    maskable: Vec<bool>,
    source: WeightSource,
    version: u64,
    saturations: u64,
    ceiling: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateSummary {
    pub updated: usize,
    pub saturated: usize,
}

impl WeightDictionary {
    pub fn from_weights(weights: Vec<f64>, maskable: Vec<bool>, source: WeightSource) -> Result<Self> {
        if weights.len() != maskable.len() {
            return Err(Error::config("weights and maskable flags differ in length"));
        }
        if let Some((id, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::NonFinite(format!("weight {w} for token {id}")));
        }
        Ok(Self {
            index: CumulativeIndex::new(weights),
            maskable,
            source,
            version: 0,
            saturations: 0,
            ceiling: WEIGHT_CEILING,
        })
    }

    /// All weights 1; the baseline that reduces to uniform masking.
    pub fn uniform(vocab: &Vocab) -> Self {
        Self::from_weights(vec![1.0; vocab.len()], vocab.maskable_mask(), WeightSource::Uniform)
            .expect("unit weights are valid")
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn weight(&self, id: TokenId) -> f64 {
        self.index.weight(id as usize)
    }

    pub fn weights(&self) -> &[f64] {
        self.index.weights()
    }

    pub fn total(&self) -> f64 {
        self.index.total()
    }

    pub fn prefix_sum(&self, id: TokenId) -> f64 {
        self.index.prefix_sum(id as usize)
    }

    pub fn index(&self) -> &CumulativeIndex {
        &self.index
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn source(&self) -> WeightSource {
        self.source
    }

    /// Sets the clamp applied by [`update_weights`](Self::update_weights).
    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    /// Number of dynamic updates clamped at the ceiling so far.
    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    pub fn is_maskable(&self, id: TokenId) -> bool {
        self.maskable.get(id as usize).copied().unwrap_or(false)
    }

    /// Share of the global weight mass held by `id`.
    pub fn share(&self, id: TokenId) -> f64 {
        self.weight(id) / self.total()
    }

    /// Draws a token id with probability proportional to its weight.
    pub fn sample_token(&self, u: f64) -> Result<TokenId> {
        self.index.sample(u).map(|i| i as TokenId)
    }

    /// Overwrites the weight of every token in `token_losses` with
    /// `exp(loss / tau)` (or its smoothed blend) and bumps the version.
    /// The whole batch is rejected if any loss is non-finite or any key is
    /// not a maskable token.
    pub fn update_weights(
        &mut self,
        token_losses: &BTreeMap<TokenId, f64>,
        tau: f64,
        smoothing: Option<f64>,
    ) -> Result<UpdateSummary> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config(format!("tau must be > 0, got {tau}")));
        }
        for (&id, &loss) in token_losses {
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} for token {id}")));
            }
            if !self.is_maskable(id) {
                return Err(Error::domain(format!("token {id} is not maskable")));
            }
        }
        let mut summary = UpdateSummary::default();
        for (&id, &loss) in token_losses {
            let target = dynamic_weight_clamped(loss, tau, self.ceiling);
            let value = match smoothing {
                Some(s) => s * self.weight(id) + (1.0 - s) * target.value,
                None => target.value,
            };
            self.index.set(id as usize, value);
            summary.updated += 1;
            if target.saturated {
                summary.saturated += 1;
            }
        }
        self.saturations += summary.saturated as u64;
        self.version += 1;
        Ok(summary)
    }

    /// Snapshot as TSV: a `#` header line with the weight source and
    /// version, then columns `token, id, weight`.
    pub fn write_tsv(&self, vocab: &Vocab, mut out: impl Write) -> std::io::Result<()> {
        match self.source {
            WeightSource::Uniform => writeln!(out, "# source=uniform version={}", self.version)?,
            WeightSource::Frequency { theta, alpha } => writeln!(
                out,
                "# source=frequency theta={theta} alpha={alpha} version={}",
                self.version
            )?,
            WeightSource::Dynamic { tau } => {
                writeln!(out, "# source=dynamic tau={tau} version={}", self.version)?
            }
        }
        writeln!(out, "token\tid\tweight")?;
        for (id, w) in self.weights().iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", vocab.token(id as TokenId), id, w)?;
        }
        Ok(())
    }

    pub fn read_tsv(reader: impl BufRead, vocab: &Vocab) -> Result<Self> {
        let mut lines = reader.lines();
        // Skip leading comment lines until the one carrying the source.
        let header = loop {
            match lines.next().transpose()? {
                Some(l) if l.starts_with('#') && !l.contains("source=") => continue,
                Some(l) => break l,
                None => return Err(Error::Format("empty weight snapshot".into())),
            }
        };
        let fields: BTreeMap<&str, &str> = header
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let num = |key: &str| -> Result<f64> {
            fields
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("snapshot header lacks {key}")))
        };
        let source = match fields.get("source").copied() {
            Some("uniform") => WeightSource::Uniform,
            Some("frequency") => WeightSource::Frequency {
                theta: num("theta")?,
                alpha: num("alpha")?,
            },
            Some("dynamic") => WeightSource::Dynamic { tau: num("tau")? },
            other => return Err(Error::Format(format!("unknown weight source {other:?}"))),
        };
        let version = num("version")? as u64;
        match lines.next().transpose()? {
            Some(h) if h == "token\tid\tweight" => {}
            other => return Err(Error::Format(format!("unexpected column header {other:?}"))),
        }
        let mut weights = Vec::with_capacity(vocab.len());
        for line in lines {
            let line = line?;
            let cols: Vec<&str> = line.split('\t').collect();
            let id = weights.len();
            if cols.len() != 3
                || cols[1].parse::<usize>().ok() != Some(id)
                || vocab.tokens().get(id).map(String::as_str) != Some(cols[0])
            {
                return Err(Error::Integrity(format!("snapshot row {id} does not match vocab")));
            }
            weights.push(
                cols[2]
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad weight {:?}", cols[2])))?,
            );
        }
        if weights.len() != vocab.len() {
            return Err(Error::Integrity("snapshot and vocab differ in size".into()));
        }
        let mut dict = Self::from_weights(weights, vocab.maskable_mask(), source)?;
        dict.version = version;
        Ok(dict)
    }
}

/// Weights `max(count, theta)^(-alpha)` for every token in the table.
pub fn build_frequency_weights(table: &FrequencyTable, config: &SamplerConfig) -> Result<WeightDictionary> {
    if table.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let weights = table
        .counts()
        .iter()
        .map(|&c| frequency_weight(clip_frequency(c, config.theta), config.alpha))
        .collect();
    WeightDictionary::from_weights(
        weights,
        table.maskable().to_vec(),
        WeightSource::Frequency {
            theta: config.theta,
            alpha: config.alpha,
        },
    )
}

/// Starting point of the dynamic loop: every weight exactly 1.
pub fn init_dynamic_weights(vocab: &Vocab, tau: f64) -> WeightDictionary {
    WeightDictionary::from_weights(
        vec![1.0; vocab.len()],
        vocab.maskable_mask(),
        WeightSource::Dynamic { tau },
    )
    .expect("unit weights are valid")
}

/// Per-position masking probabilities for one sentence. Non-maskable
/// positions get 0; the rest are normalised to sum to 1.
pub fn sentence_probabilities(sentence: &[TokenId], dict: &WeightDictionary) -> Result<Vec<f64>> {
    let raw: Vec<f64> = sentence
        .iter()
        .map(|&id| if dict.is_maskable(id) { dict.weight(id) } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptySentence);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `max(1, round(fraction * maskable))`, capped at `maskable`.
pub fn mask_count(maskable: usize, mask_fraction: f64) -> usize {
    ((mask_fraction * maskable as f64).round() as usize)
        .max(1)
        .min(maskable)
}

/// Chooses mask positions by successive weighted draws without replacement.
/// Each draw renormalises over the positions still available. Returned
/// positions are sorted ascending.
pub fn sample_mask_positions<R: Rng + ?Sized>(
    sentence: &[TokenId],
    dict: &WeightDictionary,
    mask_fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let weights: Vec<f64> = sentence
        .iter()
        .map(|&id| if dict.is_maskable(id) { dict.weight(id) } else { 0.0 })
        .collect();
    let maskable = weights.iter().filter(|&&w| w > 0.0).count();
    if maskable == 0 {
        return Err(Error::EmptySentence);
    }
    let m = mask_count(maskable, mask_fraction);
    let mut index = CumulativeIndex::new(weights);
    let mut picked = Vec::with_capacity(m);
    for _ in 0..m {
        let pos = draw(&index, rng)?;
        picked.push(pos);
        index.set(pos, 0.0);
    }
    picked.sort_unstable();
    Ok(picked)
}

fn draw<R: Rng + ?Sized>(index: &CumulativeIndex, rng: &mut R) -> Result<usize> {
    let total = index.total();
    loop {
        let u = rng.gen::<f64>() * total;
        if u < total {
            return index.sample(u);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{count_frequencies, TokenizedCorpus};
    use crate::rng;

    fn dict_with(weights: &[f64]) -> WeightDictionary {
        WeightDictionary::from_weights(
            weights.to_vec(),
            vec![true; weights.len()],
            WeightSource::Uniform,
        )
        .unwrap()
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_frequency(100, 10.0), 100.0);
        assert_eq!(clip_frequency(3, 10.0), 10.0);
        assert_eq!(clip_frequency(10, 10.0), 10.0);
        assert_eq!(clip_frequency(0, 10.0), 10.0);
    }

    #[test]
    fn power_law_weight() {
        assert_eq!(frequency_weight(100.0, 0.5), 0.1);
        assert_eq!(frequency_weight(1.0, 0.5), 1.0);
        assert_eq!(frequency_weight(1.0, 3.7), 1.0);
        assert!((frequency_weight(10.0, 0.5) - 0.316_227_766_016_837_94).abs() < 1e-16);
    }

    #[test]
    fn frequency_weights_from_table() {
        let vocab = Vocab::synthetic(2);
        let (a, b) = (5, 6);
        let mut sentences = vec![vec![a; 100]];
        sentences.push(vec![b; 4]);
        let corpus = TokenizedCorpus::new(sentences, &vocab).unwrap();
        let table = count_frequencies(&corpus, &vocab).unwrap();
        let dict = build_frequency_weights(&table, &SamplerConfig::default()).unwrap();
        assert_eq!(dict.weight(a), 0.1);
        assert_eq!(dict.weight(b), 10f64.powf(-0.5));
        // absent tokens sit on the clipping floor
        assert_eq!(dict.weight(0), 10f64.powf(-0.5));
    }

    #[test]
    fn dynamic_weight_values() {
        assert_eq!(dynamic_weight(0.0, 0.2).value, 1.0);
        assert!((dynamic_weight(0.2, 0.2).value - std::f64::consts::E).abs() < 1e-15);
        let w = dynamic_weight(2.0, 0.2);
        assert!((w.value - 22026.465794806718).abs() < 1e-9);
        assert!(!w.saturated);
        let big = dynamic_weight(1e6, 0.2);
        assert_eq!(big.value, WEIGHT_CEILING);
        assert!(big.saturated);
    }

    #[test]
    fn init_dynamic_is_all_ones() {
        let vocab = Vocab::synthetic(20);
        let d = init_dynamic_weights(&vocab, 0.2);
        assert_eq!(d.len(), 25);
        assert!(d.weights().iter().all(|&w| w == 1.0));
        assert_eq!(d.total(), 25.0);
        let p = sentence_probabilities(&[5, 6, 7, 8], &d).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn empty_update_only_bumps_version() {
        let vocab = Vocab::synthetic(5);
        let mut d = init_dynamic_weights(&vocab, 0.2);
        let before = d.weights().to_vec();
        d.update_weights(&BTreeMap::new(), 0.2, None).unwrap();
        assert_eq!(d.weights(), &before[..]);
        assert_eq!(d.version(), 1);
    }

    #[test]
    fn update_rejects_bad_batches_atomically() {
        let vocab = Vocab::synthetic(5);
        let mut d = init_dynamic_weights(&vocab, 0.2);
        let losses = BTreeMap::from([(5, 1.0), (6, f64::NAN)]);
        assert!(matches!(d.update_weights(&losses, 0.2, None), Err(Error::NonFinite(_))));
        assert_eq!(d.weight(5), 1.0);
        assert_eq!(d.version(), 0);
        let special = BTreeMap::from([(vocab.mask_id(), 1.0)]);
        assert!(d.update_weights(&special, 0.2, None).is_err());
    }

    #[test]
    fn update_follows_loss_order_and_counts_saturation() {
        let vocab = Vocab::synthetic(5);
        let mut d = init_dynamic_weights(&vocab, 0.2);
        let losses = BTreeMap::from([(5, 0.3), (6, 1.1), (7, 0.7), (8, 50.0)]);
        let s = d.update_weights(&losses, 0.2, None).unwrap();
        assert_eq!(s, UpdateSummary { updated: 4, saturated: 1 });
        assert!(d.weight(5) < d.weight(7) && d.weight(7) < d.weight(6));
        assert_eq!(d.weight(8), WEIGHT_CEILING);
        assert_eq!(d.weight(9), 1.0);
    }

    #[test]
    fn smoothing_blends_old_and_new() {
        let vocab = Vocab::synthetic(5);
        let mut d = init_dynamic_weights(&vocab, 0.2);
        d.update_weights(&BTreeMap::from([(5, 0.2)]), 0.2, Some(0.5)).unwrap();
        assert!((d.weight(5) - 0.5 * (1.0 + std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn probabilities_normalise_per_position() {
        let d = dict_with(&[1.0, 1.0, 2.0]);
        assert_eq!(sentence_probabilities(&[0, 1, 2], &d).unwrap(), vec![0.25, 0.25, 0.5]);
        let d = dict_with(&[1.0, 2.0]);
        assert_eq!(sentence_probabilities(&[0, 0, 1], &d).unwrap(), vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn probabilities_skip_specials() {
        let vocab = Vocab::synthetic(3);
        let d = WeightDictionary::uniform(&vocab);
        let p = sentence_probabilities(&[vocab.cls_id(), 5, 6, vocab.sep_id()], &d).unwrap();
        assert_eq!(p, vec![0.0, 0.5, 0.5, 0.0]);
        assert!(matches!(
            sentence_probabilities(&[vocab.unk_id(), vocab.pad_id()], &d),
            Err(Error::EmptySentence)
        ));
    }

    #[test]
    fn mask_count_rounding() {
        assert_eq!(mask_count(20, 0.15), 3);
        assert_eq!(mask_count(2, 0.15), 1);
        assert_eq!(mask_count(10, 0.15), 2); // 1.5 rounds away from zero
        assert_eq!(mask_count(3, 0.99), 3);
    }

    #[test]
    fn sampling_returns_distinct_sorted_positions() {
        let vocab = Vocab::synthetic(30);
        let d = WeightDictionary::uniform(&vocab);
        let sentence: Vec<TokenId> = (5..25).collect();
        let mut r = rng::seeded(1);
        for _ in 0..200 {
            let p = sample_mask_positions(&sentence, &d, 0.15, &mut r).unwrap();
            assert_eq!(p.len(), 3);
            assert!(p.windows(2).all(|w| w[0] < w[1]));
        }
        let short = sample_mask_positions(&[5, 6], &d, 0.15, &mut r).unwrap();
        assert_eq!(short.len(), 1);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let vocab = Vocab::synthetic(30);
        let d = WeightDictionary::uniform(&vocab);
        let sentence: Vec<TokenId> = (5..35).collect();
        let a = sample_mask_positions(&sentence, &d, 0.3, &mut rng::seeded(9)).unwrap();
        let b = sample_mask_positions(&sentence, &d, 0.3, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_pick_rate_matches_closed_form() {
        let d = dict_with(&[1.0, 3.0]);
        let mut r = rng::seeded(2024);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| sample_mask_positions(&[0, 1], &d, 0.15, &mut r).unwrap() == [1])
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((rate - 0.75).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn snapshot_round_trip() {
        let vocab = Vocab::synthetic(4);
        let mut d = init_dynamic_weights(&vocab, 0.2);
        d.update_weights(&BTreeMap::from([(6, 1.234)]), 0.2, None).unwrap();
        let mut buf = Vec::new();
        d.write_tsv(&vocab, &mut buf).unwrap();
        assert!(buf.starts_with(b"# source=dynamic tau=0.2 version=1\ntoken\tid\tweight\n"));
        let back = WeightDictionary::read_tsv(&buf[..], &vocab).unwrap();
        assert_eq!(back.weights(), d.weights());
        assert_eq!(back.version(), 1);
        assert_eq!(back.source(), d.source());
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        for bad in [
            SamplerConfig { theta: 0.5, ..Default::default() },
            SamplerConfig { alpha: 0.0, ..Default::default() },
            SamplerConfig { tau: -1.0, ..Default::default() },
            SamplerConfig { mask_fraction: 1.0, ..Default::default() },
            SamplerConfig { smoothing: Some(1.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
