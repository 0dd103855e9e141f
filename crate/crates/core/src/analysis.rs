//! Embedding-space diagnostics over frequency-rank bins.
//!
//! All neighbour searches are exact brute force under Euclidean distance,
//! with ties broken by ascending token id.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyTable, TokenId};
use crate::error::{Error, Result};
use crate::model::MlmModel;
use crate::trainer::TrainMetrics;

/// Reference vocabulary size the default bin edges are expressed against.
pub const REFERENCE_VOCAB: usize = 30_000;
/// Default bin edges at the reference vocabulary size.
pub const REFERENCE_BIN_EDGES: [usize; 5] = [0, 100, 500, 5_000, 10_000];
/// Common tokens are ranks `[0, 10k)`, rare tokens `[10k, 20k)` at the
/// reference size.
pub const REFERENCE_COMMON_END: usize = 10_000;
pub const REFERENCE_RARE_END: usize = 20_000;

/// Scales a reference-size rank edge to `vocab_size`:
/// `floor(edge * vocab_size / 30000)`.
pub fn scale_edge(edge: usize, vocab_size: usize) -> usize {
    ((edge as u128 * vocab_size as u128) / REFERENCE_VOCAB as u128) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBins {
    ranges: Vec<Range<usize>>,
}

impl FrequencyBins {
    pub fn new(ranges: Vec<Range<usize>>, vocab_size: usize) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::config("at least one frequency bin is required"));
        }
        for (i, r) in ranges.iter().enumerate() {
            if r.start >= r.end {
                return Err(Error::config(format!("bin {}..{} is empty", r.start, r.end)));
            }
            if r.end > vocab_size {
                return Err(Error::config(format!(
                    "bin {}..{} exceeds vocab size {vocab_size}",
                    r.start, r.end
                )));
            }
            if i > 0 && ranges[i - 1].end > r.start {
                return Err(Error::config("bins must be disjoint and ascending"));
            }
        }
        Ok(Self { ranges })
    }

    /// Reference edges scaled to `vocab_size`. Edges that collapse at small
    /// sizes are pushed apart so every bin holds at least one rank.
    pub fn auto(vocab_size: usize) -> Result<Self> {
        let mut edges: Vec<usize> = REFERENCE_BIN_EDGES
            .iter()
            .map(|&e| scale_edge(e, vocab_size))
            .collect();
        for i in 1..edges.len() {
            edges[i] = edges[i].max(edges[i - 1] + 1);
        }
        let ranges = edges.windows(2).map(|w| w[0]..w[1]).collect();
        Self::new(ranges, vocab_size)
    }

    /// Parses `auto` or a comma list of `start-end` ranges.
    pub fn parse(spec: &str, vocab_size: usize) -> Result<Self> {
        if spec.trim() == "auto" {
            return Self::auto(vocab_size);
        }
        let ranges = spec
            .split(',')
            .map(|part| parse_range(part.trim()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranges, vocab_size)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Index of the bin containing `rank`.
    pub fn bin_of(&self, rank: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&rank))
    }
}

/// Parses `start-end` into a half-open range.
pub fn parse_range(s: &str) -> Result<Range<usize>> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| Error::config(format!("expected start-end, got {s:?}")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<usize>()
            .map_err(|_| Error::config(format!("bad range bound {x:?}")))
    };
    Ok(parse(a)?..parse(b)?)
}

/// Borrowed `rows x dim` row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Embeddings<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::config("embedding data is not a whole number of rows"));
        }
        Ok(Self { data, dim })
    }

    pub fn of(model: &'a MlmModel) -> Self {
        Self {
            data: &model.embeddings,
            dim: model.dim(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &'a [f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_k(emb: &Embeddings, k: usize) -> Result<()> {
    if k == 0 || k >= emb.rows() {
        return Err(Error::domain(format!(
            "k must be in 1..{}, got {k}",
            emb.rows()
        )));
    }
    Ok(())
}

/// The `k` nearest other tokens with their distances, closest first.
pub fn nearest_with_distances(emb: &Embeddings, token: TokenId, k: usize) -> Result<Vec<(TokenId, f64)>> {
    check_k(emb, k)?;
    let q = token as usize;
    if q >= emb.rows() {
        return Err(Error::domain(format!("token {token} outside embedding matrix")));
    }
    let mut all: Vec<(TokenId, f64)> = (0..emb.rows())
        .filter(|&j| j != q)
        .map(|j| (j as TokenId, emb.distance(q, j)))
        .collect();
    let cmp = |a: &(TokenId, f64), b: &(TokenId, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    Ok(all)
}

pub fn nearest_neighbors(emb: &Embeddings, token: TokenId, k: usize) -> Result<Vec<TokenId>> {
    Ok(nearest_with_distances(emb, token, k)?
        .into_iter()
        .map(|(id, _)| id)
        .collect())
}

fn bin_tokens<'t>(table: &'t FrequencyTable, bin: &Range<usize>) -> Result<&'t [TokenId]> {
    if bin.start >= bin.end {
        return Err(Error::domain(format!("rank range {}..{} is empty", bin.start, bin.end)));
    }
    table
        .ranking()
        .get(bin.clone())
        .ok_or_else(|| Error::domain(format!("rank range {}..{} exceeds vocab", bin.start, bin.end)))
}

fn check_shape(emb: &Embeddings, table: &FrequencyTable) -> Result<()> {
    if emb.rows() != table.len() {
        return Err(Error::Integrity(format!(
            "embedding matrix has {} rows but frequency table covers {} tokens",
            emb.rows(),
            table.len()
        )));
    }
    Ok(())
}

/// Mean over tokens ranked in `target` of the fraction of their `k`
/// nearest neighbours ranked in `common`.
pub fn common_portion(
    emb: &Embeddings,
    table: &FrequencyTable,
    common: &Range<usize>,
    target: &Range<usize>,
    k: usize,
) -> Result<f64> {
    check_shape(emb, table)?;
    check_k(emb, k)?;
    let targets = bin_tokens(table, target)?;
    let hits = targets
        .par_iter()
        .map(|&t| {
            nearest_neighbors(emb, t, k).map(|nn| {
                nn.iter().filter(|&&n| common.contains(&table.rank(n))).count()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = hits.iter().map(|&h| h as f64 / k as f64).sum::<f64>() / targets.len() as f64;
    Ok(mean)
}

pub fn mean_l2_norm(emb: &Embeddings, table: &FrequencyTable, bin: &Range<usize>) -> Result<f64> {
    check_shape(emb, table)?;
    let tokens = bin_tokens(table, bin)?;
    let sum: f64 = tokens
        .iter()
        .map(|&t| emb.row(t as usize).iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum();
    Ok(sum / tokens.len() as f64)
}

/// Mean over bin tokens of the mean distance to their `k` nearest
/// neighbours among all tokens.
pub fn mean_knn_distance(emb: &Embeddings, table: &FrequencyTable, bin: &Range<usize>, k: usize) -> Result<f64> {
    check_shape(emb, table)?;
    check_k(emb, k)?;
    let tokens = bin_tokens(table, bin)?;
    let per_token = tokens
        .par_iter()
        .map(|&t| {
            nearest_with_distances(emb, t, k)
                .map(|nn| nn.iter().map(|(_, d)| d).sum::<f64>() / k as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_token.iter().sum::<f64>() / tokens.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinShare {
    pub start: usize,
    pub end: usize,
    pub masked: u64,
    pub share: f64,
}

/// Share of all masked positions (over every epoch) whose token rank falls
/// in each bin.
pub fn mask_coverage_report(
    metrics: &TrainMetrics,
    table: &FrequencyTable,
    bins: &FrequencyBins,
) -> Result<Vec<BinShare>> {
    let hist = metrics.total_histogram();
    if hist.len() != table.len() {
        return Err(Error::Integrity("histogram and frequency table differ in size".into()));
    }
    coverage_from_histogram(&hist, table, bins)
}

pub fn coverage_from_histogram(
    hist: &[u64],
    table: &FrequencyTable,
    bins: &FrequencyBins,
) -> Result<Vec<BinShare>> {
    let total: u64 = hist.iter().sum();
    let mut masked = vec![0u64; bins.len()];
    for (id, &c) in hist.iter().enumerate() {
        if let Some(b) = bins.bin_of(table.rank(id as TokenId)) {
            masked[b] += c;
        }
    }
    Ok(bins
        .ranges()
        .iter()
        .zip(masked)
        .map(|(r, m)| BinShare {
            start: r.start,
            end: r.end,
            masked: m,
            share: if total == 0 { 0.0 } else { m as f64 / total as f64 },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub bins: FrequencyBins,
    pub knn: Vec<usize>,
    /// Neighbourhood size for the common-portion statistic.
    pub nn_k: usize,
    pub common_range: Range<usize>,
    pub rare_range: Range<usize>,
}

impl AnalysisConfig {
    /// Scaled default bins, k in {3, 5, 7}, 10 neighbours, common/rare rank
    /// ranges scaled from `[0, 10k)` / `[10k, 20k)`.
    pub fn auto(vocab_size: usize) -> Result<Self> {
        let common_end = scale_edge(REFERENCE_COMMON_END, vocab_size).max(1);
        let rare_end = scale_edge(REFERENCE_RARE_END, vocab_size).max(common_end + 1);
        Ok(Self {
            bins: FrequencyBins::auto(vocab_size)?,
            knn: vec![3, 5, 7],
            nn_k: 10.min(vocab_size.saturating_sub(1)).max(1),
            common_range: 0..common_end,
            rare_range: common_end..rare_end.min(vocab_size),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub start: usize,
    pub end: usize,
    pub mean_l2_norm: f64,
    /// `(k, mean k-NN distance)` for each requested k.
    pub mean_knn_distance: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub vocab_size: usize,
    pub dim: usize,
    pub config: AnalysisConfig,
    pub bins: Vec<BinStats>,
    /// Portion of common tokens among neighbours of rare tokens.
    pub common_portion_rare: f64,
    /// Portion of common tokens among neighbours of common tokens.
    pub common_portion_common: f64,
}

pub fn analyze(emb: &Embeddings, table: &FrequencyTable, config: &AnalysisConfig) -> Result<AnalysisReport> {
    check_shape(emb, table)?;
    let bins = config
        .bins
        .ranges()
        .iter()
        .map(|bin| {
            Ok(BinStats {
                start: bin.start,
                end: bin.end,
                mean_l2_norm: mean_l2_norm(emb, table, bin)?,
                mean_knn_distance: config
                    .knn
                    .iter()
                    .map(|&k| Ok((k, mean_knn_distance(emb, table, bin, k)?)))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisReport {
        vocab_size: emb.rows(),
        dim: emb.dim(),
        config: config.clone(),
        bins,
        common_portion_rare: common_portion(emb, table, &config.common_range, &config.rare_range, config.nn_k)?,
        common_portion_common: common_portion(
            emb,
            table,
            &config.common_range,
            &config.common_range,
            config.nn_k,
        )?,
    })
}

impl AnalysisReport {
    /// Fixed-width text rendering: one table of common-token portions and
    /// one of per-bin norm statistics.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(s, "vocab_size={} dim={}", self.vocab_size, self.dim);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Common-token portion among {} nearest neighbours (common ranks {}-{}, rare ranks {}-{})",
            c.nn_k, c.common_range.start, c.common_range.end, c.rare_range.start, c.rare_range.end
        );
        let _ = writeln!(s, "{:<14}{:>14}{:>14}", "", "Rare Tokens", "Common Tokens");
        let _ = writeln!(
            s,
            "{:<14}{:>14.4}{:>14.4}",
            "portion", self.common_portion_rare, self.common_portion_common
        );
        let _ = writeln!(s);
        let _ = write!(s, "{:<28}", "Rank of token frequency");
        for b in &self.bins {
            let _ = write!(s, "{:>12}", format!("{}-{}", b.start, b.end));
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<28}", "Mean l2-norm");
        for b in &self.bins {
            let _ = write!(s, "{:>12.4}", b.mean_l2_norm);
        }
        let _ = writeln!(s);
        for (i, k) in c.knn.iter().enumerate() {
            let _ = write!(s, "{:<28}", format!("Mean k-NN l2-norm (k={k})"));
            for b in &self.bins {
                let _ = write!(s, "{:>12.4}", b.mean_knn_distance[i].1);
            }
            let _ = writeln!(s);
        }
        s
    }
}
