//! Shared test oracles. Nothing here calls into the crate's numeric code:
//! each helper recomputes its quantity from first principles, mostly in
//! 256-bit binary floating point.

#![allow(dead_code)]

use std::ops::Range;

use dashu_float::FBig;
use rand::Rng;

pub const PREC: usize = 256;

pub type Big = FBig;

pub fn big(x: f64) -> Big {
    Big::try_from(x).expect("finite").with_precision(PREC).value()
}

pub fn to_f64(x: &Big) -> f64 {
    x.to_f64().value()
}

pub fn rel_err(got: f64, want: &Big) -> f64 {
    let w = to_f64(want);
    let diff = to_f64(&(big(got) - want.clone()));
    if w == 0.0 {
        diff.abs()
    } else {
        (diff / w).abs()
    }
}

/// `max(f, theta) ^ -alpha`.
pub fn frequency_weight(freq: u64, theta: f64, alpha: f64) -> Big {
    let f = big(freq as f64);
    let t = big(theta);
    let clipped = if f > t { f } else { t };
    // x^-a = exp(-a ln x)
    (-(big(alpha) * clipped.ln())).exp()
}

pub fn exp_ratio(loss: f64, tau: f64) -> Big {
    (big(loss) / big(tau)).exp()
}

pub fn distance(a: &[f64], b: &[f64]) -> Big {
    let mut acc = big(0.0);
    for (x, y) in a.iter().zip(b) {
        let d = big(*x) - big(*y);
        acc += d.clone() * d;
    }
    acc.sqrt()
}

pub fn norm(a: &[f64]) -> Big {
    let zero = vec![0.0; a.len()];
    distance(a, &zero)
}

/// All other rows sorted by (distance, id).
pub fn brute_neighbors(rows: &[Vec<f64>], q: usize) -> Vec<(usize, Big)> {
    let mut all: Vec<(usize, Big)> = (0..rows.len())
        .filter(|&j| j != q)
        .map(|j| (j, distance(&rows[q], &rows[j])))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

/// Token ids ordered by descending count, ties by ascending id.
pub fn ranking(counts: &[u64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..counts.len()).collect();
    ids.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    ids
}

pub fn rank_of(counts: &[u64]) -> Vec<usize> {
    let mut rank = vec![0; counts.len()];
    for (r, id) in ranking(counts).into_iter().enumerate() {
        rank[id] = r;
    }
    rank
}

pub fn brute_common_portion(
    rows: &[Vec<f64>],
    counts: &[u64],
    common: &Range<usize>,
    target: &Range<usize>,
    k: usize,
) -> Big {
    let order = ranking(counts);
    let rank = rank_of(counts);
    let mut sum = big(0.0);
    for &t in &order[target.clone()] {
        let hits = brute_neighbors(rows, t)
            .iter()
            .take(k)
            .filter(|(n, _)| common.contains(&rank[*n]))
            .count();
        sum += big(hits as f64) / big(k as f64);
    }
    sum / big(target.len() as f64)
}

pub fn brute_mean_norm(rows: &[Vec<f64>], counts: &[u64], bin: &Range<usize>) -> Big {
    let order = ranking(counts);
    let mut sum = big(0.0);
    for &t in &order[bin.clone()] {
        sum += norm(&rows[t]);
    }
    sum / big(bin.len() as f64)
}

pub fn brute_mean_knn(rows: &[Vec<f64>], counts: &[u64], bin: &Range<usize>, k: usize) -> Big {
    let order = ranking(counts);
    let mut sum = big(0.0);
    for &t in &order[bin.clone()] {
        let mut s = big(0.0);
        for (_, d) in brute_neighbors(rows, t).into_iter().take(k) {
            s += d;
        }
        sum += s / big(k as f64);
    }
    sum / big(bin.len() as f64)
}

/// Smallest `i` with `w[0] + ... + w[i] > u`, by linear scan.
pub fn linear_scan(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > u {
            return i;
        }
    }
    weights.len() - 1
}

/// Softmax cross-entropy of `label` given `logits`, in high precision.
pub fn cross_entropy(logits: &[Big], label: usize) -> Big {
    let mut sum = big(0.0);
    for z in logits {
        sum += z.clone().exp();
    }
    sum.ln() - logits[label].clone()
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

/// Pearson chi-square statistic of `observed` against `expected` counts.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}
