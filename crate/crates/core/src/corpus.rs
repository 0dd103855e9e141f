//! Vocabulary, tokenized corpora and frequency statistics.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub type TokenId = u32;

/// Surface forms of the five reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecialTokens {
    pub pad: String,
    pub unk: String,
    pub cls: String,
    pub sep: String,
    pub mask: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            pad: "[PAD]".into(),
            unk: "[UNK]".into(),
            cls: "[CLS]".into(),
            sep: "[SEP]".into(),
            mask: "[MASK]".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    pad: TokenId,
    unk: TokenId,
    cls: TokenId,
    sep: TokenId,
    mask: TokenId,
    /// Ids that may be selected for masking or drawn as random replacements.
    pool: Vec<TokenId>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, specials: &SpecialTokens) -> Result<Self> {
        if tokens.len() > TokenId::MAX as usize {
            return Err(Error::config("vocabulary too large"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::config(format!(
                    "vocab entry {id} is empty or contains whitespace"
                )));
            }
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::config(format!("duplicate vocab entry {tok:?}")));
            }
        }
        let lookup = |name: &str, tok: &str| {
            index.get(tok).copied().ok_or_else(|| {
                Error::config(format!("special token {name} ({tok:?}) missing from vocab"))
            })
        };
        let pad = lookup("pad", &specials.pad)?;
        let unk = lookup("unk", &specials.unk)?;
        let cls = lookup("cls", &specials.cls)?;
        let sep = lookup("sep", &specials.sep)?;
        let mask = lookup("mask", &specials.mask)?;
        let mut ids = [pad, unk, cls, sep, mask];
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("special tokens must have distinct ids"));
        }
        let pool = (0..tokens.len() as TokenId)
            .filter(|id| !ids.contains(id))
            .collect();
        Ok(Self {
            tokens,
            index,
            pad,
            unk,
            cls,
            sep,
            mask,
            pool,
        })
    }

    /// The five default special tokens (ids 0..5) followed by `words`
    /// placeholder tokens `w00000`, `w00001`, ...
    pub fn synthetic(words: usize) -> Self {
        let specials = SpecialTokens::default();
        let mut tokens = vec![
            specials.pad.clone(),
            specials.unk.clone(),
            specials.cls.clone(),
            specials.sep.clone(),
            specials.mask.clone(),
        ];
        tokens.extend((0..words).map(|i| format!("w{i:05}")));
        Self::new(tokens, &specials).expect("synthetic vocab is well formed")
    }

    /// Reads a vocab file: one token per line, line number is the id.
    pub fn load(path: &Path, specials: &SpecialTokens) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), specials)
    }

    pub fn from_reader(reader: impl BufRead, specials: &SpecialTokens) -> Result<Self> {
        let tokens = reader
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<std::io::Result<Vec<_>>>()?;
        Self::new(tokens, specials)
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for tok in &self.tokens {
            writeln!(out, "{tok}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad
    }
    pub fn unk_id(&self) -> TokenId {
        self.unk
    }
    pub fn cls_id(&self) -> TokenId {
        self.cls
    }
    pub fn sep_id(&self) -> TokenId {
        self.sep
    }
    pub fn mask_id(&self) -> TokenId {
        self.mask
    }

    pub fn special_ids(&self) -> [TokenId; 5] {
        [self.pad, self.unk, self.cls, self.sep, self.mask]
    }

    /// Specials and UNK are never masked.
    pub fn is_maskable(&self, id: TokenId) -> bool {
        (id as usize) < self.len() && !self.special_ids().contains(&id)
    }

    /// Every maskable id in ascending order; doubles as the random
    /// replacement pool of the 80/10/10 rule.
    pub fn maskable_ids(&self) -> &[TokenId] {
        &self.pool
    }

    pub fn maskable_mask(&self) -> Vec<bool> {
        (0..self.len() as TokenId)
            .map(|id| self.is_maskable(id))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCorpus {
    sentences: Vec<Vec<TokenId>>,
    vocab_size: usize,
}

impl TokenizedCorpus {
    pub fn new(sentences: Vec<Vec<TokenId>>, vocab: &Vocab) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Format(format!("sentence {i} is empty")));
            }
            if let Some(bad) = s.iter().find(|&&id| id as usize >= vocab.len()) {
                return Err(Error::Format(format!(
                    "sentence {i} contains id {bad} outside vocab of size {}",
                    vocab.len()
                )));
            }
        }
        Ok(Self {
            sentences,
            vocab_size: vocab.len(),
        })
    }

    pub fn sentences(&self) -> &[Vec<TokenId>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Serialises in the corpus file format: one sentence per line,
    /// tokens separated by single spaces.
    pub fn write_text(&self, vocab: &Vocab, mut out: impl Write) -> std::io::Result<()> {
        for s in &self.sentences {
            let mut first = true;
            for &id in s {
                if !first {
                    out.write_all(b" ")?;
                }
                out.write_all(vocab.token(id).as_bytes())?;
                first = false;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Tokenizes a line-oriented text stream against `vocab`. Unknown tokens
/// become UNK; blank lines are skipped.
pub fn ingest_corpus(source: impl BufRead, vocab: &Vocab) -> Result<TokenizedCorpus> {
    let mut sentences = Vec::new();
    for line in source.lines() {
        let line = line?;
        let ids: Vec<TokenId> = line
            .split_whitespace()
            .map(|tok| vocab.id(tok).unwrap_or(vocab.unk_id()))
            .collect();
        if !ids.is_empty() {
            sentences.push(ids);
        }
    }
    Ok(TokenizedCorpus {
        sentences,
        vocab_size: vocab.len(),
    })
}

pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<TokenizedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_corpus(BufReader::new(file), vocab).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    total: u64,
    ranking: Vec<TokenId>,
    rank_of: Vec<usize>,
    maskable: Vec<bool>,
}

impl FrequencyTable {
    /// Builds a table from raw counts. Ranking is by count descending, ties
    /// by ascending id.
    pub fn from_counts(counts: Vec<u64>, maskable: Vec<bool>) -> Result<Self> {
        if counts.len() != maskable.len() {
            return Err(Error::config("counts and maskable flags differ in length"));
        }
        let total = counts.iter().sum();
        let mut ranking: Vec<TokenId> = (0..counts.len() as TokenId).collect();
        ranking.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
        let mut rank_of = vec![0; counts.len()];
        for (rank, &id) in ranking.iter().enumerate() {
            rank_of[id as usize] = rank;
        }
        Ok(Self {
            counts,
            total,
            ranking,
            rank_of,
            maskable,
        })
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Token ids, most frequent first.
    pub fn ranking(&self) -> &[TokenId] {
        &self.ranking
    }

    /// Zero-based frequency rank of `id`.
    pub fn rank(&self, id: TokenId) -> usize {
        self.rank_of[id as usize]
    }

    pub fn is_maskable(&self, id: TokenId) -> bool {
        self.maskable[id as usize]
    }

    pub fn maskable(&self) -> &[bool] {
        &self.maskable
    }

    /// TSV export with columns `token, id, count, rank`, rows in rank order.
    pub fn write_tsv(&self, vocab: &Vocab, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "token\tid\tcount\trank")?;
        for (rank, &id) in self.ranking.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", vocab.token(id), id, self.count(id), rank)?;
        }
        Ok(())
    }

    /// Reads the TSV export back. Lines starting with `#` are ignored.
    pub fn read_tsv(reader: impl BufRead, vocab: &Vocab) -> Result<Self> {
        let mut counts = vec![None; vocab.len()];
        let mut saw_header = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                saw_header = true;
                if line.trim_end() != "token\tid\tcount\trank" {
                    return Err(Error::Format(format!("unexpected header {line:?}")));
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("line {}: malformed row {line:?}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            let id: TokenId = fields[1].parse().map_err(|_| bad())?;
            let count: u64 = fields[2].parse().map_err(|_| bad())?;
            if id as usize >= vocab.len() || vocab.token(id) != fields[0] {
                return Err(Error::Integrity(format!(
                    "frequency row {:?} does not match vocab",
                    fields[0]
                )));
            }
            counts[id as usize] = Some(count);
        }
        let counts = counts
            .into_iter()
            .enumerate()
            .map(|(id, c)| c.ok_or_else(|| Error::Integrity(format!("no frequency row for id {id}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_counts(counts, vocab.maskable_mask())
    }
}

/// Exact per-token occurrence counts over the corpus.
pub fn count_frequencies(corpus: &TokenizedCorpus, vocab: &Vocab) -> Result<FrequencyTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if corpus.vocab_size() != vocab.len() {
        return Err(Error::Integrity(format!(
            "corpus was built for a vocab of {} tokens, got {}",
            corpus.vocab_size(),
            vocab.len()
        )));
    }
    let mut counts = vec![0u64; vocab.len()];
    for s in corpus.sentences() {
        for &id in s {
            counts[id as usize] += 1;
        }
    }
    FrequencyTable::from_counts(counts, vocab.maskable_mask())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfParams {
    /// Total vocabulary size, the five special tokens included.
    pub vocab_size: usize,
    pub num_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub exponent: f64,
}

impl ZipfParams {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 10 {
            return Err(Error::config("vocab_size must be at least 10"));
        }
        if self.num_sentences == 0 {
            return Err(Error::config("num_sentences must be positive"));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::config(
                "sentence length range must satisfy 2 <= min <= max",
            ));
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(Error::config("zipf exponent must be positive and finite"));
        }
        Ok(())
    }
}

/// Synthetic long-tailed corpus. Word `w{r-1}` (id `r + 4`) has Zipf rank `r`,
/// so ids are in expected-frequency order. Special ids are never emitted.
pub fn generate_zipf_corpus(params: &ZipfParams, seed: u64) -> Result<(Vocab, TokenizedCorpus)> {
    params.validate()?;
    let vocab = Vocab::synthetic(params.vocab_size - 5);
    let words = vocab.maskable_ids();
    let law = WeightedIndex::new(
        (1..=words.len()).map(|rank| (rank as f64).powf(-params.exponent)),
    )
    .map_err(|e| Error::config(format!("zipf weights: {e}")))?;
    let mut rng = rng::stream(seed, Stream::Corpus);
    let sentences = (0..params.num_sentences)
        .map(|_| {
            let len = rng.gen_range(params.min_len..=params.max_len);
            (0..len).map(|_| words[law.sample(&mut rng)]).collect()
        })
        .collect();
    let corpus = TokenizedCorpus::new(sentences, &vocab)?;
    Ok((vocab, corpus))
}

pub fn write_vocab_file(vocab: &Vocab, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    vocab.write(&mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus_file(corpus: &TokenizedCorpus, vocab: &Vocab, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    corpus
        .write_text(vocab, &mut out)
        .map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
