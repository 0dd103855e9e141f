//! Context-mean masked-token predictor.
//!
//! For a masked position `p` the hidden vector is the mean embedding of the
//! tokens within `context_radius` of `p` (excluding `p` itself and any
//! position currently holding MASK). Logits are `W h + b`, and the loss is
//! the softmax cross-entropy of the original token.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::masking::MaskedExample;
use crate::rng::{self, Stream};

const CHECKPOINT_MAGIC: &[u8; 4] = b"WSMC";
const CHECKPOINT_VERSION: u32 = 1;
const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub context_radius: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            context_radius: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("model dim must be positive"));
        }
        if self.context_radius == 0 {
            return Err(Error::config("context radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmModel {
    vocab_size: usize,
    dim: usize,
    context_radius: usize,
    seed: u64,
    /// Token embeddings, `vocab_size x dim`, row-major.
    pub embeddings: Vec<f64>,
    /// Output projection, `vocab_size x dim`, row-major.
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlmModel {
    /// Embeddings and projection uniform in (-0.05, 0.05), bias zero.
    pub fn new(vocab_size: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::config("vocab size must be positive"));
        }
        let mut rng = rng::stream(seed, Stream::Init);
        let n = vocab_size * config.dim;
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE)).collect()
        };
        let embeddings = draw(n);
        let projection = draw(n);
        Ok(Self {
            vocab_size,
            dim: config.dim,
            context_radius: config.context_radius,
            seed,
            embeddings,
            projection,
            bias: vec![0.0; vocab_size],
        })
    }

    /// Builds a model from explicit parameters.
    pub fn from_parts(
        vocab_size: usize,
        config: ModelConfig,
        seed: u64,
        embeddings: Vec<f64>,
        projection: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let n = vocab_size * config.dim;
        if embeddings.len() != n || projection.len() != n || bias.len() != vocab_size {
            return Err(Error::config("parameter shapes do not match vocab_size x dim"));
        }
        let model = Self {
            vocab_size,
            dim: config.dim,
            context_radius: config.context_radius,
            seed,
            embeddings,
            projection,
            bias,
        };
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn context_radius(&self) -> usize {
        self.context_radius
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            context_radius: self.context_radius,
        }
    }

    pub fn embedding(&self, id: TokenId) -> &[f64] {
        let i = id as usize * self.dim;
        &self.embeddings[i..i + self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.projection)
            .chain(&self.bias)
            .all(|x| x.is_finite())
    }

    pub fn write_checkpoint(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.vocab_size as u64).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.context_radius as u32).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for x in self.embeddings.iter().chain(&self.projection).chain(&self.bias) {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        input.read_exact(&mut b8)?;
        let vocab_size = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b4)?;
        let context_radius = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            (0..len)
                .map(|_| {
                    input.read_exact(&mut b8)?;
                    Ok(f64::from_le_bytes(b8))
                })
                .collect()
        };
        let n = vocab_size * dim;
        let embeddings = read_vec(n)?;
        let projection = read_vec(n)?;
        let bias = read_vec(vocab_size)?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Self::from_parts(
            vocab_size,
            ModelConfig { dim, context_radius },
            seed,
            embeddings,
            projection,
            bias,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_checkpoint(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }

    /// Embedding export: `token, id, d0 .. d{dim-1}`.
    pub fn write_embeddings_tsv(&self, vocab: &Vocab, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "token\tid")?;
        for d in 0..self.dim {
            write!(out, "\td{d}")?;
        }
        writeln!(out)?;
        for id in 0..self.vocab_size as TokenId {
            write!(out, "{}\t{}", vocab.token(id), id)?;
            for x in self.embedding(id) {
                write!(out, "\t{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Read-only view of the embedding matrix, `vocab_size x dim` row-major.
pub fn token_embeddings(model: &MlmModel) -> &[f64] {
    &model.embeddings
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionRecord {
    pub position: usize,
    pub label: TokenId,
    /// Token ids averaged into `hidden`.
    pub context: Vec<TokenId>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardRecord {
    pub positions: Vec<PositionRecord>,
}

impl ForwardRecord {
    pub fn total_loss(&self) -> f64 {
        self.positions.iter().map(|p| p.loss).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.loss.is_finite())
    }
}

pub fn forward(model: &MlmModel, example: &MaskedExample, mask_id: TokenId) -> Result<ForwardRecord> {
    if example.masked_positions.is_empty() {
        return Err(Error::domain("example has no masked positions"));
    }
    let len = example.input_ids.len();
    let r = model.context_radius;
    let d = model.dim;
    let positions = example
        .masked_positions
        .iter()
        .map(|&p| {
            let label = example.labels[p]
                .ok_or_else(|| Error::Integrity(format!("masked position {p} has no label")))?;
            if label as usize >= model.vocab_size {
                return Err(Error::Integrity(format!("label {label} outside model vocab")));
            }
            let lo = p.saturating_sub(r);
            let hi = (p + r).min(len - 1);
            let context: Vec<TokenId> = (lo..=hi)
                .filter(|&q| q != p && example.input_ids[q] != mask_id)
                .map(|q| example.input_ids[q])
                .collect();
            let mut hidden = vec![0.0; d];
            if !context.is_empty() {
                for &tok in &context {
                    for (h, e) in hidden.iter_mut().zip(model.embedding(tok)) {
                        *h += e;
                    }
                }
                let inv = 1.0 / context.len() as f64;
                hidden.iter_mut().for_each(|h| *h *= inv);
            }
            let logits: Vec<f64> = model
                .projection
                .chunks_exact(d)
                .zip(&model.bias)
                .map(|(row, b)| row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b)
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            let loss = sum.ln() - (logits[label as usize] - max);
            Ok(PositionRecord {
                position: p,
                label,
                context,
                hidden,
                logits,
                probs,
                loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardRecord { positions })
}

/// Mean loss per distinct label.
pub fn per_token_loss(record: &ForwardRecord) -> BTreeMap<TokenId, f64> {
    let mut acc: BTreeMap<TokenId, (f64, usize)> = BTreeMap::new();
    for p in &record.positions {
        let e = acc.entry(p.label).or_default();
        e.0 += p.loss;
        e.1 += 1;
    }
    acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect()
}

/// Dense gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: Vec<f64>,
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &MlmModel) -> Self {
        Self {
            embeddings: vec![0.0; model.embeddings.len()],
            projection: vec![0.0; model.projection.len()],
            bias: vec![0.0; model.bias.len()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.embeddings
            .iter_mut()
            .chain(&mut self.projection)
            .chain(&mut self.bias)
            .for_each(|g| *g *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.projection)
            .chain(&self.bias)
            .all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.projection)
            .chain(&self.bias)
            .all(|&g| g == 0.0)
    }
}

/// Gradient of the summed position losses in `record`.
pub fn backward(model: &MlmModel, record: &ForwardRecord) -> Gradients {
    let mut grads = Gradients::zeros(model);
    accumulate_gradients(model, record, &mut grads);
    grads
}

/// Adds the gradient of `record`'s summed loss into `grads`.
pub fn accumulate_gradients(model: &MlmModel, record: &ForwardRecord, grads: &mut Gradients) {
    let d = model.dim;
    let mut dh = vec![0.0; d];
    for pos in &record.positions {
        dh.iter_mut().for_each(|x| *x = 0.0);
        for (v, &p) in pos.probs.iter().enumerate() {
            let g = if v == pos.label as usize { p - 1.0 } else { p };
            if g == 0.0 {
                continue;
            }
            grads.bias[v] += g;
            let w_row = &model.projection[v * d..(v + 1) * d];
            let gw_row = &mut grads.projection[v * d..(v + 1) * d];
            for k in 0..d {
                gw_row[k] += g * pos.hidden[k];
                dh[k] += g * w_row[k];
            }
        }
        if pos.context.is_empty() {
            continue;
        }
        let inv = 1.0 / pos.context.len() as f64;
        for &tok in &pos.context {
            let row = &mut grads.embeddings[tok as usize * d..(tok as usize + 1) * d];
            for (g, x) in row.iter_mut().zip(&dh) {
                *g += x * inv;
            }
        }
    }
}

/// `param -= learning_rate * grad`. Nothing is modified if any gradient
/// entry is non-finite.
pub fn sgd_step(model: &mut MlmModel, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if grads.embeddings.len() != model.embeddings.len()
        || grads.projection.len() != model.projection.len()
        || grads.bias.len() != model.bias.len()
    {
        return Err(Error::config("gradient shapes do not match the model"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::config(format!("invalid learning rate {learning_rate}")));
    }
    let step = |params: &mut [f64], g: &[f64]| {
        for (p, g) in params.iter_mut().zip(g) {
            *p -= learning_rate * g;
        }
    };
    step(&mut model.embeddings, &grads.embeddings);
    step(&mut model.projection, &grads.projection);
    step(&mut model.bias, &grads.bias);
    Ok(())
}
