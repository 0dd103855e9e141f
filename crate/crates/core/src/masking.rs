//! The 80/10/10 corruption rule and masked-example serialisation.
//!
//! Binary batch layout (all integers little-endian):
//!
//! ```text
//! magic        b"WSMX"
//! version      u32 = 1
//! count        u64                      number of records
//! per record:
//!   len        u32                      sentence length
//!   input_ids  u32 * len
//!   labels     u32 * len                0xFFFF_FFFF where not masked
//!   n_masked   u32
//!   positions  u32 * n_masked           ascending
//! ```

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocab};
use crate::error::{Error, Result};

/// Out-of-band label value used by the binary and TSV forms.
pub const LABEL_SENTINEL: u32 = u32::MAX;

const MAGIC: &[u8; 4] = b"WSMX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAction {
    /// Replaced with the MASK token.
    Mask,
    /// Replaced with a uniformly drawn non-special token.
    Random,
    /// Left as the original token.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub input_ids: Vec<TokenId>,
    /// Original token at masked positions, `None` elsewhere.
    pub labels: Vec<Option<TokenId>>,
    /// Ascending.
    pub masked_positions: Vec<usize>,
    /// Branch taken at each entry of `masked_positions`. Not part of the
    /// serialised forms.
    #[serde(skip)]
    pub actions: Vec<MaskAction>,
}

impl MaskedExample {
    /// Undoes the corruption using the labels.
    pub fn reconstruct(&self) -> Vec<TokenId> {
        self.input_ids
            .iter()
            .zip(&self.labels)
            .map(|(&inp, lab)| lab.unwrap_or(inp))
            .collect()
    }

    pub fn num_masked(&self) -> usize {
        self.masked_positions.len()
    }
}

/// Corrupts `positions` of `sentence` independently: MASK with probability
/// 0.8, a random maskable token with 0.1, unchanged with 0.1.
pub fn apply_mask<R: Rng + ?Sized>(
    sentence: &[TokenId],
    positions: &[usize],
    vocab: &Vocab,
    rng: &mut R,
) -> Result<MaskedExample> {
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&p) = sorted.iter().find(|&&p| p >= sentence.len()) {
        return Err(Error::domain(format!(
            "mask position {p} out of bounds for sentence of length {}",
            sentence.len()
        )));
    }
    let pool = vocab.maskable_ids();
    let mut input_ids = sentence.to_vec();
    let mut labels = vec![None; sentence.len()];
    let mut actions = Vec::with_capacity(sorted.len());
    for &p in &sorted {
        labels[p] = Some(sentence[p]);
        let r: f64 = rng.gen();
        let action = if r < 0.8 {
            input_ids[p] = vocab.mask_id();
            MaskAction::Mask
        } else if r < 0.9 {
            input_ids[p] = pool[rng.gen_range(0..pool.len())];
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        actions.push(action);
    }
    Ok(MaskedExample {
        input_ids,
        labels,
        masked_positions: sorted,
        actions,
    })
}

pub fn write_batch(examples: &[MaskedExample], mut out: impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(examples.len() as u64).to_le_bytes())?;
    for ex in examples {
        out.write_all(&(ex.input_ids.len() as u32).to_le_bytes())?;
        for &id in &ex.input_ids {
            out.write_all(&id.to_le_bytes())?;
        }
        for lab in &ex.labels {
            out.write_all(&lab.unwrap_or(LABEL_SENTINEL).to_le_bytes())?;
        }
        out.write_all(&(ex.masked_positions.len() as u32).to_le_bytes())?;
        for &p in &ex.masked_positions {
            out.write_all(&(p as u32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_batch(mut input: impl Read) -> Result<Vec<MaskedExample>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a masked-example batch".into()));
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported batch version {version}")));
    }
    let count = read_u64(&mut input)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let input_ids = (0..len).map(|_| read_u32(&mut input)).collect::<Result<Vec<_>>>()?;
        let labels = (0..len)
            .map(|_| read_u32(&mut input).map(|l| (l != LABEL_SENTINEL).then_some(l)))
            .collect::<Result<Vec<_>>>()?;
        let n = read_u32(&mut input)? as usize;
        let masked_positions = (0..n)
            .map(|_| read_u32(&mut input).map(|p| p as usize))
            .collect::<Result<Vec<_>>>()?;
        let consistent = masked_positions.iter().all(|&p| p < len && labels[p].is_some())
            && labels.iter().filter(|l| l.is_some()).count() == n;
        if !consistent {
            return Err(Error::Integrity("labels disagree with masked positions".into()));
        }
        out.push(MaskedExample {
            input_ids,
            labels,
            masked_positions,
            actions: Vec::new(),
        });
    }
    Ok(out)
}

/// Debug form: one row per token with columns
/// `example, position, input_id, label, masked` (label `-` when unset).
pub fn write_batch_tsv(examples: &[MaskedExample], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "example\tposition\tinput_id\tlabel\tmasked")?;
    for (e, ex) in examples.iter().enumerate() {
        for (p, (&inp, lab)) in ex.input_ids.iter().zip(&ex.labels).enumerate() {
            let label = lab.map_or_else(|| "-".to_string(), |l| l.to_string());
            writeln!(out, "{e}\t{p}\t{inp}\t{label}\t{}", u8::from(lab.is_some()))?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
