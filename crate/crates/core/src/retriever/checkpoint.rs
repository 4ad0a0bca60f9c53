//! Binary checkpoints.
//!
//! Layout: an 8-byte little-endian header length, a JSON header, then the
//! input embeddings, the output embeddings (untied only) and the bias as
//! little-endian f64 values in row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RetrieverConfig, RetrieverParams};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const FORMAT: &str = "genir-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: RetrieverConfig,
    pub vocab_fingerprint: String,
    pub vocab_size: usize,
    pub num_items: usize,
    pub item_offset: usize,
    pub dim: usize,
    pub tied: bool,
    pub optimizer_steps: u64,
}

pub fn encode(params: &RetrieverParams, cfg: &RetrieverConfig, vocab: &Vocabulary, optimizer_steps: u64) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        config: cfg.clone(),
        vocab_fingerprint: vocab.fingerprint(),
        vocab_size: params.vocab_size,
        num_items: params.num_items,
        item_offset: params.item_offset,
        dim: params.dim,
        tied: params.tied,
        optimizer_steps,
    };
    let json = serde_json::to_vec(&header)?;
    let floats = params.input.len() + params.output.len() + params.bias.len();
    let mut out = Vec::with_capacity(8 + json.len() + 8 * floats);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.input.iter().chain(&params.output).chain(&params.bias) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn save(
    path: &Path,
    params: &RetrieverParams,
    cfg: &RetrieverConfig,
    vocab: &Vocabulary,
    optimizer_steps: u64,
) -> Result<()> {
    write_atomic(path, &encode(params, cfg, vocab, optimizer_steps)?)
}

fn corrupt(path: &Path, msg: impl Into<String>) -> Error {
    Error::Data(format!("{}: {}", path.display(), msg.into()))
}

/// Loads a checkpoint and checks it against `vocab`.
pub fn load(path: &Path, vocab: &Vocabulary) -> Result<(RetrieverParams, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes, vocab)
}

pub fn decode(path: &Path, bytes: &[u8], vocab: &Vocabulary) -> Result<(RetrieverParams, CheckpointHeader)> {
    if bytes.len() < 8 {
        return Err(corrupt(path, "truncated checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| corrupt(path, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format != FORMAT {
        return Err(corrupt(path, format!("unknown format {:?}", header.format)));
    }
    if header.vocab_fingerprint != vocab.fingerprint()
        || header.vocab_size != vocab.len()
        || header.num_items != vocab.num_items()
        || header.item_offset != vocab.item_offset()
    {
        return Err(Error::VocabularyMismatch(format!(
            "{} was trained on a different vocabulary",
            path.display()
        )));
    }
    let d = header.dim;
    let n_in = header.vocab_size * d;
    let n_out = if header.tied { 0 } else { header.num_items * d };
    let n_bias = header.num_items;
    let data = &bytes[8 + hlen..];
    if data.len() != 8 * (n_in + n_out + n_bias) {
        return Err(corrupt(path, "array sizes do not match header dimensions"));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let params = RetrieverParams {
        dim: d,
        vocab_size: header.vocab_size,
        num_items: header.num_items,
        item_offset: header.item_offset,
        tied: header.tied,
        input: take(n_in),
        output: take(n_out),
        bias: take(n_bias),
    };
    if !params.all_finite() {
        return Err(corrupt(path, "non-finite parameter values"));
    }
    Ok((params, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_tied_and_untied() {
        let vocab = Vocabulary::new(["x", "y"], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for tied in [true, false] {
            let cfg = RetrieverConfig { embedding_dim: 4, tie_output_embeddings: tied, seed: 5, ..Default::default() };
            let p = RetrieverParams::for_vocabulary(&cfg, &vocab).unwrap();
            let path = dir.path().join(format!("m{tied}.ckpt"));
            save(&path, &p, &cfg, &vocab, 17).unwrap();
            let (q, h) = load(&path, &vocab).unwrap();
            assert_eq!(p, q);
            assert_eq!(h.optimizer_steps, 17);
            assert_eq!(h.config, cfg);
        }
    }

    #[test]
    fn rejects_other_vocabulary_and_truncation() {
        let vocab = Vocabulary::new(["x", "y"], 3).unwrap();
        let other = Vocabulary::new(["x", "z"], 3).unwrap();
        let cfg = RetrieverConfig { embedding_dim: 2, ..Default::default() };
        let p = RetrieverParams::for_vocabulary(&cfg, &vocab).unwrap();
        let bytes = encode(&p, &cfg, &vocab, 0).unwrap();
        let path = Path::new("mem");
        assert!(matches!(decode(path, &bytes, &other), Err(Error::VocabularyMismatch(_))));
        assert!(decode(path, &bytes[..bytes.len() - 3], &vocab).is_err());
        assert!(decode(path, &bytes[..4], &vocab).is_err());
    }
}
