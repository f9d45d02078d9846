//! FULLDIST: little-endian dump of full next-subword distributions.
//!
//! ```text
//! "RTD1" | u32 vocab_size | u32 position_count | u32 eos_id
//! per position: u32 text_id | u32 word_index | u16 subword_index | u32 realized_id | vocab_size x f32 ln p
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{Manifest, Prediction, SubwordPosition, Vocabulary};
use crate::error::{Error, Result};
use crate::infotheory::{logsumexp, NORMALIZATION_TOLERANCE};

pub const FULLDIST_MAGIC: &[u8; 4] = b"RTD1";
const HEADER_LEN: usize = 16;
const RECORD_PREFIX_LEN: usize = 14;

/// `dists.rtd` -> `dists.rtd.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_fulldist(positions: &[SubwordPosition], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let v = vocab.size as usize;
    let mut out = Vec::with_capacity(HEADER_LEN + positions.len() * (RECORD_PREFIX_LEN + 4 * v));
    out.extend_from_slice(FULLDIST_MAGIC);
    out.extend_from_slice(&vocab.size.to_le_bytes());
    out.extend_from_slice(&(positions.len() as u32).to_le_bytes());
    out.extend_from_slice(&vocab.eos_id.to_le_bytes());
    for (i, p) in positions.iter().enumerate() {
        let Prediction::Full(logprobs) = &p.prediction else {
            return Err(Error::Format(format!(
                "position {i} holds a summary, not a full distribution"
            )));
        };
        if logprobs.len() != v {
            return Err(Error::Format(format!(
                "position {i} has {} probabilities for a vocabulary of {v}",
                logprobs.len()
            )));
        }
        out.extend_from_slice(&p.text_id.to_le_bytes());
        out.extend_from_slice(&p.word_index.to_le_bytes());
        out.extend_from_slice(&p.subword_index.to_le_bytes());
        out.extend_from_slice(&p.realized_id.to_le_bytes());
        for lp in logprobs {
            out.extend_from_slice(&lp.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes a FULLDIST buffer and verifies every position's normalization.
pub fn decode_fulldist(bytes: &[u8]) -> Result<(Vec<SubwordPosition>, Vocabulary)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != FULLDIST_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"RTD1\"", &bytes[..4])));
    }
    let vocab_size = u32_at(bytes, 4);
    let count = u32_at(bytes, 8) as usize;
    let eos_id = u32_at(bytes, 12);
    if vocab_size == 0 {
        return Err(Error::Format("vocabulary size is zero".into()));
    }
    if eos_id >= vocab_size {
        return Err(Error::Format(format!(
            "eos id {eos_id} outside vocabulary of {vocab_size}"
        )));
    }
    let v = vocab_size as usize;
    let record = RECORD_PREFIX_LEN + 4 * v;
    let expected = HEADER_LEN + count * record;
    if bytes.len() < expected {
        let complete = (bytes.len() - HEADER_LEN) / record;
        return Err(Error::Format(format!(
            "truncated payload: header declares {count} positions but only {complete} are complete ({} of {expected} bytes)",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} positions",
            bytes.len() - expected
        )));
    }

    let mut positions = Vec::with_capacity(count);
    let mut scratch = vec![0.0f64; v];
    for i in 0..count {
        let at = HEADER_LEN + i * record;
        let text_id = u32_at(bytes, at);
        let word_index = u32_at(bytes, at + 4);
        let subword_index = u16::from_le_bytes([bytes[at + 8], bytes[at + 9]]);
        let realized_id = u32_at(bytes, at + 10);
        let logprobs: Vec<f32> = bytes[at + RECORD_PREFIX_LEN..at + record]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if realized_id >= vocab_size {
            return Err(Error::Format(format!(
                "position {i} (text {text_id}, word {word_index}, subword {subword_index}): realized id {realized_id} outside vocabulary"
            )));
        }
        for (s, &lp) in scratch.iter_mut().zip(&logprobs) {
            *s = lp as f64;
        }
        let lse = logsumexp(&scratch);
        if !(lse.abs() <= NORMALIZATION_TOLERANCE) || logprobs.iter().any(|lp| lp.is_nan() || *lp > 0.0) {
            return Err(Error::Format(format!(
                "position {i} (text {text_id}, word {word_index}, subword {subword_index}): log-normalizer {lse} exceeds tolerance"
            )));
        }
        positions.push(SubwordPosition {
            text_id,
            word_index,
            subword_index,
            realized_id,
            prediction: Prediction::Full(logprobs),
        });
    }
    Ok((positions, Vocabulary::new(vocab_size, eos_id)))
}

/// Reads a FULLDIST file, attaching the sidecar manifest when present.
pub fn read_fulldist(path: impl AsRef<Path>) -> Result<(Vec<SubwordPosition>, Vocabulary)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (positions, mut vocab) = decode_fulldist(&bytes).map_err(|e| e.at_stage(path.display().to_string()))?;
    let mpath = manifest_path(path);
    if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.vocabulary.len() != vocab.size as usize {
            return Err(Error::Format(format!(
                "manifest lists {} tokens but the dump declares {}",
                manifest.vocabulary.len(),
                vocab.size
            )));
        }
        vocab.tokens = Some(manifest.vocabulary);
        vocab.word_initial_marker = Some(manifest.word_initial_marker);
        vocab.model = Some(manifest.model);
    }
    Ok((positions, vocab))
}

/// Writes the dump and, when the vocabulary carries token strings, its manifest.
pub fn write_fulldist(path: impl AsRef<Path>, positions: &[SubwordPosition], vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_fulldist(positions, vocab)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    if let Some(tokens) = &vocab.tokens {
        let manifest = Manifest {
            vocabulary: tokens.clone(),
            word_initial_marker: vocab.word_initial_marker.clone().unwrap_or_default(),
            model: vocab.model.clone().unwrap_or_default(),
        };
        let mpath = manifest_path(path);
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn position(probs: &[f64]) -> SubwordPosition {
        SubwordPosition {
            text_id: 3,
            word_index: 7,
            subword_index: 1,
            realized_id: 2,
            prediction: Prediction::Full(probs.iter().map(|p| p.ln() as f32).collect()),
        }
    }

    #[test]
    fn single_position_roundtrip() {
        let vocab = Vocabulary::new(3, 2);
        let bytes = encode_fulldist(&[position(&[0.5, 0.25, 0.25])], &vocab).unwrap();
        let (ps, v) = decode_fulldist(&bytes).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(v, vocab);
        assert_eq!(ps[0], position(&[0.5, 0.25, 0.25]));
    }

    #[test]
    fn truncated_payload() {
        let vocab = Vocabulary::new(3, 2);
        let mut bytes = encode_fulldist(&[position(&[0.5, 0.25, 0.25])], &vocab).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_fulldist(&bytes).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let vocab = Vocabulary::new(3, 2);
        let mut bytes = encode_fulldist(&[position(&[0.5, 0.25, 0.25])], &vocab).unwrap();
        bytes[3] = b'2';
        assert!(decode_fulldist(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn unnormalized_position_is_named() {
        let vocab = Vocabulary::new(3, 2);
        let bytes = encode_fulldist(&[position(&[0.5, 0.25, 0.26])], &vocab).unwrap();
        let err = decode_fulldist(&bytes).unwrap_err().to_string();
        assert!(err.contains("position 0") && err.contains("word 7"), "{err}");
    }

    #[test]
    fn manifest_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.rtd");
        let mut vocab = Vocabulary::new(3, 2);
        vocab.tokens = Some(vec!["▁a".into(), "b".into(), "</s>".into()]);
        vocab.word_initial_marker = Some("▁".into());
        vocab.model = Some("toy".into());
        write_fulldist(&path, &[position(&[0.5, 0.25, 0.25])], &vocab).unwrap();
        let (_, back) = read_fulldist(&path).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.is_word_initial(0), Some(true));
        assert_eq!(back.is_word_initial(1), Some(false));
    }

    proptest! {
        #[test]
        fn write_read_is_bit_exact(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 1..20)) {
            let vocab = Vocabulary::new(5, 4);
            let positions: Vec<SubwordPosition> = raw
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let z: f64 = w.iter().sum();
                    SubwordPosition {
                        text_id: (i / 7) as u32,
                        word_index: i as u32,
                        subword_index: (i % 3) as u16,
                        realized_id: (i % 5) as u32,
                        prediction: Prediction::Full(w.iter().map(|p| (p / z).ln() as f32).collect()),
                    }
                })
                .collect();
            let bytes = encode_fulldist(&positions, &vocab).unwrap();
            let (back, _) = decode_fulldist(&bytes).unwrap();
            prop_assert_eq!(encode_fulldist(&back, &vocab).unwrap(), bytes);
            prop_assert_eq!(back, positions);
        }
    }
}
