//! Binary feature container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "ACNF" | version | T | F | C | utterance id length | speaker id length
//! | non-local rows | has labels
//! utterance id bytes | speaker id bytes
//! T*F*C little-endian f32 values in (t, f, c) order
//! T u32 labels (only when has labels = 1)
//! ```

use std::path::Path;

use super::UtteranceFeatures;
use crate::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"ACNF";
pub const FEATURE_VERSION: u32 = 1;

pub fn encode_features(utt: &UtteranceFeatures) -> Vec<u8> {
    let (t, f, c) = utt.shape();
    let mut out = Vec::with_capacity(36 + t * f * c * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    let header = [
        FEATURE_VERSION,
        t as u32,
        f as u32,
        c as u32,
        utt.utterance_id.len() as u32,
        utt.speaker_id.len() as u32,
        utt.non_local_rows as u32,
        u32::from(utt.labels.is_some()),
    ];
    for h in header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend_from_slice(utt.utterance_id.as_bytes());
    out.extend_from_slice(utt.speaker_id.as_bytes());
    for &x in utt.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if let Some(labels) = &utt.labels {
        for &l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_features(bytes: &[u8], source: &Path) -> Result<UtteranceFeatures> {
    let err = |m: &str| Error::format(source, m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| err("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != FEATURE_MAGIC {
        return Err(err("bad magic"));
    }
    let mut header = [0u32; 8];
    for h in header.iter_mut() {
        *h = u32::from_le_bytes(take(4)?.try_into().unwrap());
    }
    let [version, t, f, c, ulen, slen, non_local, has_labels] = header.map(|v| v as usize);
    if version != FEATURE_VERSION as usize {
        return Err(err(&format!("unsupported version {version}")));
    }
    let utt_id = String::from_utf8(take(ulen)?.to_vec()).map_err(|_| err("utterance id is not UTF-8"))?;
    let spk_id = String::from_utf8(take(slen)?.to_vec()).map_err(|_| err("speaker id is not UTF-8"))?;
    let n = t.checked_mul(f).and_then(|x| x.checked_mul(c)).ok_or_else(|| err("shape overflow"))?;
    let data: Vec<f64> =
        take(n * 4)?.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap()))).collect();
    let labels = if has_labels == 1 {
        Some(take(t * 4)?.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect())
    } else {
        None
    };
    if pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    let mut utt = UtteranceFeatures::new(utt_id, spk_id, (t, f, c), data)?;
    utt.non_local_rows = non_local;
    utt.labels = labels;
    Ok(utt)
}

pub fn write_features(path: &Path, utt: &UtteranceFeatures) -> Result<()> {
    Ok(std::fs::write(path, encode_features(utt))?)
}

pub fn read_features(path: &Path) -> Result<UtteranceFeatures> {
    let bytes = std::fs::read(path)?;
    decode_features(&bytes, path)
}
