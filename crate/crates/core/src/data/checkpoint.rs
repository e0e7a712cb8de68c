//! Named-tensor container.
//!
//! Layout: `b"LADV"`, format version (`u32` LE), header length (`u64` LE),
//! a JSON header listing `{name, shape, offset, length}` per tensor, then the
//! payload of little-endian `f64` values. Offsets and lengths are in bytes
//! relative to the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LADV";
pub const FORMAT_VERSION: u32 = 1;

const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeaderEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

pub type Named = Vec<(String, Tensor)>;

pub fn to_bytes(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut header = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        let length = 8 * t.len() as u64;
        header.push(HeaderEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Named> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload(format!("{} bytes, no magic", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::TruncatedPayload("preamble cut short".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::TruncatedPayload(format!("header of {header_len} bytes runs past end of file")))?
        as usize;
    let header: Vec<HeaderEntry> = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::BadHeader(e.to_string()))?;
    let payload = &bytes[header_end..];

    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(header.len());
    for e in &header {
        let count: usize = e.shape.iter().product();
        if e.length != 8 * count as u64 {
            return Err(Error::BadHeader(format!(
                "{}: length {} does not match shape {:?}",
                e.name, e.length, e.shape
            )));
        }
        let end = e.offset.checked_add(e.length).ok_or_else(|| {
            Error::TruncatedPayload(format!("{}: range overflows", e.name))
        })?;
        if end > payload.len() as u64 {
            return Err(Error::TruncatedPayload(format!(
                "{}: bytes {}..{end} past payload end {}",
                e.name,
                e.offset,
                payload.len()
            )));
        }
        spans.push((e.offset, end, &e.name));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::OverlappingRanges(w[0].2.to_string(), w[1].2.to_string()));
        }
    }

    let mut out = Vec::with_capacity(header.len());
    for e in header {
        let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, to_bytes(tensors)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Named> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound {
            what: "checkpoint",
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    from_bytes(&bytes)
}

/// Remove and return the tensor called `name`.
pub fn take(tensors: &mut Named, name: &str) -> Result<Tensor> {
    let i = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
    Ok(tensors.remove(i).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Named {
        vec![
            ("a".into(), Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()),
            ("b".into(), Tensor::vector(vec![0.1, 0.2, 0.3])),
        ]
    }

    fn with_header(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn round_trip_is_bitwise() {
        let back = from_bytes(&to_bytes(&sample()).unwrap()).unwrap();
        for ((na, a), (nb, b)) in sample().iter().zip(&back) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ladv");
        save_checkpoint(&p, &sample()).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), sample());
        assert!(matches!(
            load_checkpoint(dir.path().join("none")),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn corrupt_magic() {
        let mut b = to_bytes(&sample()).unwrap();
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(Error::BadMagic(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut b = to_bytes(&sample()).unwrap();
        b[4] = 9;
        assert!(matches!(from_bytes(&b), Err(Error::VersionMismatch { found: 9, expected: 1 })));
    }

    #[test]
    fn offset_past_end() {
        let h = r#"[{"name":"x","shape":[1],"offset":8,"length":8}]"#;
        let b = with_header(h, &1.0f64.to_le_bytes());
        assert!(matches!(from_bytes(&b), Err(Error::TruncatedPayload(_))));
        let mut full = to_bytes(&sample()).unwrap();
        full.truncate(full.len() - 3);
        assert!(matches!(from_bytes(&full), Err(Error::TruncatedPayload(_))));
    }

    #[test]
    fn overlapping_ranges() {
        let h = r#"[{"name":"x","shape":[2],"offset":0,"length":16},{"name":"y","shape":[1],"offset":8,"length":8}]"#;
        let b = with_header(h, &[0u8; 16]);
        assert!(matches!(from_bytes(&b), Err(Error::OverlappingRanges(_, _))));
    }

    #[test]
    fn malformed_header() {
        let b = with_header("not json", &[]);
        assert!(matches!(from_bytes(&b), Err(Error::BadHeader(_))));
        let h = r#"[{"name":"x","shape":[2],"offset":0,"length":8}]"#;
        assert!(matches!(from_bytes(&with_header(h, &[0u8; 16])), Err(Error::BadHeader(_))));
    }

    #[test]
    fn take_reports_missing() {
        let mut s = sample();
        assert_eq!(take(&mut s, "b").unwrap().len(), 3);
        assert!(matches!(take(&mut s, "b"), Err(Error::MissingTensor(_))));
    }
}
