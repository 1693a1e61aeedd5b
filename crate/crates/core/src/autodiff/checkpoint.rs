//! Flat binary parameter checkpoints.
//!
//! Layout: the magic `CEB1`, then one record per parameter until end of
//! input. A record is `u32` name length, UTF-8 name, `u32` rank, `rank`
//! `u64` extents, then the values as little-endian `f64`. All integers are
//! little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::array::Array;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CEB1";

pub fn write_checkpoint<'a, W: Write>(
    mut w: W,
    params: impl IntoIterator<Item = (&'a str, &'a Array)>,
) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, value) in params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.rank() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn encode_checkpoint<'a>(params: impl IntoIterator<Item = (&'a str, &'a Array)>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params).expect("writing to a Vec cannot fail");
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                kind: "checkpoint",
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Array)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            kind: "checkpoint",
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let start = c.pos as u64;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format {
                kind: "checkpoint",
                offset: start + 4,
                message: "name is not UTF-8".into(),
            })?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = c.take(n.checked_mul(8).ok_or_else(|| Error::Format {
            kind: "checkpoint",
            offset: c.pos as u64,
            message: "payload size overflows".into(),
        })?, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Array::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint<'a>(
    path: &Path,
    params: impl IntoIterator<Item = (&'a str, &'a Array)>,
) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(f), params).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Array)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let a = Array::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode_checkpoint([("w", &a)]);
        assert_eq!(&bytes[..4], b"CEB1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes[8], b'w');
        assert_eq!(&bytes[9..13], &1u32.to_le_bytes());
        assert_eq!(&bytes[13..21], &2u64.to_le_bytes());
        assert_eq!(&bytes[21..29], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 37);
    }

    #[test]
    fn truncation_reports_offset() {
        let a = Array::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_checkpoint([("abc", &a)]);
        let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 4 + 4 + 3 + 4 + 8),
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode_checkpoint(b"XXXX").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shapes in prop::collection::vec(prop::collection::vec(0usize..4, 0..4), 0..5),
                      seed in any::<u64>()) {
            let params: Vec<(String, Array)> = shapes.iter().enumerate().map(|(i, s)| {
                let a = Array::from_fn(s, |k| (seed as f64).sin() * (k as f64 + 0.5) - i as f64);
                (format!("p{i}"), a)
            }).collect();
            let bytes = encode_checkpoint(params.iter().map(|(n, a)| (n.as_str(), a)));
            let back = decode_checkpoint(&bytes).unwrap();
            prop_assert_eq!(back, params);
        }
    }
}
