//! IDX files: big-endian magic `00 00 08 <ndims>`, `ndims` u32 extents,
//! then unsigned bytes.

use std::path::Path;

use super::Cursor;
use crate::array::Array;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(r: &mut Cursor<'_>, magic: u32) -> Result<Vec<usize>> {
    let m = r.u32_be()?;
    if m != magic {
        r.pos -= 4;
        return Err(r.error(format!("bad magic {m:#010x}, expected {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    (0..ndims).map(|_| r.u32_be().map(|d| d as usize)).collect()
}

fn body<'a>(r: &mut Cursor<'a>, n: usize) -> Result<&'a [u8]> {
    let data = r.take(n)?;
    if r.pos != r.bytes.len() {
        return Err(r.error("trailing bytes after payload".into()));
    }
    Ok(data)
}

/// Images as `n x 1 x rows x cols`, scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array> {
    let mut r = Cursor {
        kind: "idx",
        bytes,
        pos: 0,
    };
    let dims = header(&mut r, IMAGES_MAGIC)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let data = body(&mut r, n * h * w)?;
    Array::new(vec![n, 1, h, w], data.iter().map(|&p| p as f64 / 255.0).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Cursor {
        kind: "idx",
        bytes,
        pos: 0,
    };
    let dims = header(&mut r, LABELS_MAGIC)?;
    Ok(body(&mut r, dims[0])?.iter().map(|&l| l as usize).collect())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<(Array, Vec<usize>)> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let x = parse_idx_images(&read(images)?)?;
    let y = parse_idx_labels(&read(labels)?)?;
    if x.shape()[0] != y.len() {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            x.shape()[0],
            y.len()
        )));
    }
    Ok((x, y))
}

/// Encodes `n x 1 x h x w` images, quantizing pixels to `round(255 p)`.
pub fn write_idx_images(images: &Array) -> Result<Vec<u8>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::shape("write_idx_images", s, &[0, 1, 0, 0]));
    }
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [s[0], s[2], s[3]] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit a byte")))?);
    }
    Ok(out)
}
