//! Multi-domain image datasets, leave-one-out partitions and the `CEBD`
//! binary export.

mod idx;
mod synthetic;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};
pub use synthetic::{
    generate_synthetic, make_rotation_domains, render_glyph, rotate_bilinear, sample_jitter, Jitter,
    SyntheticConfig,
};

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::Array;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"CEBD";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    /// Hex sha256 of the source file(s).
    Digest { sha256: String },
}

/// Labelled images tagged with a domain id. Images are stored contiguously
/// as `n x C x H x W` with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    image_shape: [usize; 3],
    pixels: Vec<f64>,
    labels: Vec<usize>,
    domains: Vec<usize>,
    num_classes: usize,
    num_domains: usize,
    pub provenance: Provenance,
}

impl DomainDataset {
    pub fn new(
        image_shape: [usize; 3],
        pixels: Vec<f64>,
        labels: Vec<usize>,
        domains: Vec<usize>,
        num_classes: usize,
        num_domains: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let per = image_shape.iter().product::<usize>();
        let n = labels.len();
        if per == 0 || pixels.len() != n * per || domains.len() != n {
            return Err(Error::invalid(format!(
                "dataset of {n} samples with image shape {image_shape:?} needs {} pixels and {n} domain tags",
                n * per
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("class {y} out of range for {num_classes} classes")));
        }
        if let Some(&d) = domains.iter().find(|&&d| d >= num_domains) {
            return Err(Error::invalid(format!("domain {d} out of range for {num_domains} domains")));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("pixels must lie in [0, 1]"));
        }
        let ds = Self {
            image_shape,
            pixels,
            labels,
            domains,
            num_classes,
            num_domains,
            provenance,
        };
        if let Some(m) = ds.domain_counts().iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("domain {m} has no samples")));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let per = self.image_shape.iter().product::<usize>();
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn domain_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_domains];
        for &d in &self.domains {
            c[d] += 1;
        }
        c
    }

    /// Images, class labels and domain tags of the given samples.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let per = self.image_shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.image_shape);
        Batch {
            images: Array::new(shape, data).expect("gathered shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domains: indices.iter().map(|&i| self.domains[i]).collect(),
            ids: indices.to_vec(),
        }
    }

    /// Replaces all labels, keeping images and domains. Used to probe that
    /// selection never looks at test labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(
            self.image_shape,
            self.pixels.clone(),
            labels,
            self.domains.clone(),
            self.num_classes,
            self.num_domains,
            self.provenance.clone(),
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.pixels.len() * 8 + self.len() * 8);
        out.extend_from_slice(DATASET_MAGIC);
        for v in [self.num_classes, self.num_domains]
            .iter()
            .chain(&self.image_shape)
        {
            out.extend_from_slice(&(*v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            out.extend_from_slice(&(self.labels[i] as u32).to_le_bytes());
            out.extend_from_slice(&(self.domains[i] as u32).to_le_bytes());
            for p in self.image(i) {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    /// Parses a `CEBD` file; provenance becomes the digest of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor {
            kind: "cebd",
            bytes,
            pos: 0,
        };
        let magic = r.take(4)?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format {
                kind: "cebd",
                offset: 0,
                message: format!("bad magic {magic:02x?}"),
            });
        }
        let num_classes = r.u32()? as usize;
        let num_domains = r.u32()? as usize;
        let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let n = r.u64()? as usize;
        let per: usize = shape.iter().product();
        let record = 8 + 8 * per;
        if (bytes.len() - r.pos) / record.max(1) < n {
            return Err(r.error(format!("header announces {n} samples but the payload is shorter")));
        }
        let mut pixels = Vec::with_capacity(n * per);
        let mut labels = Vec::with_capacity(n);
        let mut domains = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.u32()? as usize);
            domains.push(r.u32()? as usize);
            for _ in 0..per {
                pixels.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after the last sample".into()));
        }
        Self::new(
            shape,
            pixels,
            labels,
            domains,
            num_classes,
            num_domains,
            Provenance::Digest { sha256: sha256_hex(bytes) },
        )
    }

    /// Writes the `CEBD` encoding and returns its sha256.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.encode();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A gathered minibatch. `ids` are indices into the source dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Array,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    pub ids: Vec<usize>,
}

pub(crate) struct Cursor<'a> {
    pub kind: &'static str,
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn error(&self, message: String) -> Error {
        Error::Format {
            kind: self.kind,
            offset: self.pos as u64,
            message,
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated: wanted {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Sample indices of a leave-one-out split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub target_domain: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

/// Holds out `target_domain` as the test set and splits every other domain
/// into train/val after a seeded shuffle.
pub fn leave_one_out_partition(
    dataset: &DomainDataset,
    target_domain: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if dataset.num_domains() < 2 {
        return Err(Error::invalid("leave-one-out needs at least two domains"));
    }
    if target_domain >= dataset.num_domains() {
        return Err(Error::invalid(format!(
            "target domain {target_domain} out of range for {} domains",
            dataset.num_domains()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let mut by_domain = vec![Vec::new(); dataset.num_domains()];
    for (i, &d) in dataset.domains().iter().enumerate() {
        by_domain[d].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Partition {
        target_domain,
        train: Vec::new(),
        val: Vec::new(),
        test: std::mem::take(&mut by_domain[target_domain]),
    };
    for (d, mut idx) in by_domain.into_iter().enumerate() {
        if d == target_domain {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64) * val_fraction).round() as usize;
        p.val.extend_from_slice(&idx[..n_val]);
        p.train.extend_from_slice(&idx[n_val..]);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(num_domains: usize, per_domain: usize) -> DomainDataset {
        let n = num_domains * per_domain;
        DomainDataset::new(
            [1, 2, 2],
            (0..n * 4).map(|i| (i % 7) as f64 / 7.0).collect(),
            (0..n).map(|i| i % 3).collect(),
            (0..n).map(|i| i / per_domain).collect(),
            3,
            num_domains,
            Provenance::Synthetic { seed: 0 },
        )
        .unwrap()
    }

    #[test]
    fn validation_errors() {
        let p = Provenance::Synthetic { seed: 0 };
        assert!(DomainDataset::new([1, 1, 1], vec![0.5], vec![3], vec![0], 3, 1, p.clone()).is_err());
        assert!(DomainDataset::new([1, 1, 1], vec![1.5], vec![0], vec![0], 3, 1, p.clone()).is_err());
        assert!(DomainDataset::new([1, 1, 1], vec![0.5], vec![0], vec![0], 3, 2, p).is_err());
    }

    #[test]
    fn partition_arithmetic_and_hygiene() {
        let ds = tiny(6, 1000);
        let p = leave_one_out_partition(&ds, 2, DEFAULT_VAL_FRACTION, 7).unwrap();
        assert_eq!((p.test.len(), p.train.len(), p.val.len()), (1000, 4000, 1000));
        assert!(p.train.iter().chain(&p.val).all(|&i| ds.domains()[i] != 2));
        assert!(p.test.iter().all(|&i| ds.domains()[i] == 2));
        let mut all: Vec<_> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..6000).collect::<Vec<_>>());
        assert_eq!(p, leave_one_out_partition(&ds, 2, DEFAULT_VAL_FRACTION, 7).unwrap());
        assert_ne!(p, leave_one_out_partition(&ds, 2, DEFAULT_VAL_FRACTION, 8).unwrap());
    }

    #[test]
    fn partition_errors() {
        assert!(leave_one_out_partition(&tiny(1, 10), 0, 0.2, 0).is_err());
        assert!(leave_one_out_partition(&tiny(3, 10), 3, 0.2, 0).is_err());
        assert!(leave_one_out_partition(&tiny(3, 10), 0, 1.0, 0).is_err());
    }

    #[test]
    fn cebd_round_trip_and_errors() {
        let ds = tiny(2, 3);
        let bytes = ds.encode();
        assert_eq!(&bytes[..4], b"CEBD");
        let back = DomainDataset::decode(&bytes).unwrap();
        assert_eq!(back.gather(&[0, 1, 2, 3, 4, 5]), ds.gather(&[0, 1, 2, 3, 4, 5]));
        assert!(matches!(back.provenance, Provenance::Digest { .. }));

        let err = DomainDataset::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(DomainDataset::decode(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn gather_keeps_ids() {
        let ds = tiny(2, 4);
        let b = ds.gather(&[5, 1]);
        assert_eq!(b.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(b.ids, vec![5, 1]);
        assert_eq!(b.domains, vec![1, 0]);
        assert_eq!(b.images.data()[..4], *ds.image(5));
    }
}
