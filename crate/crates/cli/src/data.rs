//! Dataset ingestion: IDX image files and small synthetic generators.
//!
//! Every dataset is returned as a `[n, d]` tensor with entries in `[0, 1]`.
//! Synthetic generators are deterministic in their seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vaerobust::numerics::{RngStream, Tensor};
use vaerobust::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Where the training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        generator: Generator,
        n: usize,
        dim: usize,
        seed: u64,
    },
    Idx {
        path: PathBuf,
        /// Keep only the first `limit` images.
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Isotropic clusters around four random centres.
    GaussianBlobs,
    /// Two interleaved half circles; `dim` must be 2.
    TwoMoons,
    /// Square images made of random horizontal and vertical bars; `dim` must
    /// be a perfect square.
    Bars,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::GaussianBlobs => "gaussian-blobs",
            Generator::TwoMoons => "two-moons",
            Generator::Bars => "bars",
        }
    }
}

pub fn ingest(spec: &DatasetSpec) -> Result<Tensor<f64>> {
    match spec {
        DatasetSpec::Synthetic { generator, n, dim, seed } => synthetic(*generator, *n, *dim, *seed),
        DatasetSpec::Idx { path, limit } => {
            let images = read_idx_images(path)?;
            match limit {
                Some(l) if *l < images.rows() => {
                    let d = images.cols();
                    Tensor::matrix(*l, d, images.data()[..l * d].to_vec())
                }
                _ => Ok(images),
            }
        }
    }
}

pub fn synthetic(generator: Generator, n: usize, dim: usize, seed: u64) -> Result<Tensor<f64>> {
    if n == 0 || dim == 0 {
        return Err(Error::Config("synthetic datasets need n >= 1 and dim >= 1".into()));
    }
    let mut rng = RngStream::new(seed, 0x6461_7461);
    let data = match generator {
        Generator::GaussianBlobs => blobs(n, dim, &mut rng),
        Generator::TwoMoons => {
            if dim != 2 {
                return Err(Error::Config(format!("two-moons is 2-dimensional, got dim = {dim}")));
            }
            moons(n, &mut rng)
        }
        Generator::Bars => {
            let side = (dim as f64).sqrt().round() as usize;
            if side * side != dim {
                return Err(Error::Config(format!("bars needs a square dim, got {dim}")));
            }
            bars(n, side, &mut rng)
        }
    };
    Tensor::matrix(n, dim, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

fn blobs(n: usize, dim: usize, rng: &mut RngStream) -> Vec<f64> {
    let centres: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..dim).map(|_| 0.2 + 0.6 * rng.uniform()).collect())
        .collect();
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centres[rng.below(centres.len())];
        out.extend(c.iter().map(|&m| m + 0.05 * rng.normal()));
    }
    out
}

fn moons(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = std::f64::consts::PI * rng.uniform();
        let (x, y) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        // Maps the raw range [-1, 2] x [-0.5, 1] into the unit square.
        out.push((x + 1.0) / 3.0 + 0.02 * rng.normal());
        out.push((y + 0.5) / 1.5 + 0.02 * rng.normal());
    }
    out
}

fn bars(n: usize, side: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        let rows: Vec<bool> = (0..side).map(|_| rng.uniform() < 0.25).collect();
        let cols: Vec<bool> = (0..side).map(|_| rng.uniform() < 0.25).collect();
        for &row_on in &rows {
            for &col_on in &cols {
                let on = if row_on || col_on { 0.8 } else { 0.0 };
                out.push(0.1 + on + 0.05 * rng.normal());
            }
        }
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(bytes.len(), format!("file ends before the {what} field")))
}

/// Parses an IDX image file (`u8` pixels) into `[count, rows * cols]` scaled
/// to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f64>> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            0,
            format!("expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let d = rows * cols;
    let payload = &bytes[16..];
    let need = count * d;
    if payload.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {count} images of {rows}x{cols} need {need} bytes, found {}", payload.len()),
        ));
    }
    Tensor::matrix(count, d, payload[..need].iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Parses an IDX label file into one byte per item.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(
            0,
            format!("expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {count} labels, found {}", payload.len()),
        ));
    }
    Ok(payload[..count].to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<Tensor<f64>> {
    parse_idx_images(&std::fs::read(path)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&std::fs::read(path)?)
}

/// Encodes images (values in `[0, 1]`) as an IDX image file.
pub fn encode_idx_images(images: &Tensor<f64>, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if images.rank() != 2 || images.cols() != rows * cols {
        return Err(Error::Shape(format!("images {:?} vs {rows}x{cols}", images.shape())));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = Vec::new();
        for v in [0x803u32, 4, 2, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0u8..16).map(|i| i * 17));
        b
    }

    #[test]
    fn parses_a_hand_made_idx_file() {
        let t = parse_idx_images(&fixture()).unwrap();
        assert_eq!(t.shape(), &[4, 4]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[15], 1.0);
        assert_eq!(t.row(1)[0], 68.0 / 255.0);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let mut bad = fixture();
        bad[3] = 0x01;
        match parse_idx_images(&bad) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = &fixture()[..20];
        match parse_idx_images(short) {
            Err(Error::Format { offset: 20, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_images(&[]), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_idx_images(&fixture()[..10]), Err(Error::Format { offset: 10, .. })));
    }

    #[test]
    fn labels_round_trip() {
        let mut b = Vec::new();
        b.extend_from_slice(&0x801u32.to_be_bytes());
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 2, 1]);
        assert_eq!(parse_idx_labels(&b).unwrap(), vec![7, 2, 1]);
        assert!(parse_idx_labels(&fixture()).is_err());
    }

    #[test]
    fn encode_then_parse() {
        let t = parse_idx_images(&fixture()).unwrap();
        assert_eq!(encode_idx_images(&t, 2, 2).unwrap(), fixture());
    }

    #[test]
    fn generators_are_deterministic_and_bounded() {
        for (g, d) in [(Generator::GaussianBlobs, 2), (Generator::TwoMoons, 2), (Generator::Bars, 16)] {
            let a = synthetic(g, 100, d, 7).unwrap();
            let b = synthetic(g, 100, d, 7).unwrap();
            assert_eq!(a, b);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_ne!(a, synthetic(g, 100, d, 8).unwrap());
        }
        assert!(synthetic(Generator::TwoMoons, 10, 3, 0).is_err());
        assert!(synthetic(Generator::Bars, 10, 15, 0).is_err());
    }
}
