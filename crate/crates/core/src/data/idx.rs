//! IDX image/label files (the MNIST distribution format).
//!
//! Big-endian headers: images are `0x00000803, count, rows, cols` followed by
//! `count * rows * cols` bytes, labels are `0x00000801, count` followed by
//! `count` bytes. Gzip-compressed files are detected by their magic bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IDX_CLASSES: usize = 10;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Format {
            what,
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

/// Parses an image file into a `count x (rows * cols)` matrix scaled to [0, 1].
pub fn parse_images(bytes: &[u8]) -> Result<Matrix> {
    let what = "idx images";
    let magic = be_u32(bytes, 0, what)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            what,
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * pixels {
        return Err(Error::Format {
            what,
            offset: bytes.len() as u64,
            message: format!("truncated: need {} pixel bytes, have {}", count * pixels, body.len()),
        });
    }
    let data = body[..count * pixels].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(count, pixels, data)
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let what = "idx labels";
    let magic = be_u32(bytes, 0, what)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            what,
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            what,
            offset: bytes.len() as u64,
            message: format!("truncated: need {count} labels, have {}", body.len()),
        });
    }
    let labels: Vec<usize> = body[..count].iter().map(|&b| b as usize).collect();
    if let Some(pos) = labels.iter().position(|&l| l >= IDX_CLASSES) {
        return Err(Error::Format {
            what,
            offset: (8 + pos) as u64,
            message: format!("label {} outside 0..{IDX_CLASSES}", labels[pos]),
        });
    }
    Ok(labels)
}

/// Loads an image/label pair with one-hot targets over 10 classes.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = parse_images(&read_maybe_gz(images_path.as_ref())?)?;
    let labels = parse_labels(&read_maybe_gz(labels_path.as_ref())?)?;
    if images.rows() != labels.len() {
        return Err(Error::mismatch("idx pair", images.shape(), (labels.len(), 1)));
    }
    Dataset::from_labels(images, &labels, IDX_CLASSES)
}

/// Writes an uncompressed image file; `pixels` are raw bytes, row-major.
pub fn write_idx_images(path: impl AsRef<Path>, count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), count * rows * cols, "pixel buffer length");
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.write_all(&v.to_be_bytes()).expect("vec write");
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
