//! Big-endian IDX files as used by MNIST.
//!
//! Images: magic `0x00000803`, then u32 count, rows, cols, then
//! `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, u32 count,
//! then `count` bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, Split};
use crate::linalg::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DataError::Truncated {
            what,
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(DataError::BadMagic { what, expected, found });
    }
    Ok(())
}

fn check_body(bytes: &[u8], header: usize, body: usize, what: &'static str) -> Result<(), DataError> {
    let expected = header + body;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            what,
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes {
            what,
            extra: bytes.len() - expected,
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    const WHAT: &str = "idx images";
    check_magic(bytes, IMAGES_MAGIC, WHAT)?;
    let count = be_u32(bytes, 4, WHAT)? as usize;
    let rows = be_u32(bytes, 8, WHAT)? as usize;
    let cols = be_u32(bytes, 12, WHAT)? as usize;
    check_body(bytes, 16, count * rows * cols, WHAT)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    const WHAT: &str = "idx labels";
    check_magic(bytes, LABELS_MAGIC, WHAT)?;
    let count = be_u32(bytes, 4, WHAT)? as usize;
    check_body(bytes, 8, count, WHAT)?;
    Ok(bytes[8..].to_vec())
}

/// Pairs an image file with its label file. Pixels are scaled to `[0, 1]`
/// and each image is flattened row-major into one column.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| DataError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    if images.count == 0 {
        return Err(DataError::Empty);
    }
    let d = images.rows * images.cols;
    let mut samples = Matrix::zeros(d, images.count);
    for j in 0..images.count {
        for i in 0..d {
            samples[(i, j)] = images.pixels[j * d + i] as f64 / 255.0;
        }
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(samples, labels, class_count, Split::Train)
}

pub fn write_idx_images<W: Write>(mut w: W, images: &IdxImages) -> std::io::Result<()> {
    w.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    for v in [images.count, images.rows, images.cols] {
        w.write_all(&(v as u32).to_be_bytes())?;
    }
    w.write_all(&images.pixels)
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> std::io::Result<()> {
    w.write_all(&LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)
}
