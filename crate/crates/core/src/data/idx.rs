//! IDX (MNIST) binary files: big-endian header, then raw `u8` payload.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::LabeledExample;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(path, bytes.len(), "truncated header"))
}

fn expect_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != want {
        return Err(parse_err(
            path,
            0,
            format!("bad magic number {magic:#010x}, expected {want:#010x}"),
        ));
    }
    Ok(())
}

/// Raw image bytes plus `(count, rows, cols)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    expect_magic(bytes, IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let payload = &bytes[16..];
    let want = count * rows * cols;
    if payload.len() < want {
        return Err(parse_err(
            path,
            bytes.len(),
            format!(
                "truncated: {count} images of {rows}x{cols} need {want} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > want {
        return Err(parse_err(
            path,
            16 + want,
            "trailing bytes after image payload",
        ));
    }
    Ok((count, rows, cols, payload.to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    expect_magic(bytes, LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(parse_err(
            path,
            bytes.len(),
            format!(
                "truncated: {count} labels declared, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > count {
        return Err(parse_err(
            path,
            8 + count,
            "trailing bytes after label payload",
        ));
    }
    Ok(payload.to_vec())
}

/// Loads an IDX image/label pair; pixels are scaled by `1/255`.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;
    let (count, rows, cols, pixels) = parse_images(&image_bytes, images_path)?;
    let labels = parse_labels(&label_bytes, labels_path)?;
    if labels.len() != count {
        return Err(parse_err(
            labels_path,
            4,
            format!("{} labels but {count} images", labels.len()),
        ));
    }

    let d = rows * cols;
    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| LabeledExample {
            pixels: Array1::from_iter(pixels[i * d..(i + 1) * d].iter().map(|&p| p as f64 / 255.0)),
            label: label as usize,
        })
        .collect();

    let mut hasher = Sha256::new();
    hasher.update(&image_bytes);
    hasher.update(&label_bytes);
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        examples,
        name,
        source_digest: hex::encode(hasher.finalize()),
        image_shape: (rows, cols),
    })
}

pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size mismatch");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an IDX image file (used for fixtures and subsets).
pub fn write_idx_images(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_images(rows, cols, images)).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}
