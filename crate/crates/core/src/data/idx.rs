//! IDX files (the MNIST container): big-endian header, unsigned-byte payload.
//!
//! Images use magic `0x00000803` with dims `(count, rows, cols)`, labels
//! use `0x00000801` with dims `(count)`.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn parse(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::format("IDX file shorter than its magic"));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if found != magic {
        return Err(Error::format(format!("IDX magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::format("truncated IDX header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let expected = dims.iter().product::<usize>();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(Error::format(format!(
            "IDX body holds {} bytes, header promises {expected}",
            body.len()
        )));
    }
    Ok((dims, body))
}

/// Images scaled to `[0, 1]`, one flattened row per image.
pub fn parse_images(bytes: &[u8]) -> Result<Matrix> {
    let (dims, body) = parse(bytes, IMAGES_MAGIC)?;
    let width = dims[1] * dims[2];
    Matrix::new(dims[0], width, body.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let (_, body) = parse(bytes, LABELS_MAGIC)?;
    Ok(body.iter().map(|&b| b as u32).collect())
}

pub fn encode_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image/label file pair; the class count is one past the largest label.
pub fn load(images: &Path, labels: &Path) -> Result<Dataset> {
    let inputs = parse_images(&fs::read(images)?)?;
    let labels = parse_labels(&fs::read(labels)?)?;
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1).max(2);
    Dataset::new(inputs, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_written_files() {
        let bytes = encode_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        assert_eq!(&bytes[..8], &[0, 0, 8, 3, 0, 0, 0, 2]);
        let m = parse_images(&bytes).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 4));
        assert_eq!(m.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(parse_labels(&encode_labels(&[3, 1])).unwrap(), vec![3, 1]);
    }

    #[test]
    fn rejects_wrong_magic_and_lengths() {
        let labels = encode_labels(&[1, 2, 3]);
        assert!(parse_images(&labels).is_err());
        assert!(parse_labels(&labels[..labels.len() - 1]).is_err());
        assert!(parse_labels(&[0, 0]).is_err());
    }

    #[test]
    fn load_pair_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&img, encode_images(3, 1, 2, &[0, 1, 2, 3, 4, 5])).unwrap();
        fs::write(&lab, encode_labels(&[0, 2, 1])).unwrap();
        let ds = load(&img, &lab).unwrap();
        assert_eq!((ds.len(), ds.input_dim(), ds.num_classes()), (3, 2, 3));
    }
}
