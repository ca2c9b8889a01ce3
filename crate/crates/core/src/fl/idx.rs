//! IDX files as distributed with MNIST: a big-endian header (magic, counts,
//! dimensions) followed by raw unsigned bytes.

use std::fs;
use std::path::Path;

use crate::fl::dataset::{Dataset, CLASSES};
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `count * rows * cols` bytes.
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Idx {
            offset,
            reason: "file ends inside the header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Idx {
            offset: 0,
            reason: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn body(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    if bytes.len() < header + len {
        return Err(Error::Idx {
            offset: bytes.len(),
            reason: format!(
                "truncated: header promises {len} data bytes, found {}",
                bytes.len() - header
            ),
        });
    }
    Ok(&bytes[header..header + len])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = body(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let labels = body(bytes, 8, count)?;
    if let Some(i) = labels.iter().position(|&l| l as usize >= CLASSES) {
        return Err(Error::Idx {
            offset: 8 + i,
            reason: format!("label {} outside 0..{CLASSES}", labels[i]),
        });
    }
    Ok(labels.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads an image file and a label file into a dataset with pixels scaled to
/// `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse_images(&fs::read(images)?)?;
    let lab = parse_labels(&fs::read(labels)?)?;
    if img.count != lab.len() {
        return Err(Error::Idx {
            offset: 4,
            reason: format!("{} images but {} labels", img.count, lab.len()),
        });
    }
    let features = img.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(img.rows * img.cols, features, lab)
}
