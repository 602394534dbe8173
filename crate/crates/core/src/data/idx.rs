//! The IDX binary format: a big-endian `u32` magic, one big-endian `u32` per
//! dimension, then the raw `u8` payload.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{ClientDataset, DataError};
use crate::nn::{Tensor, PIXELS};

/// `u8` payload, three dimensions.
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// `u8` payload, one dimension.
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Length(format!("{what} header truncated")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<(), DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Format(format!("{what}: missing magic number")));
    }
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(DataError::Format(format!(
            "{what}: magic {magic:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

fn check_payload(len: usize, header: usize, expected: usize, what: &str) -> Result<(), DataError> {
    let got = len - header;
    if got != expected {
        return Err(DataError::Length(format!(
            "{what}: payload is {got} bytes, header declares {expected}"
        )));
    }
    Ok(())
}

/// Parses an image file into `[n, 28, 28, 1]` pixels scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor, DataError> {
    check_magic(bytes, IMAGES_MAGIC, "images")?;
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    if rows != 28 || cols != 28 {
        return Err(DataError::Format(format!(
            "images are {rows}x{cols}, expected 28x28"
        )));
    }
    let expected = n
        .checked_mul(PIXELS)
        .ok_or_else(|| DataError::Length(format!("images: count {n} overflows")))?;
    check_payload(bytes.len(), 16, expected, "images")?;
    let data = bytes[16..].iter().map(|&p| p as f32 / 255.0).collect();
    Ok(Tensor::new(vec![n, 28, 28, 1], data).expect("length checked"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, LABELS_MAGIC, "labels")?;
    let n = read_u32(bytes, 4, "labels")? as usize;
    check_payload(bytes.len(), 8, n, "labels")?;
    Ok(bytes[8..].to_vec())
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<ClientDataset, DataError> {
    let images = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if images.shape()[0] != labels.len() {
        return Err(DataError::Consistency(format!(
            "{} images but {} labels",
            images.shape()[0],
            labels.len()
        )));
    }
    ClientDataset::new(images, labels)
}

/// Serializes a dataset back to `(images, labels)` IDX bytes.
pub fn to_idx_bytes(ds: &ClientDataset) -> (Vec<u8>, Vec<u8>) {
    let n = ds.len() as u32;
    let mut images = Vec::with_capacity(16 + ds.len() * PIXELS);
    for v in [IMAGES_MAGIC, n, 28, 28] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(
        ds.images()
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut labels = Vec::with_capacity(8 + ds.len());
    for v in [LABELS_MAGIC, n] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend_from_slice(ds.labels());
    (images, labels)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |source| DataError::Io { path: p, source }
    };
    if path.exists() {
        return fs::read(path).map_err(io_err(path));
    }
    let gz = with_suffix(path, ".gz");
    let file = fs::File::open(&gz).map_err(io_err(path))?;
    let mut out = Vec::new();
    GzDecoder::new(file)
        .read_to_end(&mut out)
        .map_err(io_err(&gz))?;
    Ok(out)
}

/// Loads `{prefix}-images-idx3-ubyte` and `{prefix}-labels-idx1-ubyte`,
/// falling back to `.gz` variants. `data/mnist/train` names the MNIST
/// training split, `shards/shard-000` a partitioned shard.
pub fn load_idx(prefix: impl AsRef<Path>) -> Result<ClientDataset, DataError> {
    let prefix = prefix.as_ref();
    let images = read_maybe_gz(&with_suffix(prefix, "-images-idx3-ubyte"))?;
    let labels = read_maybe_gz(&with_suffix(prefix, "-labels-idx1-ubyte"))?;
    parse_idx(&images, &labels)
}

/// Writes the uncompressed pair read back by [`load_idx`].
pub fn save_idx(ds: &ClientDataset, prefix: impl AsRef<Path>) -> Result<(), DataError> {
    let prefix = prefix.as_ref();
    let (images, labels) = to_idx_bytes(ds);
    for (suffix, bytes) in [("-images-idx3-ubyte", images), ("-labels-idx1-ubyte", labels)] {
        let path = with_suffix(prefix, suffix);
        fs::write(&path, bytes).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
