//! Datasets: the IDX codec, client partitioning and a synthetic generator.

mod idx;
mod partition;
mod synth;

use thiserror::Error;

use crate::nn::{Tensor, CLASSES, PIXELS};

pub use idx::{
    load_idx, parse_idx, parse_idx_images, parse_idx_labels, save_idx, to_idx_bytes,
    IMAGES_MAGIC, LABELS_MAGIC,
};
pub use partition::{partition, PartitionPlan, Strategy};
pub use synth::synth_dataset;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset is empty")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A client's local shard: images `[n, 28, 28, 1]` in [0, 1] and labels in 0..10.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    images: Tensor,
    labels: Vec<u8>,
}

impl ClientDataset {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self, DataError> {
        let n = match images.shape() {
            [n, 28, 28, 1] => *n,
            other => {
                return Err(DataError::Format(format!(
                    "images must be [n, 28, 28, 1], got {other:?}"
                )))
            }
        };
        if n != labels.len() {
            return Err(DataError::Consistency(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if n == 0 {
            return Err(DataError::Empty);
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(DataError::Format(format!("label {bad} out of range 0..10")));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images.data()[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = (&[f32], u8)> + '_ {
        self.images
            .data()
            .chunks_exact(PIXELS)
            .zip(self.labels.iter().copied())
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(DataError::Config(format!("index {i} out of range")));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(vec![indices.len(), 28, 28, 1], data)
            .expect("length matches shape");
        Self::new(images, labels)
    }

    /// The first `n` samples (or all of them if fewer).
    pub fn take(&self, n: usize) -> Result<Self, DataError> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Images as a batch tensor plus one-hot labels, for the tensor-level API.
    pub fn to_batch(&self) -> (Tensor, Tensor) {
        let mut y = vec![0.0; self.len() * CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            y[i * CLASSES + l as usize] = 1.0;
        }
        (
            self.images.clone(),
            Tensor::new(vec![self.len(), CLASSES], y).expect("length matches shape"),
        )
    }
}
