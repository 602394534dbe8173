use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClientDataset, DataError};
use crate::nn::{Tensor, CLASSES, PIXELS};
use crate::seed::{self, Stream};

const PATCH: usize = 5;
const NOISE_MAX: f32 = 0.3;
const PATCH_LEVEL: f32 = 0.9;

/// Top-left corner of the bright patch marking class `k`: two rows of five.
fn patch_origin(k: usize) -> (usize, usize) {
    (4 + 14 * (k / 5), 1 + PATCH * (k % 5) + k % 5 / 2)
}

/// Synthetic 28x28 digits: uniform background noise in [0, 0.3] plus a
/// class-specific 5x5 patch. Labels are assigned round-robin.
pub fn synth_dataset(n: usize, num_classes: usize, seed: u64) -> Result<ClientDataset, DataError> {
    if num_classes == 0 || num_classes > CLASSES {
        return Err(DataError::Config(format!(
            "num_classes must be in 1..={CLASSES}, got {num_classes}"
        )));
    }
    if n < num_classes {
        return Err(DataError::Config(format!(
            "need at least {num_classes} samples, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, Stream::Synth, &[]));
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let start = data.len();
        data.extend((0..PIXELS).map(|_| rng.gen::<f32>() * NOISE_MAX));
        let (y0, x0) = patch_origin(class);
        for y in y0..y0 + PATCH {
            for x in x0..x0 + PATCH {
                let px = &mut data[start + y * 28 + x];
                *px = (*px + PATCH_LEVEL).min(1.0);
            }
        }
        labels.push(class as u8);
    }
    let images = Tensor::new(vec![n, 28, 28, 1], data).expect("length matches shape");
    ClientDataset::new(images, labels)
}
