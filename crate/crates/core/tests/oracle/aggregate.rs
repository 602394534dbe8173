//! Random update sets and a brute-force weighted mean to check aggregation against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use webfed_core::fedavg::Update;
use webfed_core::nn::WeightsBundle;

pub fn random_set(rng: &mut ChaCha8Rng) -> Vec<Update> {
    let k = rng.gen_range(1..=8);
    let shape = [rng.gen_range(1..40), rng.gen_range(1..6)];
    (0..k)
        .map(|_| {
            let a: Vec<f32> = (0..shape[0]).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f32> = (0..shape[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Update {
                num_samples: rng.gen_range(1..5000),
                weights: WeightsBundle::from_parts([
                    ("a", vec![shape[0]], a),
                    ("b", vec![shape[1]], b),
                ])
                .unwrap(),
            }
        })
        .collect()
}

/// Per coordinate: exact integer-weighted sum in 128-bit fixed point.
pub fn brute_force(updates: &[Update]) -> Vec<f64> {
    let total: u64 = updates.iter().map(|u| u.num_samples).sum();
    let flats: Vec<Vec<f32>> = updates.iter().map(|u| u.weights.to_flat()).collect();
    (0..flats[0].len())
        .map(|j| {
            // Truncation to 2^-40 is the only rounding before the final divide.
            let sum: i128 = updates
                .iter()
                .zip(&flats)
                .map(|(u, f)| u.num_samples as i128 * (f[j] as f64 * 2f64.powi(40)) as i128)
                .sum();
            sum as f64 / 2f64.powi(40) / total as f64
        })
        .collect()
}
