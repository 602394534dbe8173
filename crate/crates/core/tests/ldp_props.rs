//! Statistical and analytic properties of the Laplace mechanism.

use webfed_core::ldp::{self, laplace_sample, perturb, verify_ldp_ratio, PrivacyParams};
use webfed_core::nn::{init_weights, ModelSpec, WeightsBundle};
use webfed_core::seed::NoiseSeed;

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn million_samples_match_laplace_moments() {
    let xs = laplace_sample(2.0, NoiseSeed(20211), 1_000_000).unwrap();
    let (mean, var) = moments(&xs);
    assert!(mean.abs() <= 0.02, "mean {mean}");
    assert!((var - 8.0).abs() <= 0.05 * 8.0, "variance {var}");
}

#[test]
fn median_absolute_value_is_b_ln2() {
    let b = 0.5;
    let mut xs: Vec<f64> = laplace_sample(b, NoiseSeed(3), 200_001)
        .unwrap()
        .into_iter()
        .map(f64::abs)
        .collect();
    xs.sort_by(f64::total_cmp);
    let median = xs[xs.len() / 2];
    assert!((median - b * std::f64::consts::LN_2).abs() < 0.01, "{median}");
}

#[test]
fn extreme_pair_on_fine_grid_is_bounded_by_epsilon() {
    let p = PrivacyParams::new(Some(3.0), 1.0).unwrap();
    let b = p.noise_scale();
    let grid: Vec<(f64, f64, f64)> = (0..1000)
        .map(|i| (-1.0, 1.0, -10.0 * b + 20.0 * b * i as f64 / 999.0))
        .collect();
    let worst = verify_ldp_ratio(&p, &grid).unwrap();
    assert!(worst <= 3.0 + 1e-9, "{worst}");
    // Outside [-C, C] the bound is attained.
    assert!((worst - 3.0).abs() < 1e-9);
}

#[test]
fn ratio_sweep_for_several_budgets() {
    for eps in [0.5, 1.0, 3.0, 6.0] {
        for clip in [0.1, 1.0, 4.0] {
            let p = PrivacyParams::new(Some(eps), clip).unwrap();
            let b = p.noise_scale();
            let vs = [-clip, -clip / 2.0, 0.0, clip / 3.0, clip];
            let mut grid = Vec::new();
            for &v in &vs {
                for &v2 in &vs {
                    for i in 0..=400 {
                        grid.push((v, v2, -10.0 * b + 20.0 * b * i as f64 / 400.0));
                    }
                }
            }
            let worst = verify_ldp_ratio(&p, &grid).unwrap();
            assert!(worst <= eps + 1e-9, "eps {eps} clip {clip}: {worst}");
        }
    }
}

#[test]
fn ratio_preconditions() {
    let p = PrivacyParams::new(Some(1.0), 1.0).unwrap();
    assert!(verify_ldp_ratio(&p, &[(1.5, 0.0, 0.0)]).is_err());
    let free = PrivacyParams::noise_free(1.0).unwrap();
    assert!(verify_ldp_ratio(&free, &[(0.0, 0.0, 0.0)]).is_err());
}

fn l1_noise(w: &WeightsBundle, eps: f64, seed: u64) -> f64 {
    let p = PrivacyParams::new(Some(eps), 1.0).unwrap();
    let clipped = ldp::clip_weights(w, 1.0).unwrap();
    let noisy = perturb(w, &p, NoiseSeed(seed)).unwrap();
    noisy
        .values()
        .zip(clipped.values())
        .map(|(a, b)| (a as f64 - b as f64).abs())
        .sum()
}

#[test]
fn smaller_budget_means_more_noise() {
    let w = init_weights(ModelSpec::LenetMnistV1, 1);
    let draws = 128;
    let mut wins = 0;
    let (mut sum3, mut sum6) = (0.0, 0.0);
    for s in 0..draws {
        let a = l1_noise(&w, 3.0, s);
        let b = l1_noise(&w, 6.0, s + 10_000);
        sum3 += a;
        sum6 += b;
        wins += usize::from(a > b);
    }
    assert!(sum3 > sum6);
    assert_eq!(wins, draws as usize);
    // E|Lap(b)| = b, so the means should sit near d*b.
    let d = w.num_params() as f64;
    assert!((sum3 / draws as f64 / (d * 2.0 / 3.0) - 1.0).abs() < 0.01);
    assert!((sum6 / draws as f64 / (d * 2.0 / 6.0) - 1.0).abs() < 0.01);
}

#[test]
fn perturbation_variance_is_two_b_squared() {
    let w = init_weights(ModelSpec::LenetMnistV1, 4);
    let p = PrivacyParams::new(Some(4.0), 1.0).unwrap();
    let clipped = ldp::clip_weights(&w, 1.0).unwrap();
    let mut diffs = Vec::new();
    for s in 0..40 {
        let noisy = perturb(&w, &p, NoiseSeed::derive(9, s, 1)).unwrap();
        diffs.extend(
            noisy
                .values()
                .zip(clipped.values())
                .map(|(a, b)| a as f64 - b as f64),
        );
    }
    let (_, var) = moments(&diffs);
    let expected = 2.0 * p.noise_scale().powi(2);
    assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
}

#[test]
fn upload_minus_reconstructed_noise_is_within_clip() {
    let big = init_weights(ModelSpec::LenetMnistV1, 2).map(|v| v * 40.0);
    let p = PrivacyParams::new(Some(3.0), 0.5).unwrap();
    for s in 0..10 {
        let seed = NoiseSeed::derive(77, s, 3);
        let noisy = perturb(&big, &p, seed).unwrap();
        let noise = laplace_sample(p.noise_scale(), seed, big.num_params()).unwrap();
        for (v, n) in noisy.values().zip(noise) {
            // f32 rounding of the noisy value is the only slack.
            let tol = 1e-6 * (1.0 + n.abs());
            assert!((v as f64 - n).abs() <= 0.5 + tol);
        }
    }
}

#[test]
fn noise_free_perturb_is_clip_bit_for_bit() {
    let w = init_weights(ModelSpec::LenetMnistV1, 5).map(|v| v * 20.0);
    let p = PrivacyParams::noise_free(1.0).unwrap();
    let out = perturb(&w, &p, NoiseSeed(1)).unwrap();
    assert!(out.bit_eq(&ldp::clip_weights(&w, 1.0).unwrap()));
    assert!(out.values().all(|v| v.abs() <= 1.0));
}
