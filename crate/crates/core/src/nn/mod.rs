//! From-scratch LeNet: initialization, forward/backward, softmax
//! cross-entropy and the plain SGD update.
//!
//! Weights and activations are `f32`. Losses, and the reduction of per-sample
//! gradients over a batch, are carried in `f64`.

mod lenet;
mod scalar;
mod tensor;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::ClientDataset;
use crate::seed::{self, Stream};

pub use lenet::{CLASSES, PIXELS};
pub use scalar::Real;
pub use tensor::Tensor;
pub use weights::{ModelSpec, NamedTensor, ParamSpec, WeightsBundle, LENET_MNIST_V1};

use lenet::{Params, Scratch, Trace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

/// Glorot-uniform kernels (bound `sqrt(6 / (fan_in + fan_out))`), zero biases.
///
/// Coordinates are drawn in bundle order from a ChaCha8 stream seeded with the
/// `Init` sub-seed of `seed`, as `(2u - 1) * bound` with `u` uniform on [0, 1).
pub fn init_weights(spec: ModelSpec, seed: u64) -> WeightsBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, Stream::Init, &[]));
    let tensors = spec
        .params()
        .iter()
        .map(|p| {
            let data = if p.is_bias {
                vec![0.0; p.len()]
            } else {
                let bound = (6.0 / (p.fan_in + p.fan_out) as f64).sqrt();
                (0..p.len())
                    .map(|_| ((2.0 * rng.gen::<f64>() - 1.0) * bound) as f32)
                    .collect()
            };
            NamedTensor {
                name: p.name.to_string(),
                tensor: Tensor::new(p.shape.to_vec(), data).expect("shape from spec"),
            }
        })
        .collect();
    WeightsBundle::new(tensors)
}

fn check_batch(batch: &Tensor) -> Result<usize, NnError> {
    match batch.shape() {
        [b, 28, 28, 1] if *b >= 1 => Ok(*b),
        other => Err(NnError::Dimension(format!(
            "expected input batch [B>=1, 28, 28, 1], got {other:?}"
        ))),
    }
}

fn check_weights(weights: &WeightsBundle) -> Result<(), NnError> {
    weights.check_conforms(ModelSpec::LenetMnistV1)
}

/// Logits `[B, 10]` for a batch `[B, 28, 28, 1]`.
pub fn forward(weights: &WeightsBundle, batch: &Tensor) -> Result<Tensor, NnError> {
    check_weights(weights)?;
    let b = check_batch(batch)?;
    let params = Params::<f32>::from_bundle(weights);
    let mut trace = Trace::new();
    let mut out = Vec::with_capacity(b * CLASSES);
    for x in batch.data().chunks_exact(PIXELS) {
        trace.x.copy_from_slice(x);
        lenet::forward_sample(&params, &mut trace);
        out.extend_from_slice(&trace.logits);
    }
    let logits = Tensor::new(vec![b, CLASSES], out)?;
    if !logits.is_finite() {
        return Err(NnError::NonFinite("forward"));
    }
    Ok(logits)
}

/// Decodes one-hot rows into class indices.
fn one_hot_labels(batch_y: &Tensor, b: usize) -> Result<Vec<usize>, NnError> {
    if batch_y.shape() != [b, CLASSES] {
        return Err(NnError::Dimension(format!(
            "expected labels [{b}, {CLASSES}], got {:?}",
            batch_y.shape()
        )));
    }
    batch_y
        .data()
        .chunks_exact(CLASSES)
        .enumerate()
        .map(|(row, y)| {
            let ones = y.iter().filter(|&&v| v == 1.0).count();
            let zeros = y.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != CLASSES - 1 {
                return Err(NnError::Data(format!("label row {row} is not one-hot")));
            }
            Ok(y.iter().position(|&v| v == 1.0).unwrap())
        })
        .collect()
}

/// Batch gradient over `(image, label)` samples.
///
/// Each sample's gradient is computed in `f32` and folded into an `f64`
/// accumulator; the result is the mean over the batch.
pub(crate) fn loss_grad_samples<'a, I>(
    weights: &WeightsBundle,
    samples: I,
) -> Result<(f64, WeightsBundle), NnError>
where
    I: ExactSizeIterator<Item = (&'a [f32], usize)>,
{
    let b = samples.len();
    if b == 0 {
        return Err(NnError::Data("empty batch".into()));
    }
    let inv_b = 1.0 / b as f64;
    let params = Params::<f32>::from_bundle(weights);
    let mut trace = Trace::new();
    let mut scratch = Scratch::new();
    let mut sample_grad = Params::<f32>::zeros();
    let mut acc = vec![0.0f64; weights.num_params()];
    let mut loss = 0.0f64;

    for (x, label) in samples {
        trace.x.copy_from_slice(x);
        lenet::forward_sample(&params, &mut trace);
        let lse = lenet::log_sum_exp(&trace.logits);
        loss += lse - trace.logits[label] as f64;

        let mut dlogits = [0.0f32; CLASSES];
        for (o, d) in dlogits.iter_mut().enumerate() {
            let p = (trace.logits[o] as f64 - lse).exp();
            let y = if o == label { 1.0 } else { 0.0 };
            *d = ((p - y) * inv_b) as f32;
        }
        sample_grad.clear();
        lenet::backward_sample(&params, &trace, &dlogits, &mut sample_grad, &mut scratch);
        let flat = sample_grad.buffers().into_iter().flat_map(|buf| buf.iter());
        for (a, &g) in acc.iter_mut().zip(flat) {
            *a += g as f64;
        }
    }

    let loss = loss * inv_b;
    let grads: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
    if !loss.is_finite() || grads.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("loss_and_grad"));
    }
    Ok((loss, weights.with_values(&grads)?))
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn loss_and_grad(
    weights: &WeightsBundle,
    batch_x: &Tensor,
    batch_y: &Tensor,
) -> Result<(f64, WeightsBundle), NnError> {
    check_weights(weights)?;
    let b = check_batch(batch_x)?;
    let labels = one_hot_labels(batch_y, b)?;
    loss_grad_samples(
        weights,
        batch_x.data().chunks_exact(PIXELS).zip(labels.iter().copied()),
    )
}

/// Mean cross-entropy with every activation held in `f64`.
///
/// Forward-only; intended for finite-difference checks of [`loss_and_grad`].
pub fn loss_f64(weights: &WeightsBundle, batch_x: &Tensor, batch_y: &Tensor) -> Result<f64, NnError> {
    check_weights(weights)?;
    let b = check_batch(batch_x)?;
    let labels = one_hot_labels(batch_y, b)?;
    Ok(loss_in::<f64>(&Params::from_bundle(weights), batch_x, &labels))
}

/// Same as [`loss_f64`] but with the parameters given directly in `f64`,
/// so perturbations smaller than `f32` resolution are representable.
pub fn loss_f64_flat(
    params: &[f64],
    batch_x: &Tensor,
    batch_y: &Tensor,
) -> Result<f64, NnError> {
    let p = params_from_flat(params)?;
    let b = check_batch(batch_x)?;
    let labels = one_hot_labels(batch_y, b)?;
    Ok(loss_in(&p, batch_x, &labels))
}

/// Unpacks a flat `f64` parameter vector in bundle order.
fn params_from_flat(params: &[f64]) -> Result<Params<f64>, NnError> {
    let spec = ModelSpec::LenetMnistV1;
    if params.len() != spec.num_params() {
        return Err(NnError::Dimension(format!(
            "expected {} parameters, got {}",
            spec.num_params(),
            params.len()
        )));
    }
    let mut p = Params::<f64>::zeros();
    let mut rest = params;
    for buf in p.buffers_mut() {
        let (head, tail) = rest.split_at(buf.len());
        buf.copy_from_slice(head);
        rest = tail;
    }
    Ok(p)
}

/// Loss and gradient with every activation and gradient held in `f64`.
///
/// Runs the same kernels as [`loss_and_grad`]; used to verify them without
/// `f32` rounding in the way.
pub fn loss_and_grad_f64(
    params: &[f64],
    batch_x: &Tensor,
    batch_y: &Tensor,
) -> Result<(f64, Vec<f64>), NnError> {
    let p = params_from_flat(params)?;
    let b = check_batch(batch_x)?;
    let labels = one_hot_labels(batch_y, b)?;
    let inv_b = 1.0 / b as f64;
    let mut trace = Trace::<f64>::new();
    let mut scratch = Scratch::new();
    let mut g = Params::<f64>::zeros();
    let mut loss = 0.0;
    for (x, &label) in batch_x.data().chunks_exact(PIXELS).zip(&labels) {
        for (dst, &src) in trace.x.iter_mut().zip(x) {
            *dst = src as f64;
        }
        lenet::forward_sample(&p, &mut trace);
        let lse = lenet::log_sum_exp(&trace.logits);
        loss += lse - trace.logits[label];
        let mut dlogits = [0.0f64; CLASSES];
        for (o, d) in dlogits.iter_mut().enumerate() {
            let y = if o == label { 1.0 } else { 0.0 };
            *d = ((trace.logits[o] - lse).exp() - y) * inv_b;
        }
        lenet::backward_sample(&p, &trace, &dlogits, &mut g, &mut scratch);
    }
    let flat = g.buffers().into_iter().flatten().copied().collect();
    Ok((loss * inv_b, flat))
}

/// Identifies the linear region (relu activity and pooling winners) the
/// batch occupies under `params`. Equal fingerprints at `w` and `w ± δ` mean
/// the loss is smooth along that segment.
pub fn region_fingerprint(params: &[f64], batch_x: &Tensor) -> Result<u64, NnError> {
    let p = params_from_flat(params)?;
    check_batch(batch_x)?;
    let mut trace = Trace::<f64>::new();
    let mut h = 0u64;
    for x in batch_x.data().chunks_exact(PIXELS) {
        for (dst, &src) in trace.x.iter_mut().zip(x) {
            *dst = src as f64;
        }
        lenet::forward_sample(&p, &mut trace);
        h = crate::seed::mix(h ^ lenet::region_fingerprint(&trace));
    }
    Ok(h)
}

fn loss_in<T: Real>(params: &Params<T>, batch_x: &Tensor, labels: &[usize]) -> f64 {
    let mut trace = Trace::<T>::new();
    let mut loss = 0.0;
    for (x, &label) in batch_x.data().chunks_exact(PIXELS).zip(labels) {
        for (dst, &src) in trace.x.iter_mut().zip(x) {
            *dst = T::from_f32(src);
        }
        lenet::forward_sample(params, &mut trace);
        loss += lenet::log_sum_exp(&trace.logits) - trace.logits[label].to_f64();
    }
    loss / labels.len() as f64
}

/// `w - eta * g`, coordinate-wise.
pub fn sgd_step(
    weights: &WeightsBundle,
    grads: &WeightsBundle,
    eta: f32,
) -> Result<WeightsBundle, NnError> {
    weights.check_same_structure(grads)?;
    let mut out = weights.clone();
    for (w, g) in out.values_mut().zip(grads.values()) {
        *w -= eta * g;
    }
    if !out.is_finite() {
        return Err(NnError::NonFinite("sgd_step"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Top-1 accuracy (ties broken toward the lowest class) and mean
/// cross-entropy over a dataset.
pub fn evaluate(weights: &WeightsBundle, dataset: &ClientDataset) -> Result<Evaluation, NnError> {
    check_weights(weights)?;
    if dataset.is_empty() {
        return Err(NnError::Data("cannot evaluate on an empty dataset".into()));
    }
    let params = Params::<f32>::from_bundle(weights);
    let mut trace = Trace::new();
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    for (x, label) in dataset.samples() {
        trace.x.copy_from_slice(x);
        lenet::forward_sample(&params, &mut trace);
        if lenet::argmax(&trace.logits) == label as usize {
            correct += 1;
        }
        loss += lenet::log_sum_exp(&trace.logits) - trace.logits[label as usize] as f64;
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_input(b: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![b, 28, 28, 1],
            (0..b * PIXELS).map(|_| rng.gen::<f32>()).collect(),
        )
        .unwrap()
    }

    fn one_hot(labels: &[usize]) -> Tensor {
        let mut data = vec![0.0; labels.len() * CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            data[i * CLASSES + l] = 1.0;
        }
        Tensor::new(vec![labels.len(), CLASSES], data).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_weights(ModelSpec::LenetMnistV1, 11);
        let b = init_weights(ModelSpec::LenetMnistV1, 11);
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&init_weights(ModelSpec::LenetMnistV1, 12)));
    }

    #[test]
    fn init_biases_zero_and_kernels_bounded() {
        let w = init_weights(ModelSpec::LenetMnistV1, 3);
        for (t, p) in w.tensors().iter().zip(ModelSpec::LenetMnistV1.params()) {
            let bound = (6.0 / (p.fan_in + p.fan_out) as f32).sqrt();
            if p.is_bias {
                assert!(t.tensor.data().iter().all(|&v| v == 0.0), "{}", p.name);
            } else {
                assert!(t.tensor.data().iter().all(|v| v.abs() <= bound), "{}", p.name);
                assert!(t.tensor.data().iter().any(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn zero_weights_zero_input_gives_zero_logits() {
        let w = WeightsBundle::zeros(ModelSpec::LenetMnistV1);
        let logits = forward(&w, &Tensor::zeros(vec![1, 28, 28, 1])).unwrap();
        assert_eq!(logits.shape(), &[1, 10]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_dimension_preserved() {
        let w = init_weights(ModelSpec::LenetMnistV1, 1);
        let logits = forward(&w, &uniform_input(3, 9)).unwrap();
        assert_eq!(logits.shape(), &[3, 10]);
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let w = init_weights(ModelSpec::LenetMnistV1, 1);
        assert!(matches!(
            forward(&w, &Tensor::zeros(vec![1, 28, 27, 1])),
            Err(NnError::Dimension(_))
        ));
        assert!(matches!(
            forward(&w, &Tensor::zeros(vec![0, 28, 28, 1])),
            Err(NnError::Dimension(_))
        ));
    }

    #[test]
    fn intermediate_shape_chain() {
        assert_eq!(lenet::H1, 24);
        assert_eq!(lenet::P1, 12);
        assert_eq!(lenet::H2, 8);
        assert_eq!(lenet::P2, 4);
        assert_eq!(lenet::FLAT, 256);
    }

    #[test]
    fn uniform_logits_give_ln_ten() {
        // All-zero weights make every logit equal.
        let w = WeightsBundle::zeros(ModelSpec::LenetMnistV1);
        let (loss, _) = loss_and_grad(&w, &uniform_input(2, 1), &one_hot(&[3, 7])).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn logit_gradient_is_softmax_minus_target_over_batch() {
        // With zero weights, d loss / d dense1.b = mean over batch of (softmax - y).
        let w = WeightsBundle::zeros(ModelSpec::LenetMnistV1);
        let labels = [3usize, 3, 5, 9];
        let (_, g) = loss_and_grad(&w, &uniform_input(4, 2), &one_hot(&labels)).unwrap();
        let gb = g.get("dense1.b").unwrap().data();
        for (o, &got) in gb.iter().enumerate() {
            let hits = labels.iter().filter(|&&l| l == o).count() as f32;
            let expected = 0.1 - hits / labels.len() as f32;
            assert!((got - expected).abs() < 1e-6, "class {o}");
        }
    }

    #[test]
    fn non_one_hot_labels_rejected() {
        let w = WeightsBundle::zeros(ModelSpec::LenetMnistV1);
        let mut y = one_hot(&[1]);
        y.data_mut()[2] = 0.5;
        assert!(matches!(
            loss_and_grad(&w, &uniform_input(1, 1), &y),
            Err(NnError::Data(_))
        ));
    }

    #[test]
    fn sgd_step_examples() {
        let w = WeightsBundle::from_parts([("p", vec![2], vec![1.0, 2.0])]).unwrap();
        let g = WeightsBundle::from_parts([("p", vec![2], vec![0.5, -1.0])]).unwrap();
        let stepped = sgd_step(&w, &g, 0.1).unwrap();
        assert_eq!(stepped.to_flat(), vec![0.95, 2.1]);
        assert!(sgd_step(&w, &g, 0.0).unwrap().bit_eq(&w));
        assert_eq!(w.to_flat(), vec![1.0, 2.0]);

        let twice = sgd_step(&sgd_step(&w, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        let once = sgd_step(&w, &g, 0.5).unwrap();
        for (a, b) in twice.values().zip(once.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sgd_step_structure_mismatch() {
        let w = WeightsBundle::from_parts([("p", vec![2], vec![1.0, 2.0])]).unwrap();
        let g = WeightsBundle::from_parts([("q", vec![2], vec![0.5, -1.0])]).unwrap();
        assert!(matches!(sgd_step(&w, &g, 0.1), Err(NnError::Dimension(_))));
    }

    #[test]
    fn f64_loss_agrees_with_f32_loss() {
        let w = init_weights(ModelSpec::LenetMnistV1, 5);
        let x = uniform_input(2, 5);
        let y = one_hot(&[0, 4]);
        let (l32, _) = loss_and_grad(&w, &x, &y).unwrap();
        let l64 = loss_f64(&w, &x, &y).unwrap();
        let flat: Vec<f64> = w.values().map(f64::from).collect();
        assert!((l32 - l64).abs() < 1e-5);
        assert_eq!(l64, loss_f64_flat(&flat, &x, &y).unwrap());
    }
}
