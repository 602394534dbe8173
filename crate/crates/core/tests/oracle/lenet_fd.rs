//! Finite-difference oracle for LeNet gradients, δ = 1e-3.
//!
//! The reference is a naive `f64` forward pass written here from the layer
//! definitions. Before the softmax the network is piecewise linear, and a
//! 1e-3 stencil on a conv weight routinely straddles a relu or pooling
//! boundary somewhere in the 24x24 map, which makes a plain central difference
//! meaningless there. So the oracle can freeze the relu masks and pooling
//! winners at their values at `w`: the loss restricted to that piece is smooth,
//! agrees with the true loss on the piece, and its gradient at `w` is the
//! gradient backprop must produce.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webfed_core::nn::{self, init_weights, ModelSpec, Tensor, CLASSES, PIXELS};

pub const DELTA: f64 = 1e-3;
pub const MAX_REL: f64 = 1e-3;

pub fn batch(seed: u64, n: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n * PIXELS).map(|_| rng.gen::<f32>()).collect();
    let mut y = vec![0.0; n * CLASSES];
    for i in 0..n {
        y[i * CLASSES + rng.gen_range(0..CLASSES)] = 1.0;
    }
    (
        Tensor::new(vec![n, 28, 28, 1], x).unwrap(),
        Tensor::new(vec![n, CLASSES], y).unwrap(),
    )
}

/// Relu masks and pooling winners of one sample.
#[derive(Clone, PartialEq)]
struct Piece {
    relu1: Vec<bool>,
    pool1: Vec<usize>,
    relu2: Vec<bool>,
    pool2: Vec<usize>,
}

/// Weight views in bundle order: conv1 [5,5,1,8], conv2 [5,5,8,16], dense [256,10].
struct Net<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: &'a [f64],
}

impl<'a> Net<'a> {
    fn new(p: &'a [f64]) -> Self {
        let (w1, p) = p.split_at(200);
        let (b1, p) = p.split_at(8);
        let (w2, p) = p.split_at(3200);
        let (b2, p) = p.split_at(16);
        let (w3, b3) = p.split_at(2560);
        Self { w1, b1, w2, b2, w3, b3 }
    }
}

/// `in_map` is `[h][h][cin]`; output `[h-4][h-4][cout]`.
fn conv(in_map: &[f64], h: usize, cin: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    let oh = h - 4;
    let mut out = Vec::with_capacity(oh * oh * cout);
    for y in 0..oh {
        for x in 0..oh {
            let mut s = b.to_vec();
            for ky in 0..5 {
                for kx in 0..5 {
                    let pixel = &in_map[((y + ky) * h + x + kx) * cin..][..cin];
                    let taps = &w[(ky * 5 + kx) * cin * cout..][..cin * cout];
                    for (&v, row) in pixel.iter().zip(taps.chunks_exact(cout)) {
                        for (acc, &k) in s.iter_mut().zip(row) {
                            *acc += v * k;
                        }
                    }
                }
            }
            out.extend(s);
        }
    }
    out
}

fn relu(z: &mut [f64], mask: Option<&[bool]>) -> Vec<bool> {
    let active: Vec<bool> = match mask {
        Some(m) => m.to_vec(),
        None => z.iter().map(|&v| v > 0.0).collect(),
    };
    for (v, &on) in z.iter_mut().zip(&active) {
        if !on {
            *v = 0.0;
        }
    }
    active
}

/// 2x2 max pool; first maximum in row-major window order wins.
fn pool(a: &[f64], h: usize, c: usize, winners: Option<&[usize]>) -> (Vec<f64>, Vec<usize>) {
    let oh = h / 2;
    let mut out = Vec::with_capacity(oh * oh * c);
    let mut arg = Vec::with_capacity(oh * oh * c);
    for y in 0..oh {
        for x in 0..oh {
            for ch in 0..c {
                let idx = match winners {
                    Some(wn) => wn[arg.len()],
                    None => {
                        let cands = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .map(|(dy, dx)| ((2 * y + dy) * h + 2 * x + dx) * c + ch);
                        let mut best = cands[0];
                        for &i in &cands[1..] {
                            if a[i] > a[best] {
                                best = i;
                            }
                        }
                        best
                    }
                };
                out.push(a[idx]);
                arg.push(idx);
            }
        }
    }
    (out, arg)
}

/// Cross-entropy of one sample, optionally restricted to `frozen`'s piece.
fn sample_loss(net: &Net, x: &[f32], label: usize, frozen: Option<&Piece>) -> (f64, Piece) {
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut a1 = conv(&x, 28, 1, net.w1, net.b1, 8);
    let relu1 = relu(&mut a1, frozen.map(|f| &f.relu1[..]));
    let (p1, pool1) = pool(&a1, 24, 8, frozen.map(|f| &f.pool1[..]));
    let mut a2 = conv(&p1, 12, 8, net.w2, net.b2, 16);
    let relu2 = relu(&mut a2, frozen.map(|f| &f.relu2[..]));
    let (p2, pool2) = pool(&a2, 8, 16, frozen.map(|f| &f.pool2[..]));
    let logits: Vec<f64> = (0..CLASSES)
        .map(|o| net.b3[o] + (0..256).map(|i| p2[i] * net.w3[i * CLASSES + o]).sum::<f64>())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let piece = Piece {
        relu1,
        pool1,
        relu2,
        pool2,
    };
    (lse - logits[label], piece)
}

struct Problem<'a> {
    x: &'a Tensor,
    labels: Vec<usize>,
}

impl Problem<'_> {
    fn samples(&self) -> impl Iterator<Item = (&[f32], usize)> + '_ {
        self.x.data().chunks_exact(PIXELS).zip(self.labels.iter().copied())
    }

    fn pieces(&self, params: &[f64]) -> Vec<Piece> {
        let net = Net::new(params);
        self.samples().map(|(x, l)| sample_loss(&net, x, l, None).1).collect()
    }

    fn loss(&self, params: &[f64], frozen: Option<&[Piece]>) -> f64 {
        let net = Net::new(params);
        let total: f64 = self
            .samples()
            .enumerate()
            .map(|(i, (x, l))| sample_loss(&net, x, l, frozen.map(|f| &f[i])).0)
            .sum();
        total / self.labels.len() as f64
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - n).abs() / denom
    }
}

/// Worst relative error per parameter tensor for one seed, plus, for the
/// small tensors, how many stencils leave the linear piece.
pub struct TensorReport {
    pub name: &'static str,
    pub worst: f64,
    pub straddling: Option<usize>,
}

pub fn check_seed(seed: u64) -> Vec<TensorReport> {
    let spec = ModelSpec::LenetMnistV1;
    let w = init_weights(spec, seed);
    let (x, y) = batch(seed, 2);
    let problem = Problem {
        x: &x,
        labels: y
            .data()
            .chunks_exact(CLASSES)
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap())
            .collect(),
    };
    let mut params: Vec<f64> = w.values().map(f64::from).collect();
    let pieces = problem.pieces(&params);

    // The oracle is the same function the library computes.
    let oracle_loss = problem.loss(&params, None);
    let (lib_loss, analytic) = nn::loss_and_grad_f64(&params, &x, &y).unwrap();
    assert!((oracle_loss - lib_loss).abs() < 1e-12, "{oracle_loss} vs {lib_loss}");
    assert_eq!(problem.loss(&params, Some(&pieces)), oracle_loss);

    let mut out = Vec::new();
    let mut offset = 0;
    for p in spec.params() {
        // Counting stencils that leave the piece costs a forward pass per
        // coordinate, so it is only done for the small tensors.
        let count = p.len() <= 200;
        let mut worst = 0.0f64;
        let mut straddling = 0;
        for i in offset..offset + p.len() {
            let orig = params[i];
            params[i] = orig + DELTA;
            let up = problem.loss(&params, Some(&pieces));
            if count {
                straddling += usize::from(problem.pieces(&params) != pieces);
            }
            params[i] = orig - DELTA;
            let down = problem.loss(&params, Some(&pieces));
            params[i] = orig;
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * DELTA)));
        }
        offset += p.len();
        out.push(TensorReport {
            name: p.name,
            worst,
            straddling: count.then_some(straddling),
        });
    }
    out
}
