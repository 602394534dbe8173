//! Per-sample forward and backward kernels for `lenet-mnist-v1`.
//!
//! Activations are laid out HWC row-major. Shape chain for one sample:
//! `[28,28,1] → conv [24,24,8] → pool [12,12,8] → conv [8,8,16] → pool [4,4,16]
//! → flatten [256] → dense [10]`.

use super::scalar::Real;
use super::WeightsBundle;

pub const IN: usize = 28;
pub const K: usize = 5;
pub const C1: usize = 8;
pub const H1: usize = IN - K + 1; // 24
pub const P1: usize = H1 / 2; // 12
pub const C2: usize = 16;
pub const H2: usize = P1 - K + 1; // 8
pub const P2: usize = H2 / 2; // 4
pub const FLAT: usize = P2 * P2 * C2; // 256
pub const CLASSES: usize = 10;
pub const PIXELS: usize = IN * IN;

/// Model parameters converted to the working precision, in bundle order.
#[derive(Debug, Clone)]
pub struct Params<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub w3: Vec<T>,
    pub b3: Vec<T>,
}

impl<T: Real> Params<T> {
    /// Caller guarantees `w` conforms to lenet-mnist-v1.
    pub fn from_bundle(w: &WeightsBundle) -> Self {
        let t = w.tensors();
        let conv = |i: usize| t[i].tensor.data().iter().map(|&v| T::from_f32(v)).collect();
        Self {
            w1: conv(0),
            b1: conv(1),
            w2: conv(2),
            b2: conv(3),
            w3: conv(4),
            b3: conv(5),
        }
    }

    pub fn zeros() -> Self {
        Self {
            w1: vec![T::ZERO; K * K * C1],
            b1: vec![T::ZERO; C1],
            w2: vec![T::ZERO; K * K * C1 * C2],
            b2: vec![T::ZERO; C2],
            w3: vec![T::ZERO; FLAT * CLASSES],
            b3: vec![T::ZERO; CLASSES],
        }
    }

    pub fn clear(&mut self) {
        for buf in self.buffers_mut() {
            buf.fill(T::ZERO);
        }
    }

    pub fn buffers(&self) -> [&[T]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Intermediate activations of one sample, kept for the backward pass.
pub struct Trace<T> {
    pub x: Vec<T>,
    pub a1: Vec<T>,
    pub p1: Vec<T>,
    pub arg1: Vec<u16>,
    pub a2: Vec<T>,
    pub p2: Vec<T>,
    pub arg2: Vec<u16>,
    pub logits: [T; CLASSES],
}

impl<T: Real> Trace<T> {
    pub fn new() -> Self {
        Self {
            x: vec![T::ZERO; PIXELS],
            a1: vec![T::ZERO; H1 * H1 * C1],
            p1: vec![T::ZERO; P1 * P1 * C1],
            arg1: vec![0; P1 * P1 * C1],
            a2: vec![T::ZERO; H2 * H2 * C2],
            p2: vec![T::ZERO; FLAT],
            arg2: vec![0; FLAT],
            logits: [T::ZERO; CLASSES],
        }
    }
}

/// Scratch gradients for the backward pass.
pub struct Scratch<T> {
    da2: Vec<T>,
    dp1: Vec<T>,
    da1: Vec<T>,
}

impl<T: Real> Scratch<T> {
    pub fn new() -> Self {
        Self {
            da2: vec![T::ZERO; H2 * H2 * C2],
            dp1: vec![T::ZERO; P1 * P1 * C1],
            da1: vec![T::ZERO; H1 * H1 * C1],
        }
    }
}

#[inline]
fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::ZERO {
            *x = T::ZERO;
        }
    }
}

/// 2x2 stride-2 max pooling over an HWC map. Ties resolve to the first
/// element in row-major window order. `arg` receives the flat input index.
fn max_pool<T: Real>(input: &[T], h: usize, c: usize, out: &mut [T], arg: &mut [u16]) {
    let oh = h / 2;
    for oy in 0..oh {
        for ox in 0..oh {
            for ch in 0..c {
                let mut best_idx = ((2 * oy) * h + 2 * ox) * c + ch;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * h + 2 * ox + dx) * c + ch;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (oy * oh + ox) * c + ch;
                out[o] = best;
                arg[o] = best_idx as u16;
            }
        }
    }
}

/// Runs one sample through the network. `trace.x` must already hold the input.
pub fn forward_sample<T: Real>(p: &Params<T>, trace: &mut Trace<T>) {
    // conv1 + relu
    for oy in 0..H1 {
        for ox in 0..H1 {
            let base = (oy * H1 + ox) * C1;
            let acc = &mut trace.a1[base..base + C1];
            acc.copy_from_slice(&p.b1);
            for ky in 0..K {
                let row = (oy + ky) * IN + ox;
                for kx in 0..K {
                    let xv = trace.x[row + kx];
                    let w = &p.w1[(ky * K + kx) * C1..][..C1];
                    for o in 0..C1 {
                        acc[o] += xv * w[o];
                    }
                }
            }
            relu_in_place(acc);
        }
    }
    max_pool(&trace.a1, H1, C1, &mut trace.p1, &mut trace.arg1);

    // conv2 + relu
    for oy in 0..H2 {
        for ox in 0..H2 {
            let base = (oy * H2 + ox) * C2;
            let mut acc = [T::ZERO; C2];
            acc.copy_from_slice(&p.b2);
            for ky in 0..K {
                for kx in 0..K {
                    let pin = &trace.p1[((oy + ky) * P1 + ox + kx) * C1..][..C1];
                    let wbase = (ky * K + kx) * C1 * C2;
                    for (c, &xv) in pin.iter().enumerate() {
                        let w = &p.w2[wbase + c * C2..][..C2];
                        for o in 0..C2 {
                            acc[o] += xv * w[o];
                        }
                    }
                }
            }
            relu_in_place(&mut acc);
            trace.a2[base..base + C2].copy_from_slice(&acc);
        }
    }
    max_pool(&trace.a2, H2, C2, &mut trace.p2, &mut trace.arg2);

    // dense
    let mut logits = [T::ZERO; CLASSES];
    logits.copy_from_slice(&p.b3);
    for (i, &xv) in trace.p2.iter().enumerate() {
        let w = &p.w3[i * CLASSES..][..CLASSES];
        for o in 0..CLASSES {
            logits[o] += xv * w[o];
        }
    }
    trace.logits = logits;
}

/// Accumulates the parameter gradient of one sample into `g`, given the
/// gradient of the loss with respect to that sample's logits.
pub fn backward_sample<T: Real>(
    p: &Params<T>,
    trace: &Trace<T>,
    dlogits: &[T; CLASSES],
    g: &mut Params<T>,
    s: &mut Scratch<T>,
) {
    // dense
    for (gb, &d) in g.b3.iter_mut().zip(dlogits) {
        *gb += d;
    }
    s.da2.fill(T::ZERO);
    for (i, &xv) in trace.p2.iter().enumerate() {
        let w = &p.w3[i * CLASSES..][..CLASSES];
        let gw = &mut g.w3[i * CLASSES..][..CLASSES];
        let mut back = T::ZERO;
        for o in 0..CLASSES {
            gw[o] += xv * dlogits[o];
            back += w[o] * dlogits[o];
        }
        // unpool into the argmax; relu passes gradient only where active
        let src = trace.arg2[i] as usize;
        if trace.a2[src] > T::ZERO {
            s.da2[src] = back;
        }
    }

    // conv2: after pooling and relu most of dz is zero, so walk the active
    // output channels only.
    s.dp1.fill(T::ZERO);
    for oy in 0..H2 {
        for ox in 0..H2 {
            let dz = &s.da2[(oy * H2 + ox) * C2..][..C2];
            for (o, &d) in dz.iter().enumerate() {
                if d == T::ZERO {
                    continue;
                }
                g.b2[o] += d;
                for ky in 0..K {
                    for kx in 0..K {
                        let pix = ((oy + ky) * P1 + ox + kx) * C1;
                        let kbase = (ky * K + kx) * C1 * C2 + o;
                        let pin = &trace.p1[pix..pix + C1];
                        let dpin = &mut s.dp1[pix..pix + C1];
                        for c in 0..C1 {
                            g.w2[kbase + c * C2] += pin[c] * d;
                            dpin[c] += p.w2[kbase + c * C2] * d;
                        }
                    }
                }
            }
        }
    }

    // unpool + relu for layer 1
    s.da1.fill(T::ZERO);
    for (i, &src) in trace.arg1.iter().enumerate() {
        let src = src as usize;
        if trace.a1[src] > T::ZERO {
            s.da1[src] = s.dp1[i];
        }
    }

    // conv1
    for oy in 0..H1 {
        for ox in 0..H1 {
            let dz = &s.da1[(oy * H1 + ox) * C1..][..C1];
            for (o, &d) in dz.iter().enumerate() {
                if d == T::ZERO {
                    continue;
                }
                g.b1[o] += d;
                for ky in 0..K {
                    let row = (oy + ky) * IN + ox;
                    for kx in 0..K {
                        g.w1[(ky * K + kx) * C1 + o] += trace.x[row + kx] * d;
                    }
                }
            }
        }
    }
}

/// Numerically stable log-sum-exp of the logits, in `f64`.
pub fn log_sum_exp<T: Real>(logits: &[T; CLASSES]) -> f64 {
    let max = logits
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v.to_f64() - max).exp()).sum();
    max + sum.ln()
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn argmax<T: Real>(logits: &[T; CLASSES]) -> usize {
    let mut best = 0;
    for i in 1..CLASSES {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

/// Fingerprint of the piecewise-linear region a sample falls in: which relu
/// units are active and which element won each pooling window.
pub fn region_fingerprint<T: Real>(trace: &Trace<T>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut feed = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for a in trace.a1.iter().chain(&trace.a2) {
        feed(u64::from(*a > T::ZERO));
    }
    for &i in trace.arg1.iter().chain(&trace.arg2) {
        feed(i as u64);
    }
    h
}
