//! Toy spectrogram classifier with hand-derived gradients.
//!
//! Architecture (input `F x T`, one channel):
//!
//! ```text
//! conv3x3(1 -> 8) -> ReLU -> avgpool 2x2
//! conv3x3(8 -> 16) -> ReLU -> avgpool 2x2
//! global mean over the remaining grid -> affine(16 -> 2) -> softmax
//! ```
//!
//! Pooling floors odd sizes, so any input with `F, T >= 4` is accepted.
//! All parameters and activations are `f64`.

pub mod io;
pub mod layers;
pub mod train;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use layers::{
    avgpool2_backward, avgpool2_forward, conv3x3_backward_input, conv3x3_backward_params,
    conv3x3_forward, pooled, Dims,
};

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;
pub const NUM_CLASSES: usize = 2;
pub const MIN_INPUT_SIZE: usize = 4;

const CONV1_W: usize = 0;
const CONV1_B: usize = CONV1_W + CONV1_CHANNELS * 9;
const CONV2_W: usize = CONV1_B + CONV1_CHANNELS;
const CONV2_B: usize = CONV2_W + CONV2_CHANNELS * CONV1_CHANNELS * 9;
const HEAD_W: usize = CONV2_B + CONV2_CHANNELS;
const HEAD_B: usize = HEAD_W + NUM_CLASSES * CONV2_CHANNELS;
pub const PARAM_COUNT: usize = HEAD_B + NUM_CLASSES;

/// Named parameter tensors in storage order: (name, offset, shape).
pub const TENSORS: [(&str, usize, &[usize]); 6] = [
    ("conv1.weight", CONV1_W, &[CONV1_CHANNELS, 1, 3, 3]),
    ("conv1.bias", CONV1_B, &[CONV1_CHANNELS]),
    (
        "conv2.weight",
        CONV2_W,
        &[CONV2_CHANNELS, CONV1_CHANNELS, 3, 3],
    ),
    ("conv2.bias", CONV2_B, &[CONV2_CHANNELS]),
    ("head.weight", HEAD_W, &[NUM_CLASSES, CONV2_CHANNELS]),
    ("head.bias", HEAD_B, &[NUM_CLASSES]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    params: Vec<f64>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) input: Vec<f64>,
    pub(crate) d0: Dims,
    /// conv1 pre-activation.
    pub(crate) z1: Vec<f64>,
    pub(crate) d1: Dims,
    /// pooled ReLU(z1).
    pub(crate) p1: Vec<f64>,
    pub(crate) dp1: Dims,
    /// conv2 pre-activation.
    pub(crate) z2: Vec<f64>,
    pub(crate) d2: Dims,
    pub(crate) dp2: Dims,
    /// global features.
    pub(crate) g: [f64; CONV2_CHANNELS],
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
}

/// How the backward pass treats rectifiers.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ReluRule<'a> {
    /// Exact derivative.
    Gradient,
    /// Pass only where forward input and incoming signal are both positive.
    Guided,
    /// Fixed per-unit multipliers for the first and second rectifier layers.
    Multipliers(&'a [f64], &'a [f64]),
}

pub(crate) fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    // p1 = sigmoid(l1 - l0), computed in the stable direction.
    let d = logits[1] - logits[0];
    let p1 = if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    };
    [1.0 - p1, p1]
}

impl ToyClassifier {
    /// He-initialised weights, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut r = rng::stream(seed, "model-init", 0);
        let mut params = vec![0.0; PARAM_COUNT];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for v in &mut params[range] {
                *v = n.sample(&mut r);
            }
        };
        fill(CONV1_W..CONV1_B, 9);
        fill(CONV2_W..CONV2_B, CONV1_CHANNELS * 9);
        fill(HEAD_W..HEAD_B, CONV2_CHANNELS);
        ToyClassifier { params }
    }

    /// Random weights and small random biases; used by gradient checks so
    /// that every code path (including biases) is exercised.
    pub fn random(seed: u64) -> Self {
        let mut m = Self::init(seed);
        let mut r = rng::stream(seed, "model-random-bias", 0);
        for range in [CONV1_B..CONV2_W, CONV2_B..HEAD_W, HEAD_B..PARAM_COUNT] {
            for v in &mut m.params[range] {
                *v = r.random_range(-0.2..0.2);
            }
        }
        m
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::shape(
                format!("{PARAM_COUNT} parameters"),
                params.len(),
            ));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("model parameters must be finite"));
        }
        Ok(ToyClassifier { params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes the affine head so both logits equal the bias.
    pub fn zero_head(&mut self) {
        self.params[HEAD_W..].fill(0.0);
    }

    /// Zeroes every convolution weight, making the output independent of the input.
    pub fn zero_conv_weights(&mut self) {
        self.params[CONV1_W..CONV1_B].fill(0.0);
        self.params[CONV2_W..CONV2_B].fill(0.0);
    }

    fn check_input(x: &Matrix) -> Result<()> {
        if x.rows() < MIN_INPUT_SIZE || x.cols() < MIN_INPUT_SIZE {
            return Err(Error::validation(format!(
                "classifier input must be at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        if !x.is_finite() {
            return Err(Error::validation("classifier input has non-finite entries"));
        }
        Ok(())
    }

    /// Class probabilities.
    pub fn forward(&self, x: &Matrix) -> Result<[f64; NUM_CLASSES]> {
        Ok(self.forward_cached(x)?.probs)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        Self::check_input(x)?;
        let p = &self.params;
        let d0 = Dims {
            c: 1,
            h: x.rows(),
            w: x.cols(),
        };
        let d1 = Dims {
            c: CONV1_CHANNELS,
            ..d0
        };
        let mut z1 = vec![0.0; d1.size()];
        conv3x3_forward(
            x.as_slice(),
            d0,
            &p[CONV1_W..CONV1_B],
            &p[CONV1_B..CONV2_W],
            CONV1_CHANNELS,
            &mut z1,
        );
        let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let dp1 = pooled(d1);
        let mut p1 = vec![0.0; dp1.size()];
        avgpool2_forward(&a1, d1, &mut p1);

        let d2 = Dims {
            c: CONV2_CHANNELS,
            ..dp1
        };
        let mut z2 = vec![0.0; d2.size()];
        conv3x3_forward(
            &p1,
            dp1,
            &p[CONV2_W..CONV2_B],
            &p[CONV2_B..HEAD_W],
            CONV2_CHANNELS,
            &mut z2,
        );
        let a2: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();
        let dp2 = pooled(d2);
        let mut p2 = vec![0.0; dp2.size()];
        avgpool2_forward(&a2, d2, &mut p2);

        let mut g = [0.0; CONV2_CHANNELS];
        let area = dp2.plane() as f64;
        for (c, gc) in g.iter_mut().enumerate() {
            *gc = p2[c * dp2.plane()..(c + 1) * dp2.plane()]
                .iter()
                .sum::<f64>()
                / area;
        }
        let mut logits = [0.0; NUM_CLASSES];
        for (k, l) in logits.iter_mut().enumerate() {
            let w = &p[HEAD_W + k * CONV2_CHANNELS..HEAD_W + (k + 1) * CONV2_CHANNELS];
            *l = p[HEAD_B + k] + w.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        }
        let probs = softmax2(logits);
        Ok(ForwardCache {
            input: x.as_slice().to_vec(),
            d0,
            z1,
            d1,
            p1,
            dp1,
            z2,
            d2,
            dp2,
            g,
            logits,
            probs,
        })
    }

    /// Backpropagates `dlogits` to the input and, optionally, to the
    /// parameters (accumulated into `param_grad`).
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: [f64; NUM_CLASSES],
        rule: ReluRule<'_>,
        param_grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Matrix> {
        let p = &self.params;
        let mut param_grad = param_grad;

        // Head.
        let mut dg = [0.0; CONV2_CHANNELS];
        for (k, &dl) in dlogits.iter().enumerate() {
            let w = &p[HEAD_W + k * CONV2_CHANNELS..HEAD_W + (k + 1) * CONV2_CHANNELS];
            for (d, wv) in dg.iter_mut().zip(w) {
                *d += dl * wv;
            }
        }
        if let Some(pg) = param_grad.as_deref_mut() {
            for (k, &dl) in dlogits.iter().enumerate() {
                pg[HEAD_B + k] += dl;
                for c in 0..CONV2_CHANNELS {
                    pg[HEAD_W + k * CONV2_CHANNELS + c] += dl * cache.g[c];
                }
            }
        }

        // Global mean pool.
        let dp2 = cache.dp2;
        let area = dp2.plane() as f64;
        let mut gp2 = vec![0.0; dp2.size()];
        for c in 0..CONV2_CHANNELS {
            gp2[c * dp2.plane()..(c + 1) * dp2.plane()].fill(dg[c] / area);
        }

        // Second pooling + rectifier.
        let mut gz2 = vec![0.0; cache.d2.size()];
        avgpool2_backward(&gp2, cache.d2, &mut gz2);
        apply_relu_rule(&mut gz2, &cache.z2, rule, 1);

        // Second convolution.
        if let Some(pg) = param_grad.as_deref_mut() {
            let (gw, rest) = pg[CONV2_W..HEAD_W].split_at_mut(CONV2_B - CONV2_W);
            conv3x3_backward_params(&gz2, &cache.p1, cache.dp1, CONV2_CHANNELS, gw, rest);
        }
        let mut gp1 = vec![0.0; cache.dp1.size()];
        conv3x3_backward_input(
            &gz2,
            cache.dp1,
            &p[CONV2_W..CONV2_B],
            CONV2_CHANNELS,
            &mut gp1,
        );

        // First pooling + rectifier.
        let mut gz1 = vec![0.0; cache.d1.size()];
        avgpool2_backward(&gp1, cache.d1, &mut gz1);
        apply_relu_rule(&mut gz1, &cache.z1, rule, 0);

        if let Some(pg) = param_grad {
            let (gw, rest) = pg[CONV1_W..CONV2_W].split_at_mut(CONV1_B - CONV1_W);
            conv3x3_backward_params(&gz1, &cache.input, cache.d0, CONV1_CHANNELS, gw, rest);
        }
        if !want_input {
            return None;
        }
        let mut gx = vec![0.0; cache.d0.size()];
        conv3x3_backward_input(
            &gz1,
            cache.d0,
            &p[CONV1_W..CONV1_B],
            CONV1_CHANNELS,
            &mut gx,
        );
        Some(Matrix::from_vec(cache.d0.h, cache.d0.w, gx).expect("shape"))
    }

    /// Exact gradient of the class-`class` probability w.r.t. every input cell.
    pub fn input_gradient(&self, x: &Matrix, class: usize) -> Result<Matrix> {
        let cache = self.forward_cached(x)?;
        Ok(self.gradient_from_cache(&cache, class, ReluRule::Gradient))
    }

    pub(crate) fn gradient_from_cache(
        &self,
        cache: &ForwardCache,
        class: usize,
        rule: ReluRule<'_>,
    ) -> Matrix {
        let dlogits = prob_logit_gradient(cache.probs, class);
        self.backward(cache, dlogits, rule, None, true)
            .expect("input gradient requested")
    }

    /// SHA-256 over the little-endian parameter bytes, hex encoded.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.params {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// d p_class / d logits for a two-way softmax.
pub(crate) fn prob_logit_gradient(probs: [f64; 2], class: usize) -> [f64; 2] {
    let s = probs[0] * probs[1];
    let mut d = [-s; 2];
    d[class] = s;
    d
}

fn apply_relu_rule(grad: &mut [f64], pre: &[f64], rule: ReluRule<'_>, layer: usize) {
    match rule {
        ReluRule::Gradient => {
            for (g, &z) in grad.iter_mut().zip(pre) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        ReluRule::Guided => {
            for (g, &z) in grad.iter_mut().zip(pre) {
                if z <= 0.0 || *g <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        ReluRule::Multipliers(first, second) => {
            let m = if layer == 0 { first } else { second };
            for (g, &mv) in grad.iter_mut().zip(m) {
                *g *= mv;
            }
        }
    }
}

pub(crate) fn validate_class(class: usize) -> Result<()> {
    if class >= NUM_CLASSES {
        return Err(Error::validation(format!(
            "class index {class} out of range (0..{NUM_CLASSES})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(h: usize, w: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, "test-input", 0);
        Matrix::from_fn(h, w, |_, _| r.random_range(0.0..2.0))
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let mut m = ToyClassifier::init(3);
        m.zero_head();
        let p = m.forward(&random_input(8, 9, 1)).unwrap();
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn probabilities_normalised_and_deterministic() {
        let m = ToyClassifier::random(4);
        for s in 0..20 {
            let x = random_input(6 + s as usize % 5, 7 + s as usize % 3, s);
            let p = m.forward(&x).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(p, m.forward(&x).unwrap());
        }
    }

    #[test]
    fn rejects_small_or_non_finite_input() {
        let m = ToyClassifier::init(0);
        assert!(m.forward(&Matrix::zeros(3, 10)).is_err());
        let mut x = Matrix::zeros(4, 4);
        x.set(0, 0, f64::NAN);
        assert!(m.forward(&x).is_err());
        assert!(m.forward(&Matrix::zeros(4, 4)).is_ok());
    }

    #[test]
    fn constant_model_has_zero_gradient() {
        let mut m = ToyClassifier::random(5);
        m.zero_conv_weights();
        let g = m.input_gradient(&random_input(8, 8, 2), 1).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_gradients_are_opposite() {
        let m = ToyClassifier::random(6);
        let x = random_input(9, 11, 3);
        let g0 = m.input_gradient(&x, 0).unwrap();
        let g1 = m.input_gradient(&x, 1).unwrap();
        for (a, b) in g0.as_slice().iter().zip(g1.as_slice()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn softmax_stable_for_large_logits() {
        let p = softmax2([800.0, -800.0]);
        assert_eq!(p, [1.0, 0.0]);
        let p = softmax2([0.0, 0.0]);
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn hash_changes_with_parameters() {
        let a = ToyClassifier::init(1);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.params_mut()[0] += 1.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
