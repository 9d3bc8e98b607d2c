//! Gradient-based attribution methods over [`ToyClassifier`].
//!
//! Every method explains the class-`c` *probability* (not the logit) and
//! returns a signed map with the input's shape. Taking absolute values is
//! left to discretization preprocessing.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{MethodId, SaliencyMap};
use crate::matrix::Matrix;
use crate::model::{validate_class, ReluRule, ToyClassifier};
use crate::rng;

/// Reference input used by path and difference methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// All-zero spectrogram.
    #[default]
    Zero,
    /// Per-frequency mean of the training spectrograms, repeated over time.
    DatasetMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub method: MethodId,
    pub ig_steps: usize,
    pub baseline: BaselineMode,
    pub gradshap_samples: usize,
    /// Absolute noise level; `None` means 0.1 times the input's standard deviation.
    pub noise_sigma: Option<f64>,
    pub seed: u64,
}

impl AttributionConfig {
    pub fn new(method: MethodId) -> Self {
        AttributionConfig {
            method,
            ig_steps: 128,
            baseline: BaselineMode::Zero,
            gradshap_samples: 32,
            noise_sigma: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::validation("ig_steps must be at least 1"));
        }
        if self.gradshap_samples == 0 {
            return Err(Error::validation("gradshap_samples must be at least 1"));
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::validation("noise_sigma must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Per-frequency baseline profile, broadcast over time to match any input.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProfile(pub Vec<f64>);

impl BaselineProfile {
    pub fn zeros(rows: usize) -> Self {
        BaselineProfile(vec![0.0; rows])
    }

    /// Mean over all frames of all given spectrograms, per frequency row.
    pub fn dataset_mean<'a>(spectrograms: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut frames = 0usize;
        for m in spectrograms {
            if sum.is_empty() {
                sum = vec![0.0; m.rows()];
            } else if sum.len() != m.rows() {
                return Err(Error::shape(format!("{} rows", sum.len()), m.rows()));
            }
            for (r, s) in sum.iter_mut().enumerate() {
                *s += m.row(r).iter().sum::<f64>();
            }
            frames += m.cols();
        }
        if frames == 0 {
            return Err(Error::validation("dataset mean of an empty set"));
        }
        Ok(BaselineProfile(
            sum.into_iter().map(|s| s / frames as f64).collect(),
        ))
    }

    pub fn expand(&self, cols: usize) -> Matrix {
        Matrix::from_fn(self.0.len(), cols, |r, _| self.0[r])
    }
}

pub fn gradient_saliency(model: &ToyClassifier, x: &Matrix, class: usize) -> Result<Matrix> {
    validate_class(class)?;
    model.input_gradient(x, class)
}

pub fn grad_input(model: &ToyClassifier, x: &Matrix, class: usize) -> Result<Matrix> {
    let g = gradient_saliency(model, x, class)?;
    g.zip_map(x, |a, b| a * b)
}

/// Sums per-item maps in a fixed chunked order, independent of thread count.
fn ordered_sum(
    n: usize,
    rows: usize,
    cols: usize,
    f: impl Fn(usize) -> Result<Matrix> + Sync,
) -> Result<Matrix> {
    const CHUNK: usize = 8;
    let chunks: Vec<Result<Matrix>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Matrix::zeros(rows, cols);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let m = f(i)?;
                for (a, b) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *a += b;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Matrix::zeros(rows, cols);
    for c in chunks {
        let c = c?;
        for (a, b) in total.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *a += b;
        }
    }
    Ok(total)
}

/// Integrated gradients with the midpoint rule:
/// `(x - x0) * mean_i grad f_c(x0 + (i - 1/2)/m (x - x0))`.
pub fn integrated_gradients(
    model: &ToyClassifier,
    x: &Matrix,
    class: usize,
    baseline: &Matrix,
    steps: usize,
) -> Result<Matrix> {
    validate_class(class)?;
    x.ensure_same_shape(baseline)?;
    if steps == 0 {
        return Err(Error::validation("ig_steps must be at least 1"));
    }
    let delta = x.zip_map(baseline, |a, b| a - b)?;
    let total = ordered_sum(steps, x.rows(), x.cols(), |i| {
        let alpha = (i as f64 + 0.5) / steps as f64;
        let point = baseline.zip_map(&delta, |b, d| b + alpha * d)?;
        model.input_gradient(&point, class)
    })?;
    let inv = 1.0 / steps as f64;
    total.zip_map(&delta, |g, d| g * inv * d)
}

/// Expected-gradients estimate of GradientSHAP.
///
/// Sample `i` draws a baseline `B` from `baselines`, `alpha ~ U[0, 1)` and
/// per-cell noise `N(0, sigma^2)` from its own random stream, and contributes
/// `(x - B) * grad f_c(B + alpha (x - B) + noise)`.
pub fn gradient_shap(
    model: &ToyClassifier,
    x: &Matrix,
    class: usize,
    baselines: &[Matrix],
    samples: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Matrix> {
    validate_class(class)?;
    if baselines.is_empty() {
        return Err(Error::validation(
            "GradientSHAP needs a non-empty baseline set",
        ));
    }
    for b in baselines {
        x.ensure_same_shape(b)?;
    }
    if samples == 0 {
        return Err(Error::validation("gradshap_samples must be at least 1"));
    }
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|_| Error::validation("noise_sigma must be finite and >= 0"))?;
    let total = ordered_sum(samples, x.rows(), x.cols(), |i| {
        let mut r = rng::stream(seed, "gradshap", i as u64);
        let b = &baselines[r.random_range(0..baselines.len())];
        let alpha: f64 = r.random_range(0.0..1.0);
        let mut point = Matrix::zeros(x.rows(), x.cols());
        for ((p, &xv), &bv) in point
            .as_mut_slice()
            .iter_mut()
            .zip(x.as_slice())
            .zip(b.as_slice())
        {
            let eps = if noise_sigma > 0.0 {
                noise.sample(&mut r)
            } else {
                0.0
            };
            *p = bv + alpha * (xv - bv) + eps;
        }
        let g = model.input_gradient(&point, class)?;
        g.zip_map(&x.zip_map(b, |a, c| a - c)?, |gv, d| gv * d)
    })?;
    Ok(total.scale(1.0 / samples as f64))
}

/// Guided backpropagation: rectifiers pass signal only where both their
/// forward input and the incoming gradient are positive.
pub fn guided_backprop(model: &ToyClassifier, x: &Matrix, class: usize) -> Result<Matrix> {
    validate_class(class)?;
    let cache = model.forward_cached(x)?;
    Ok(model.gradient_from_cache(&cache, class, ReluRule::Guided))
}

/// Differences below this are treated as zero and fall back to the local gradient.
pub const RESCALE_EPS: f64 = 1e-10;

fn rescale(out: f64, out0: f64, pre: f64, pre0: f64, local: f64) -> f64 {
    let d = pre - pre0;
    if d.abs() > RESCALE_EPS {
        (out - out0) / d
    } else {
        local
    }
}

/// DeepLIFT with the Rescale rule for every rectifier and for the output
/// sigmoid `p_c = sigma(logit_c - logit_other)`. Attributions sum to
/// `f_c(x) - f_c(x0)`.
pub fn deeplift_rescale(
    model: &ToyClassifier,
    x: &Matrix,
    class: usize,
    baseline: &Matrix,
) -> Result<Matrix> {
    validate_class(class)?;
    x.ensure_same_shape(baseline)?;
    let at = model.forward_cached(x)?;
    let at0 = model.forward_cached(baseline)?;
    let relu_mult = |z: &[f64], z0: &[f64]| -> Vec<f64> {
        z.iter()
            .zip(z0)
            .map(|(&a, &b)| rescale(a.max(0.0), b.max(0.0), a, b, f64::from(u8::from(a > 0.0))))
            .collect()
    };
    let m1 = relu_mult(&at.z1, &at0.z1);
    let m2 = relu_mult(&at.z2, &at0.z2);

    let other = 1 - class;
    let diff = |c: &crate::model::ForwardCache| c.logits[class] - c.logits[other];
    let local = at.probs[0] * at.probs[1];
    let m_out = rescale(
        at.probs[class],
        at0.probs[class],
        diff(&at),
        diff(&at0),
        local,
    );
    let mut dlogits = [0.0; 2];
    dlogits[class] = m_out;
    dlogits[other] = -m_out;

    let mult = model
        .backward(&at, dlogits, ReluRule::Multipliers(&m1, &m2), None, true)
        .expect("input multipliers requested");
    let delta = x.zip_map(baseline, |a, b| a - b)?;
    mult.zip_map(&delta, |m, d| m * d)
}

/// Runs the configured method. `profile` supplies the baseline for IG,
/// DeepLIFT and GradientSHAP.
pub fn attribute(
    model: &ToyClassifier,
    x: &Matrix,
    class: usize,
    cfg: &AttributionConfig,
    profile: &BaselineProfile,
) -> Result<SaliencyMap> {
    cfg.validate()?;
    if profile.0.len() != x.rows() {
        return Err(Error::shape(
            format!("baseline profile of {} rows", x.rows()),
            profile.0.len(),
        ));
    }
    let baseline = || profile.expand(x.cols());
    let data = match cfg.method {
        MethodId::Gradient => gradient_saliency(model, x, class)?,
        MethodId::GradInput => grad_input(model, x, class)?,
        MethodId::Ig => integrated_gradients(model, x, class, &baseline(), cfg.ig_steps)?,
        MethodId::GradShap => {
            let sigma = cfg
                .noise_sigma
                .unwrap_or_else(|| 0.1 * std_dev(x.as_slice()));
            gradient_shap(
                model,
                x,
                class,
                &[baseline()],
                cfg.gradshap_samples,
                sigma,
                cfg.seed,
            )?
        }
        MethodId::GuidedBp => guided_backprop(model, x, class)?,
        MethodId::DeepLift => deeplift_rescale(model, x, class, &baseline())?,
    };
    SaliencyMap::new(data, cfg.method, class)
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Sidecar metadata written next to every saved saliency map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub sample_id: String,
    pub method: MethodId,
    pub target_class: usize,
    pub config: AttributionConfig,
    pub seed: u64,
    pub model_sha256: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(h: usize, w: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, "attr-test", 0);
        Matrix::from_fn(h, w, |_, _| r.random_range(0.0..2.0))
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn constant_model_zero_gradient_map() {
        let mut m = ToyClassifier::random(1);
        m.zero_conv_weights();
        let g = gradient_saliency(&m, &input(8, 8, 1), 1).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_input_definitions() {
        let m = ToyClassifier::random(2);
        let x = input(8, 10, 2);
        let g = gradient_saliency(&m, &x, 1).unwrap();
        assert_eq!(g, m.input_gradient(&x, 1).unwrap());
        let gi = grad_input(&m, &x, 1).unwrap();
        assert_eq!(gi, g.zip_map(&x, |a, b| a * b).unwrap());
        let zero = grad_input(&m, &Matrix::zeros(8, 10), 1).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ig_zero_path_and_single_step() {
        let m = ToyClassifier::random(3);
        let x = input(8, 8, 3);
        let ig = integrated_gradients(&m, &x, 1, &x, 16).unwrap();
        assert!(ig.as_slice().iter().all(|&v| v == 0.0));

        let x0 = Matrix::filled(8, 8, 0.25);
        let one = integrated_gradients(&m, &x, 1, &x0, 1).unwrap();
        let mid = x0.zip_map(&x, |b, a| b + 0.5 * (a - b)).unwrap();
        let g = m.input_gradient(&mid, 1).unwrap();
        let expect = g
            .zip_map(&x.zip_map(&x0, |a, b| a - b).unwrap(), |a, b| a * b)
            .unwrap();
        assert!(close(&one, &expect, 1e-15));
    }

    #[test]
    fn ig_completeness_at_512_steps() {
        for seed in 0..5 {
            let m = ToyClassifier::random(100 + seed);
            let x = input(8, 12, seed);
            let x0 = Matrix::zeros(8, 12);
            let ig = integrated_gradients(&m, &x, 1, &x0, 512).unwrap();
            let delta = m.forward(&x).unwrap()[1] - m.forward(&x0).unwrap()[1];
            let err = (ig.sum() - delta).abs();
            assert!(
                err <= 0.01 * delta.abs() + 1e-6,
                "seed {seed}: {err} vs {delta}"
            );
        }
    }

    #[test]
    fn gradshap_degenerate_and_deterministic() {
        let m = ToyClassifier::random(4);
        let x = input(8, 8, 4);
        let zero = gradient_shap(&m, &x, 1, std::slice::from_ref(&x), 8, 0.0, 1).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        let base = [Matrix::zeros(8, 8)];
        let a = gradient_shap(&m, &x, 1, &base, 8, 0.1, 7).unwrap();
        let b = gradient_shap(&m, &x, 1, &base, 8, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert!(gradient_shap(&m, &x, 1, &[], 8, 0.1, 7).is_err());
    }

    /// With zero noise, GradientSHAP is an unbiased Monte-Carlo estimate of
    /// IG. The tolerance is four standard errors estimated from the samples.
    #[test]
    fn gradshap_converges_to_ig() {
        let m = ToyClassifier::random(5);
        let x = input(8, 8, 5);
        let base = Matrix::zeros(8, 8);
        let n = 1024;
        let ig = integrated_gradients(&m, &x, 1, &base, 512).unwrap();
        let shap = gradient_shap(&m, &x, 1, std::slice::from_ref(&base), n, 0.0, 3).unwrap();

        // Per-cell sample variance of the individual contributions.
        let mut sq = Matrix::zeros(8, 8);
        for i in 0..n {
            let one = gradient_shap_single(&m, &x, &base, i, 3);
            for (s, v) in sq.as_mut_slice().iter_mut().zip(one.as_slice()) {
                *s += v * v;
            }
        }
        let mean_se: f64 = sq
            .as_slice()
            .iter()
            .zip(shap.as_slice())
            .map(|(s2, mu)| ((s2 / n as f64 - mu * mu).max(0.0) / n as f64).sqrt())
            .sum::<f64>()
            / 64.0;
        let mad: f64 = ig
            .as_slice()
            .iter()
            .zip(shap.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 64.0;
        assert!(
            mad <= 4.0 * mean_se,
            "mean abs diff {mad}, mean s.e. {mean_se}"
        );
    }

    fn gradient_shap_single(
        m: &ToyClassifier,
        x: &Matrix,
        b: &Matrix,
        i: usize,
        seed: u64,
    ) -> Matrix {
        let mut r = rng::stream(seed, "gradshap", i as u64);
        let _ = r.random_range(0..1usize);
        let alpha: f64 = r.random_range(0.0..1.0);
        let point = b.zip_map(x, |bv, xv| bv + alpha * (xv - bv)).unwrap();
        let g = m.input_gradient(&point, 1).unwrap();
        g.zip_map(&x.zip_map(b, |a, c| a - c).unwrap(), |a, d| a * d)
            .unwrap()
    }

    #[test]
    fn guided_equals_gradient_when_nothing_is_clipped() {
        // Positive input, positive conv weights, positive head difference:
        // every activation and every backward signal is positive.
        let mut m = ToyClassifier::random(6);
        for v in m.params_mut().iter_mut() {
            *v = v.abs() * 0.2 + 0.01;
        }
        let n = crate::model::PARAM_COUNT;
        // head.weight rows: class 1 larger than class 0.
        let head_w = n - 2 - 32;
        for c in 0..16 {
            m.params_mut()[head_w + c] = 0.1;
            m.params_mut()[head_w + 16 + c] = 0.5;
        }
        let x = input(8, 8, 6).map(|v| v + 0.1);
        let guided = guided_backprop(&m, &x, 1).unwrap();
        let plain = gradient_saliency(&m, &x, 1).unwrap();
        assert_eq!(guided, plain);
        assert!(guided.as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn guided_regression_snapshot_is_stable() {
        let m = ToyClassifier::random(7);
        let x = input(8, 8, 7);
        let a = guided_backprop(&m, &x, 1).unwrap();
        let b = guided_backprop(&m, &x, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (8, 8));
    }

    #[test]
    fn deeplift_summation_to_delta() {
        for seed in 0..10 {
            let m = ToyClassifier::random(200 + seed);
            let x = input(9, 13, seed);
            let x0 = input(9, 13, seed + 1000).scale(0.3);
            for class in 0..2 {
                let attr = deeplift_rescale(&m, &x, class, &x0).unwrap();
                let delta = m.forward(&x).unwrap()[class] - m.forward(&x0).unwrap()[class];
                assert!(
                    (attr.sum() - delta).abs() <= 1e-6,
                    "{} vs {delta}",
                    attr.sum()
                );
            }
        }
    }

    #[test]
    fn deeplift_zero_difference() {
        let m = ToyClassifier::random(8);
        let x = input(8, 8, 8);
        let attr = deeplift_rescale(&m, &x, 1, &x).unwrap();
        assert!(attr.as_slice().iter().all(|&v| v == 0.0));
    }

    /// With every rectifier active at both points the network is affine up
    /// to the sigmoid, so DeepLIFT equals grad*input scaled by the secant
    /// to tangent ratio of the sigmoid.
    #[test]
    fn deeplift_linear_regime_matches_grad_input() {
        let mut m = ToyClassifier::random(9);
        for v in m.params_mut().iter_mut() {
            *v = v.abs() * 0.1 + 0.001;
        }
        let x = input(8, 8, 9).map(|v| v + 0.5);
        let x0 = x.map(|v| v * (1.0 - 1e-7));
        let attr = deeplift_rescale(&m, &x, 1, &x0).unwrap();
        let g = m.input_gradient(&x, 1).unwrap();
        let delta = x.zip_map(&x0, |a, b| a - b).unwrap();
        let gi = g.zip_map(&delta, |a, b| a * b).unwrap();
        for (a, b) in attr.as_slice().iter().zip(gi.as_slice()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn attribute_dispatch_shapes_and_profile() {
        let m = ToyClassifier::random(10);
        let x = input(6, 9, 10);
        let profile = BaselineProfile::zeros(6);
        for method in MethodId::ALL {
            let mut cfg = AttributionConfig::new(method);
            cfg.ig_steps = 4;
            cfg.gradshap_samples = 4;
            let map = attribute(&m, &x, 1, &cfg, &profile).unwrap();
            assert_eq!(map.data.shape(), (6, 9));
            assert_eq!(map.method, method);
        }
        let bad = BaselineProfile::zeros(5);
        assert!(attribute(&m, &x, 1, &AttributionConfig::new(MethodId::Ig), &bad).is_err());
        assert!(gradient_saliency(&m, &x, 2).is_err());
    }

    #[test]
    fn dataset_mean_profile() {
        let a = Matrix::from_rows(&[[1.0, 3.0], [0.0, 0.0]]);
        let b = Matrix::from_rows(&[[5.0], [3.0]]);
        let p = BaselineProfile::dataset_mean([&a, &b]).unwrap();
        assert_eq!(p.0, vec![3.0, 1.0]);
        assert_eq!(p.expand(2), Matrix::from_rows(&[[3.0, 3.0], [1.0, 1.0]]));
    }
}
