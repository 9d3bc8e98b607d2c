//! Synthetic datasets with known ground truth.
//!
//! * **Noise task**: procedural "speech" spectrograms; half of them get a
//!   block of broadband Gaussian-power noise over a random frame window.
//! * **Fake-phoneme task**: spectrograms assembled from per-phoneme spectral
//!   templates over a planted segmentation, with a matching posteriorgram.
//!   Each fake sample copies a real one and corrupts a few of its segments.
//!
//! Every sample draws from its own random stream
//! `(seed, "<task>-sample", index)`, so generation order does not affect the
//! output. Values are rounded to `f32` before they are returned, so the
//! in-memory dataset equals what is written to disk. The full recipe with
//! all constants is in `docs/synthgen.md`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::npy::{self, Precision};
use crate::interchange::{
    DatasetKind, DatasetManifest, GroundTruth, Label, ManifestEntry, Segment, Split,
    MANIFEST_VERSION,
};
use crate::matrix::Matrix;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Extra noise energy in the upper frequency bands.
    AdditiveNoise,
    /// Multiplicative tilt boosting high and cutting low bands.
    SpectralTilt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub n_corrupt_segments: usize,
    pub corruption_gain: f64,
    pub kind: CorruptionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub freq_bins: usize,
    /// Inclusive frame-count range.
    pub frames: (usize, usize),
    pub vocab_size: usize,
    /// Inclusive segment-duration range in frames.
    pub segment_frames: (usize, usize),
    /// Noise window length as a fraction of the utterance, inclusive range.
    pub noise_window_fraction: (f64, f64),
    /// Speech-to-noise power ratio inside the noise window.
    pub snr_db: f64,
    pub corruption: CorruptionConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 2000,
            n_test: 500,
            freq_bins: 64,
            frames: (96, 160),
            vocab_size: 12,
            segment_frames: (4, 20),
            noise_window_fraction: (0.1, 0.3),
            snr_db: 0.0,
            corruption: CorruptionConfig {
                n_corrupt_segments: 2,
                corruption_gain: 3.0,
                kind: CorruptionKind::AdditiveNoise,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(m.to_string()));
        if self.freq_bins < 4 {
            return bad("freq_bins must be at least 4");
        }
        if self.frames.0 < 4 || self.frames.0 > self.frames.1 {
            return bad("frames range must satisfy 4 <= lo <= hi");
        }
        if self.segment_frames.0 == 0 || self.segment_frames.0 > self.segment_frames.1 {
            return bad("segment_frames range must satisfy 1 <= lo <= hi");
        }
        let (a, b) = self.noise_window_fraction;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return bad("noise_window_fraction must satisfy 0 < lo <= hi <= 1");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite");
        }
        if !(self.corruption.corruption_gain >= 0.0 && self.corruption.corruption_gain.is_finite())
        {
            return bad("corruption_gain must be finite and >= 0");
        }
        Ok(())
    }
}

/// One generated sample held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub entry: ManifestEntry,
    pub spectrogram: Matrix,
    pub posteriorgram: Option<Matrix>,
    /// Planted segmentation (fake-phoneme task only).
    pub segments: Option<Vec<Segment>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<GeneratedSample>,
}

const FLOOR: f64 = 0.02;
const LEVEL: f64 = 20.0;

fn round_f32(m: Matrix) -> Matrix {
    m.map(|v| f64::from(v as f32))
}

fn normal(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Harmonic comb with spacing `h` bins, Gaussian partials of width 0.7 bins.
fn comb(r: f64, h: f64, bins: usize) -> f64 {
    let mut acc = 0.0;
    let mut k = 1.0;
    while k * h < bins as f64 + 2.0 {
        let d = r - k * h;
        acc += (-d * d / (2.0 * 0.49)).exp();
        k += 1.0;
    }
    acc
}

fn gaussian(r: f64, c: f64, w: f64) -> f64 {
    let d = (r - c) / w;
    (-0.5 * d * d).exp()
}

fn split_of(index: usize, n_train: usize) -> Split {
    if index < n_train {
        Split::Train
    } else {
        Split::Test
    }
}

// ---------------------------------------------------------------------------
// Noise task
// ---------------------------------------------------------------------------

/// Clean procedural utterance as linear power.
fn clean_power(cfg: &SynthConfig, r: &mut Rng) -> Matrix {
    let f = cfg.freq_bins;
    let t_len = r.random_range(cfg.frames.0..=cfg.frames.1);
    let fb = f as f64;
    let h0 = r.random_range(2.5..4.5);
    let vib_period = r.random_range(20.0..60.0);
    let vib_phase = r.random_range(0.0..2.0 * PI);
    let syl = r.random_range(8.0..20.0);
    let syl_phase = r.random_range(0.0..PI);
    let formants: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                r.random_range(0.08 * fb..0.55 * fb),
                r.random_range(0.03 * fb..0.08 * fb),
                r.random_range(0.5..1.5),
            )
        })
        .collect();
    let envelope: Vec<f64> = (0..f)
        .map(|row| {
            let rf = row as f64;
            let peaks: f64 = formants
                .iter()
                .map(|&(c, w, a)| a * gaussian(rf, c, w))
                .sum();
            (0.15 + peaks) * (-2.5 * rf / fb).exp()
        })
        .collect();
    let mut p = Matrix::zeros(f, t_len);
    for t in 0..t_len {
        let tf = t as f64;
        let h = h0 * (1.0 + 0.04 * (2.0 * PI * tf / vib_period + vib_phase).sin());
        let amp = 0.2 + 0.8 * (PI * tf / syl + syl_phase).sin().powi(2);
        for (row, env) in envelope.iter().enumerate() {
            p.set(row, t, LEVEL * amp * env * comb(row as f64, h, f) + FLOOR);
        }
    }
    p
}

fn to_log(p: &Matrix) -> Matrix {
    p.map(f64::ln_1p)
}

fn noise_sample(cfg: &SynthConfig, index: usize) -> GeneratedSample {
    let mut r = rng::stream(cfg.seed, "noise-sample", index as u64);
    let mut power = clean_power(cfg, &mut r);
    let t_len = power.cols();
    let noisy = index % 2 == 1;
    let split = split_of(index, cfg.n_train);
    let (label, ground_truth) = if noisy {
        let (a, b) = cfg.noise_window_fraction;
        let frac = if a == b { a } else { r.random_range(a..=b) };
        let len = ((frac * t_len as f64).round() as usize).clamp(1, t_len);
        let start = r.random_range(0..=t_len - len);
        let end = start + len;
        let speech = power.column_block_sum(start, end) / (power.rows() * len) as f64;
        let sigma2 = speech * 10f64.powf(-cfg.snr_db / 10.0);
        for row in 0..power.rows() {
            for t in start..end {
                let n = normal(&mut r);
                power.set(row, t, power.get(row, t) + sigma2 * n * n);
            }
        }
        (Label::Noisy, Some(GroundTruth::NoiseWindow { start, end }))
    } else {
        (Label::Clean, None)
    };
    let sample_id = format!(
        "{}-{index:05}",
        if split == Split::Train {
            "train"
        } else {
            "test"
        }
    );
    GeneratedSample {
        entry: ManifestEntry {
            spectrogram: format!("spectrograms/{sample_id}.npy"),
            sample_id,
            split,
            label,
            posteriorgram: None,
            ground_truth,
            source_id: None,
            error: None,
        },
        spectrogram: round_f32(to_log(&power)),
        posteriorgram: None,
        segments: None,
    }
}

/// Noise-detection dataset; odd indices are noisy, so labels are balanced.
pub fn gen_noise_dataset(cfg: &SynthConfig) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let samples: Vec<GeneratedSample> = (0..cfg.n_train + cfg.n_test)
        .into_par_iter()
        .map(|i| noise_sample(cfg, i))
        .collect();
    Ok(GeneratedDataset {
        manifest: manifest_for(DatasetKind::Noise, cfg, vec![], &samples),
        samples,
    })
}

fn manifest_for(
    kind: DatasetKind,
    cfg: &SynthConfig,
    vocab: Vec<String>,
    samples: &[GeneratedSample],
) -> DatasetManifest {
    DatasetManifest {
        format_version: MANIFEST_VERSION,
        kind,
        seed: cfg.seed,
        generator: serde_json::to_value(cfg).expect("config serializes"),
        vocab,
        entries: samples.iter().map(|s| s.entry.clone()).collect(),
    }
}

// ---------------------------------------------------------------------------
// Fake-phoneme task
// ---------------------------------------------------------------------------

const PHONEME_NAMES: [&str; 12] = [
    "<>", "aa", "iy", "uw", "eh", "m", "n", "l", "r", "s", "sh", "f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhonemeKind {
    Silence,
    Vowel,
    Sonorant,
    Fricative,
}

fn phoneme_kind(id: usize) -> PhonemeKind {
    if id == 0 {
        return PhonemeKind::Silence;
    }
    match (id - 1) % 11 {
        0..=3 => PhonemeKind::Vowel,
        4..=7 => PhonemeKind::Sonorant,
        _ => PhonemeKind::Fricative,
    }
}

pub fn phoneme_vocab(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            PHONEME_NAMES
                .get(i)
                .map_or_else(|| format!("ph{i}"), |s| s.to_string())
        })
        .collect()
}

/// Spectral envelope per phoneme, drawn once per dataset seed.
fn phoneme_templates(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut r = rng::stream(cfg.seed, "phoneme-templates", 0);
    let fb = cfg.freq_bins as f64;
    (0..cfg.vocab_size)
        .map(|id| {
            let bumps: Vec<(f64, f64, f64)> = match phoneme_kind(id) {
                PhonemeKind::Silence => vec![],
                PhonemeKind::Vowel => (0..3)
                    .map(|_| {
                        (
                            r.random_range(0.06 * fb..0.5 * fb),
                            r.random_range(0.03 * fb..0.07 * fb),
                            r.random_range(0.6..1.4),
                        )
                    })
                    .collect(),
                PhonemeKind::Sonorant => vec![
                    (
                        r.random_range(0.04 * fb..0.15 * fb),
                        r.random_range(0.03 * fb..0.06 * fb),
                        r.random_range(0.8..1.4),
                    ),
                    (
                        r.random_range(0.2 * fb..0.4 * fb),
                        r.random_range(0.03 * fb..0.06 * fb),
                        r.random_range(0.2..0.5),
                    ),
                ],
                PhonemeKind::Fricative => vec![(
                    r.random_range(0.55 * fb..0.9 * fb),
                    r.random_range(0.05 * fb..0.15 * fb),
                    r.random_range(0.3..0.7),
                )],
            };
            (0..cfg.freq_bins)
                .map(|row| {
                    bumps
                        .iter()
                        .map(|&(c, w, a)| a * gaussian(row as f64, c, w))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Random run-length segmentation covering a random utterance length.
fn planted_segmentation(cfg: &SynthConfig, r: &mut Rng) -> (Vec<Segment>, usize) {
    let t_len = r.random_range(cfg.frames.0..=cfg.frames.1);
    let mut segments: Vec<Segment> = Vec::new();
    let mut t = 0;
    while t < t_len {
        let dur = r.random_range(cfg.segment_frames.0..=cfg.segment_frames.1);
        let end = (t + dur).min(t_len);
        let phoneme = loop {
            let p = r.random_range(0..cfg.vocab_size);
            if segments.last().is_none_or(|s| s.phoneme != p) {
                break p;
            }
        };
        segments.push(Segment {
            phoneme,
            start: t,
            end,
        });
        t = end;
    }
    (segments, t_len)
}

fn real_spectrogram(
    cfg: &SynthConfig,
    templates: &[Vec<f64>],
    segments: &[Segment],
    t_len: usize,
    r: &mut Rng,
) -> Matrix {
    let f = cfg.freq_bins;
    let h0 = r.random_range(2.5..4.5);
    let gain = r.random_range(0.7..1.3);
    let mut p = Matrix::zeros(f, t_len);
    for s in segments {
        let kind = phoneme_kind(s.phoneme);
        let env = &templates[s.phoneme];
        for t in s.start..s.end {
            let shape = 0.6 + 0.4 * (PI * (t - s.start) as f64 / s.len() as f64).sin();
            let h = h0 * (1.0 + 0.03 * (t as f64 / 7.0).sin());
            for (row, &e) in env.iter().enumerate() {
                let source = match kind {
                    PhonemeKind::Silence => 0.0,
                    PhonemeKind::Vowel | PhonemeKind::Sonorant => comb(row as f64, h, f),
                    PhonemeKind::Fricative => {
                        let n = normal(r);
                        n * n
                    }
                };
                let jitter = 1.0 + 0.1 * normal(r);
                p.set(
                    row,
                    t,
                    (LEVEL * gain * shape * e * source * jitter).max(0.0) + FLOOR,
                );
            }
        }
    }
    to_log(&p)
}

/// One-hot posteriorgram with distractor noise: true row in [0.6, 1.0),
/// others in [0, 0.4). The argmax always recovers the planted labels.
fn planted_posteriorgram(
    cfg: &SynthConfig,
    segments: &[Segment],
    t_len: usize,
    r: &mut Rng,
) -> Matrix {
    let mut m = Matrix::zeros(cfg.vocab_size, t_len);
    for s in segments {
        for t in s.start..s.end {
            for row in 0..cfg.vocab_size {
                let v = if row == s.phoneme {
                    0.6 + r.random_range(0.0..0.4)
                } else {
                    r.random_range(0.0..0.4)
                };
                m.set(row, t, v);
            }
        }
    }
    m
}

/// Applies the configured corruption to the given segments in place.
fn corrupt(
    spec: &mut Matrix,
    segments: &[Segment],
    which: &[usize],
    c: &CorruptionConfig,
    r: &mut Rng,
) {
    let f = spec.rows() as f64;
    for &j in which {
        let s = segments[j];
        for row in 0..spec.rows() {
            let rf = row as f64;
            for t in s.start..s.end {
                let v = spec.get(row, t);
                let nv = match c.kind {
                    CorruptionKind::AdditiveNoise => {
                        let band = 1.0 / (1.0 + (-(rf - 0.6 * f) / (0.04 * f)).exp());
                        v + c.corruption_gain * band * normal(r).abs()
                    }
                    CorruptionKind::SpectralTilt => {
                        v * (1.0 + c.corruption_gain * 0.15 * (2.0 * rf / f - 1.0)).max(0.0)
                    }
                };
                spec.set(row, t, nv);
            }
        }
    }
}

fn fake_phoneme_pair(
    cfg: &SynthConfig,
    templates: &[Vec<f64>],
    pair: usize,
    n_train_pairs: usize,
) -> [GeneratedSample; 2] {
    let mut r = rng::stream(cfg.seed, "fakephoneme-sample", pair as u64);
    let (segments, t_len) = planted_segmentation(cfg, &mut r);
    let real = round_f32(real_spectrogram(cfg, templates, &segments, t_len, &mut r));
    let ppg = round_f32(planted_posteriorgram(cfg, &segments, t_len, &mut r));

    let n = segments.len();
    let want = cfg.corruption.n_corrupt_segments;
    if want > n {
        log::warn!("pair {pair}: {want} corrupted segments requested but only {n} exist; clamping");
    }
    let mut which = rand::seq::index::sample(&mut r, n, want.min(n)).into_vec();
    which.sort_unstable();
    let mut fake = real.clone();
    corrupt(&mut fake, &segments, &which, &cfg.corruption, &mut r);
    let fake = round_f32(fake);

    let split = if pair < n_train_pairs {
        Split::Train
    } else {
        Split::Test
    };
    let prefix = if split == Split::Train {
        "train"
    } else {
        "test"
    };
    let real_id = format!("{prefix}-{pair:05}-real");
    let fake_id = format!("{prefix}-{pair:05}-fake");
    let ppg_path = format!("posteriorgrams/{prefix}-{pair:05}.npy");
    let real_entry = ManifestEntry {
        sample_id: real_id.clone(),
        split,
        label: Label::Real,
        spectrogram: format!("spectrograms/{real_id}.npy"),
        posteriorgram: Some(ppg_path.clone()),
        ground_truth: None,
        source_id: None,
        error: None,
    };
    let fake_entry = ManifestEntry {
        sample_id: fake_id.clone(),
        split,
        label: Label::Fake,
        spectrogram: format!("spectrograms/{fake_id}.npy"),
        posteriorgram: Some(ppg_path),
        ground_truth: Some(GroundTruth::CorruptedSegments(which)),
        source_id: Some(real_id),
        error: None,
    };
    [
        GeneratedSample {
            entry: real_entry,
            spectrogram: real,
            posteriorgram: Some(ppg.clone()),
            segments: Some(segments.clone()),
        },
        GeneratedSample {
            entry: fake_entry,
            spectrogram: fake,
            posteriorgram: Some(ppg),
            segments: Some(segments),
        },
    ]
}

/// Fake-phoneme dataset. Samples come in real/fake pairs sharing one
/// posteriorgram, so `n_train` and `n_test` are rounded up to even counts.
pub fn gen_fake_phoneme_dataset(cfg: &SynthConfig) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let templates = phoneme_templates(cfg);
    let train_pairs = cfg.n_train.div_ceil(2);
    let test_pairs = cfg.n_test.div_ceil(2);
    let samples: Vec<GeneratedSample> = (0..train_pairs + test_pairs)
        .into_par_iter()
        .flat_map_iter(|p| fake_phoneme_pair(cfg, &templates, p, train_pairs))
        .collect();
    Ok(GeneratedDataset {
        manifest: manifest_for(
            DatasetKind::FakePhoneme,
            cfg,
            phoneme_vocab(cfg.vocab_size),
            &samples,
        ),
        samples,
    })
}

impl GeneratedDataset {
    /// Writes `manifest.json` plus every referenced `.npy` file (f32) under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["spectrograms", "posteriorgrams"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        self.samples.par_iter().try_for_each(|s| -> Result<()> {
            npy::save_matrix(
                &s.spectrogram,
                dir.join(&s.entry.spectrogram),
                Precision::F32,
            )?;
            if let (Some(ppg), Some(path)) = (&s.posteriorgram, &s.entry.posteriorgram) {
                // Twins share one file; the real sample writes it.
                if s.entry.source_id.is_none() {
                    npy::save_matrix(ppg, dir.join(path), Precision::F32)?;
                }
            }
            Ok(())
        })?;
        self.manifest.save(dir.join("manifest.json"))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &GeneratedSample> {
        self.samples.iter().filter(move |s| s.entry.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::segment_posteriorgram;
    use crate::interchange::{PhonemeSegmentation, Posteriorgram};

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 20,
            n_test: 10,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noise_dataset_balanced_with_windows_in_bounds() {
        let d = gen_noise_dataset(&small()).unwrap();
        assert_eq!(d.samples.len(), 30);
        let noisy = d
            .samples
            .iter()
            .filter(|s| s.entry.label == Label::Noisy)
            .count();
        assert_eq!(noisy, 15);
        for s in &d.samples {
            let t = s.spectrogram.cols();
            assert!((96..=160).contains(&t));
            assert_eq!(s.spectrogram.rows(), 64);
            assert!(s
                .spectrogram
                .as_slice()
                .iter()
                .all(|&v| v >= 0.0 && v.is_finite()));
            if let Some(GroundTruth::NoiseWindow { start, end }) = s.entry.ground_truth {
                assert!(start < end && end <= t);
                let frac = (end - start) as f64 / t as f64;
                assert!((0.09..=0.31).contains(&frac), "{frac}");
            }
        }
    }

    #[test]
    fn full_window_fraction_covers_everything() {
        let cfg = SynthConfig {
            noise_window_fraction: (1.0, 1.0),
            ..small()
        };
        for s in gen_noise_dataset(&cfg).unwrap().samples {
            if let Some(GroundTruth::NoiseWindow { start, end }) = s.entry.ground_truth {
                assert_eq!((start, end), (0, s.spectrogram.cols()));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            gen_noise_dataset(&small()).unwrap(),
            gen_noise_dataset(&small()).unwrap()
        );
        assert_eq!(
            gen_fake_phoneme_dataset(&small()).unwrap(),
            gen_fake_phoneme_dataset(&small()).unwrap()
        );
    }

    /// Threshold on the peak high-band energy, fitted on the train split and
    /// scored on the test split.
    #[test]
    fn noise_classes_separable_by_high_band_energy() {
        let cfg = SynthConfig {
            n_train: 200,
            n_test: 200,
            ..small()
        };
        let d = gen_noise_dataset(&cfg).unwrap();
        let stat = |m: &Matrix| -> f64 {
            let lo = m.rows() * 3 / 4;
            (0..m.cols())
                .map(|t| (lo..m.rows()).map(|r| m.get(r, t)).sum::<f64>() / (m.rows() - lo) as f64)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let train: Vec<(f64, usize)> = d
            .split(Split::Train)
            .map(|s| (stat(&s.spectrogram), s.entry.label.class_index()))
            .collect();
        let acc = |th: f64, set: &[(f64, usize)]| {
            set.iter()
                .filter(|(v, c)| usize::from(*v > th) == *c)
                .count() as f64
                / set.len() as f64
        };
        let th = train
            .iter()
            .map(|(v, _)| *v)
            .max_by(|a, b| acc(*a, &train).total_cmp(&acc(*b, &train)))
            .unwrap();
        let test: Vec<(f64, usize)> = d
            .split(Split::Test)
            .map(|s| (stat(&s.spectrogram), s.entry.label.class_index()))
            .collect();
        assert!(acc(th, &test) >= 0.9, "accuracy {}", acc(th, &test));
    }

    #[test]
    fn planted_segmentation_round_trips_through_alignment() {
        let d = gen_fake_phoneme_dataset(&small()).unwrap();
        for s in &d.samples {
            let ppg =
                Posteriorgram::new(s.posteriorgram.clone().unwrap(), d.manifest.vocab.clone())
                    .unwrap();
            let seg = segment_posteriorgram(&ppg).unwrap();
            let planted =
                PhonemeSegmentation::new(s.segments.clone().unwrap(), s.spectrogram.cols())
                    .unwrap();
            assert_eq!(seg, planted);
        }
    }

    #[test]
    fn fakes_share_posteriorgram_and_record_corruption() {
        let d = gen_fake_phoneme_dataset(&small()).unwrap();
        for pair in d.samples.chunks(2) {
            let (real, fake) = (&pair[0], &pair[1]);
            assert_eq!(real.entry.label, Label::Real);
            assert_eq!(fake.entry.label, Label::Fake);
            assert_eq!(real.posteriorgram, fake.posteriorgram);
            assert_eq!(
                fake.entry.source_id.as_deref(),
                Some(real.entry.sample_id.as_str())
            );
            let Some(GroundTruth::CorruptedSegments(idx)) = &fake.entry.ground_truth else {
                panic!("fake without ground truth");
            };
            assert_eq!(idx.len(), 2);
            let segs = fake.segments.as_ref().unwrap();
            // Cells differ only inside corrupted segments.
            for t in 0..real.spectrogram.cols() {
                let inside = idx
                    .iter()
                    .any(|&j| (segs[j].start..segs[j].end).contains(&t));
                let differs =
                    (0..64).any(|r| real.spectrogram.get(r, t) != fake.spectrogram.get(r, t));
                if differs {
                    assert!(inside);
                }
            }
        }
    }

    #[test]
    fn zero_gain_fake_equals_real() {
        let mut cfg = small();
        cfg.corruption.corruption_gain = 0.0;
        let d = gen_fake_phoneme_dataset(&cfg).unwrap();
        for pair in d.samples.chunks(2) {
            assert_eq!(pair[0].spectrogram, pair[1].spectrogram);
        }
    }

    #[test]
    fn corruption_count_clamped() {
        let mut cfg = small();
        cfg.frames = (8, 8);
        cfg.segment_frames = (4, 4);
        cfg.corruption.n_corrupt_segments = 5;
        let d = gen_fake_phoneme_dataset(&cfg).unwrap();
        for s in d.samples.iter().filter(|s| s.entry.label == Label::Fake) {
            let Some(GroundTruth::CorruptedSegments(idx)) = &s.entry.ground_truth else {
                panic!()
            };
            assert_eq!(idx, &vec![0, 1]);
        }
    }

    #[test]
    fn spectral_tilt_keeps_values_nonnegative() {
        let mut cfg = small();
        cfg.corruption.kind = CorruptionKind::SpectralTilt;
        cfg.corruption.corruption_gain = 10.0;
        let d = gen_fake_phoneme_dataset(&cfg).unwrap();
        assert!(d
            .samples
            .iter()
            .all(|s| s.spectrogram.as_slice().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn written_files_validate() {
        let dir = tempfile::tempdir().unwrap();
        gen_fake_phoneme_dataset(&small())
            .unwrap()
            .write(dir.path())
            .unwrap();
        let loaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        loaded.validate().unwrap();
        assert_eq!(loaded.manifest.vocab.len(), 12);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small();
        cfg.frames = (10, 5);
        assert!(gen_noise_dataset(&cfg).is_err());
        let mut cfg = small();
        cfg.noise_window_fraction = (0.0, 0.3);
        assert!(cfg.validate().is_err());
    }
}
