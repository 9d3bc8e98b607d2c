//! Phoneme discretization of saliency maps.
//!
//! A saliency map is preprocessed (optional `abs`, optional thresholding),
//! pooled inside each phoneme span of the posteriorgram's segmentation, and
//! the `k` spans with the highest pooled energy are switched on in a binary,
//! column-constant mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::{resample_segmentation, segment_posteriorgram};
use crate::error::{Error, Result};
use crate::interchange::{DiscretizedMask, PhonemeSegmentation, Posteriorgram};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Threshold {
    None,
    /// Zero every entry strictly below the value.
    Absolute(f64),
    /// Zero every entry strictly below the `q`-quantile of the entries.
    Quantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Mean,
    Sum,
    /// Not part of the original method; kept for ablations.
    Max,
}

impl FromStr for Pool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pool::Mean),
            "sum" => Ok(Pool::Sum),
            "max" => Ok(Pool::Max),
            other => Err(Error::validation(format!("unknown pool '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdsmConfig {
    pub use_abs: bool,
    pub threshold: Threshold,
    pub pool: Pool,
    pub k: usize,
    /// Phoneme ids never selected (e.g. silence). Empty by default.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_phonemes: Vec<usize>,
}

pub const DEFAULT_QUANTILE: f64 = 0.8;

/// Named hyperparameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Thresholded, signed map, mean pooling.
    Tt2,
    /// Thresholded absolute map, sum pooling.
    Fs2,
}

impl Preset {
    pub fn config(self, k: usize) -> PdsmConfig {
        let (use_abs, pool) = match self {
            Preset::Tt2 => (false, Pool::Mean),
            Preset::Fs2 => (true, Pool::Sum),
        };
        PdsmConfig {
            use_abs,
            threshold: Threshold::Quantile(DEFAULT_QUANTILE),
            pool,
            k,
            skip_phonemes: Vec::new(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Tt2 => "tt2",
            Preset::Fs2 => "fs2",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tt2" => Ok(Preset::Tt2),
            "fs2" => Ok(Preset::Fs2),
            other => Err(Error::validation(format!("unknown preset '{other}'"))),
        }
    }
}

impl PdsmConfig {
    pub fn validate(&self) -> Result<()> {
        match self.threshold {
            Threshold::Quantile(q) if !(0.0..=1.0).contains(&q) => Err(Error::validation(format!(
                "quantile must lie in [0, 1], got {q}"
            ))),
            Threshold::Absolute(t) if !t.is_finite() => {
                Err(Error::validation("absolute threshold must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Pooled saliency energy per segment, in segmentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeEnergies(pub Vec<f64>);

/// Applies `abs` (if configured) and then the threshold.
pub fn preprocess(map: &Matrix, cfg: &PdsmConfig) -> Matrix {
    let mut out = if cfg.use_abs {
        map.map(f64::abs)
    } else {
        map.clone()
    };
    let cut = match cfg.threshold {
        Threshold::None => return out,
        Threshold::Absolute(tau) => tau,
        Threshold::Quantile(q) => quantile_value(out.as_slice(), q),
    };
    for v in out.as_mut_slice() {
        if *v < cut {
            *v = 0.0;
        }
    }
    out
}

/// Order statistic at rank `min(ceil(q * n), n - 1)`; zeroing everything
/// strictly below it removes `ceil(q * n)` entries when values are distinct.
fn quantile_value(values: &[f64], q: f64) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let rank = ((q * n as f64).ceil() as usize).min(n - 1);
    let mut scratch = values.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(rank, f64::total_cmp);
    *v
}

pub fn phoneme_energies(
    processed: &Matrix,
    seg: &PhonemeSegmentation,
    pool: Pool,
) -> Result<PhonemeEnergies> {
    if seg.total_frames() != processed.cols() {
        return Err(Error::shape(
            format!("{} frames", processed.cols()),
            format!("segmentation over {} frames", seg.total_frames()),
        ));
    }
    let rows = processed.rows();
    let energies = seg
        .segments()
        .iter()
        .map(|s| match pool {
            Pool::Sum => processed.column_block_sum(s.start, s.end),
            Pool::Mean => processed.column_block_sum(s.start, s.end) / (rows * s.len()) as f64,
            Pool::Max => (0..rows)
                .flat_map(|r| processed.row(r)[s.start..s.end].iter().copied())
                .fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    Ok(PhonemeEnergies(energies))
}

/// Segment indices ordered by descending energy; ties keep segmentation
/// order. Returns the first `min(k, n)`.
pub fn select_top_k(energies: &PhonemeEnergies, k: usize) -> Vec<usize> {
    let mut ranked = rank_segments(energies);
    ranked.truncate(k);
    ranked
}

pub fn rank_segments(energies: &PhonemeEnergies) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..energies.0.len()).collect();
    // sort_by is stable, so equal energies stay in start order.
    idx.sort_by(|&a, &b| energies.0[b].total_cmp(&energies.0[a]));
    idx
}

pub fn build_mask(
    seg: &PhonemeSegmentation,
    selected: &[usize],
    rows: usize,
    k_requested: usize,
) -> Result<DiscretizedMask> {
    let mut on = vec![false; seg.total_frames()];
    for &j in selected {
        let s = seg.segments().get(j).ok_or_else(|| {
            Error::validation(format!("segment index {j} out of range ({})", seg.len()))
        })?;
        on[s.start..s.end].fill(true);
    }
    let data = Matrix::from_fn(rows, seg.total_frames(), |_, t| f64::from(u8::from(on[t])));
    let mut selected = selected.to_vec();
    selected.sort_unstable();
    selected.dedup();
    Ok(DiscretizedMask {
        data,
        selected,
        k_requested,
    })
}

/// Every intermediate product of one discretization.
#[derive(Debug, Clone)]
pub struct PdsmOutput {
    pub segmentation: PhonemeSegmentation,
    pub processed: Matrix,
    pub energies: PhonemeEnergies,
    /// All eligible segment indices by descending energy.
    pub ranking: Vec<usize>,
    pub mask: DiscretizedMask,
}

/// Discretizes `map` against a posteriorgram. A posteriorgram with a
/// different frame count is segmented first and the segmentation resampled.
pub fn pdsm(map: &Matrix, ppg: &Posteriorgram, cfg: &PdsmConfig) -> Result<DiscretizedMask> {
    Ok(pdsm_detailed(map, ppg, cfg)?.mask)
}

pub fn pdsm_detailed(map: &Matrix, ppg: &Posteriorgram, cfg: &PdsmConfig) -> Result<PdsmOutput> {
    let seg = segment_posteriorgram(ppg)?;
    let seg = resample_segmentation(&seg, map.cols())?;
    pdsm_with_segmentation(map, seg, cfg)
}

pub fn pdsm_with_segmentation(
    map: &Matrix,
    seg: PhonemeSegmentation,
    cfg: &PdsmConfig,
) -> Result<PdsmOutput> {
    cfg.validate()?;
    if !map.is_finite() {
        return Err(Error::validation("saliency map has non-finite entries"));
    }
    let processed = preprocess(map, cfg);
    let energies = phoneme_energies(&processed, &seg, cfg.pool)?;
    let ranking: Vec<usize> = rank_segments(&energies)
        .into_iter()
        .filter(|&j| !cfg.skip_phonemes.contains(&seg.segments()[j].phoneme))
        .collect();
    let selected = &ranking[..cfg.k.min(ranking.len())];
    let mask = build_mask(&seg, selected, map.rows(), cfg.k)?;
    Ok(PdsmOutput {
        segmentation: seg,
        processed,
        energies,
        ranking,
        mask,
    })
}

/// Baseline mask: `min(k, n)` segments drawn uniformly without replacement.
pub fn random_phoneme_mask(
    seg: &PhonemeSegmentation,
    k: usize,
    rows: usize,
    seed: u64,
) -> Result<DiscretizedMask> {
    let n = seg.len();
    let mut r = rng::stream(seed, "random-phoneme-mask", 0);
    let chosen = rand::seq::index::sample(&mut r, n, k.min(n)).into_vec();
    build_mask(seg, &chosen, rows, k)
}
