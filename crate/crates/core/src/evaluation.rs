//! Faithfulness, k-sweeps, phoneme importance, rankings and localization.
//!
//! Faithfulness of a mask `M` for class `c` is `f_c(X) - f_c(X * (1 - M))`:
//! the drop in class probability once the highlighted region is removed.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{
    pdsm_with_segmentation, phoneme_energies, preprocess, random_phoneme_mask, PdsmConfig, Pool,
};
use crate::error::{Error, Result};
use crate::interchange::{MethodId, PhonemeSegmentation, Posteriorgram, SaliencyMap};
use crate::matrix::Matrix;
use crate::model::ToyClassifier;
use crate::rng;

/// Width of the mask-fraction bins in [`length_normalized_curve`].
pub const FRACTION_BIN: f64 = 0.05;

fn check_mask(x: &Matrix, mask: &Matrix) -> Result<()> {
    x.ensure_same_shape(mask)?;
    if let Some(v) = mask.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::validation(format!(
            "mask entries must lie in [0, 1], found {v}"
        )));
    }
    Ok(())
}

/// `f_c(X) - f_c(X * (1 - M))`. Binary masks and normalized continuous maps
/// are both accepted.
pub fn faithfulness(model: &ToyClassifier, x: &Matrix, mask: &Matrix, class: usize) -> Result<f64> {
    let base = model.forward(x)?[class];
    faithfulness_with_base(model, base, x, mask, class)
}

/// As [`faithfulness`] with `f_c(X)` already known.
pub fn faithfulness_with_base(
    model: &ToyClassifier,
    base: f64,
    x: &Matrix,
    mask: &Matrix,
    class: usize,
) -> Result<f64> {
    check_mask(x, mask)?;
    if mask.as_slice().iter().all(|&m| m == 0.0) {
        return Ok(0.0);
    }
    let removed = x.zip_map(mask, |v, m| v * (1.0 - m))?;
    Ok(base - model.forward(&removed)?[class])
}

/// `|M|` min-max scaled to [0, 1]; a constant map becomes all zeros.
pub fn normalize_continuous_map(m: &Matrix) -> Matrix {
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
    if hi <= lo {
        return Matrix::zeros(m.rows(), m.cols());
    }
    m.map(|v| (v.abs() - lo) / (hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Pdsm,
    Random,
    Continuous,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Pdsm, Variant::Continuous, Variant::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Pdsm => "pdsm",
            Variant::Random => "random",
            Variant::Continuous => "continuous",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One CSV row. `mask_fraction` is covered frames over `T` for binary
/// masks and the mean normalized weight for continuous maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessRow {
    pub sample_id: String,
    pub method: MethodId,
    pub k: usize,
    pub variant: Variant,
    pub ff: f64,
    pub mask_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model_sha256: String,
    pub pdsm: PdsmConfig,
    pub k_values: Vec<usize>,
    pub random_seeds: Vec<u64>,
    pub target_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<FaithfulnessRow>,
}

pub const CSV_HEADER: &str = "sample_id,method,k,variant,ff,mask_fraction";

/// 17 significant digits, `.` decimal separator.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mean FF and mask fraction for one `(method, k, variant)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub ff: f64,
    pub mask_fraction: f64,
    pub count: usize,
}

/// Method-level means across all k, one entry per variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub pdsm: f64,
    pub continuous: f64,
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub metadata: ReportMetadata,
    pub samples: usize,
    pub methods: BTreeMap<MethodId, MethodSummary>,
}

impl FaithfulnessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&r.sample_id),
                r.method,
                r.k,
                r.variant,
                fmt_real(r.ff),
                fmt_real(r.mask_fraction)
            );
        }
        out
    }

    /// Parses rows written by [`FaithfulnessReport::to_csv`].
    pub fn rows_from_csv(text: &str) -> Result<Vec<FaithfulnessRow>> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::validation(format!("faithfulness csv: {e}")))?;
        if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
            return Err(Error::validation(format!(
                "faithfulness csv header must be '{CSV_HEADER}'"
            )));
        }
        reader
            .deserialize()
            .map(|r| r.map_err(|e| Error::validation(format!("faithfulness csv: {e}"))))
            .collect()
    }

    /// Rows sorted by sample id first, so sums are taken in a fixed order.
    fn ordered_rows(&self) -> Vec<&FaithfulnessRow> {
        let mut rows: Vec<&FaithfulnessRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            (a.method, a.k, a.variant, &a.sample_id).cmp(&(b.method, b.k, b.variant, &b.sample_id))
        });
        rows
    }

    pub fn aggregate(&self) -> BTreeMap<(MethodId, usize, Variant), CellMean> {
        let mut acc: BTreeMap<(MethodId, usize, Variant), (f64, f64, usize)> = BTreeMap::new();
        for r in self.ordered_rows() {
            let e = acc.entry((r.method, r.k, r.variant)).or_default();
            e.0 += r.ff;
            e.1 += r.mask_fraction;
            e.2 += 1;
        }
        acc.into_iter()
            .map(|(key, (ff, frac, n))| {
                (
                    key,
                    CellMean {
                        ff: ff / n as f64,
                        mask_fraction: frac / n as f64,
                        count: n,
                    },
                )
            })
            .collect()
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("method,k,variant,mean_ff,mean_mask_fraction,count\n");
        for ((m, k, v), c) in self.aggregate() {
            let _ = writeln!(
                out,
                "{m},{k},{v},{},{},{}",
                fmt_real(c.ff),
                fmt_real(c.mask_fraction),
                c.count
            );
        }
        out
    }

    /// Per method and variant, the mean FF over every sample and every k.
    pub fn table(&self) -> Table {
        let mut acc: BTreeMap<(MethodId, Variant), (f64, usize)> = BTreeMap::new();
        for r in self.ordered_rows() {
            let e = acc.entry((r.method, r.variant)).or_default();
            e.0 += r.ff;
            e.1 += 1;
        }
        let mean = |m, v| acc.get(&(m, v)).map_or(f64::NAN, |(s, n)| s / *n as f64);
        let methods = acc
            .keys()
            .map(|(m, _)| *m)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|m| {
                (
                    m,
                    MethodSummary {
                        pdsm: mean(m, Variant::Pdsm),
                        continuous: mean(m, Variant::Continuous),
                        random: mean(m, Variant::Random),
                    },
                )
            })
            .collect();
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.sample_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        Table {
            metadata: self.metadata.clone(),
            samples: ids.len(),
            methods,
        }
    }
}

/// Everything `sweep_k` needs for one sample.
#[derive(Debug, Clone)]
pub struct SweepSample {
    pub sample_id: String,
    pub input: Matrix,
    pub segmentation: PhonemeSegmentation,
    pub maps: Vec<SaliencyMap>,
}

/// Seed used for the random-phoneme baseline of one sample.
pub fn random_mask_seed(seed: u64, sample_id: &str) -> u64 {
    rng::child_seed(seed, sample_id, 0)
}

fn sweep_one(
    model: &ToyClassifier,
    s: &SweepSample,
    cfg: &PdsmConfig,
    k_values: &[usize],
    seeds: &[u64],
    class: usize,
) -> Result<Vec<FaithfulnessRow>> {
    let x = &s.input;
    let base = model.forward(x)?[class];
    let t = x.cols() as f64;

    // The random baseline ignores the saliency map, so compute it once.
    let mut random = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let (mut ff, mut frac) = (0.0, 0.0);
        for &seed in seeds {
            let m = random_phoneme_mask(
                &s.segmentation,
                k,
                x.rows(),
                random_mask_seed(seed, &s.sample_id),
            )?;
            ff += faithfulness_with_base(model, base, x, &m.data, class)?;
            frac += m.fraction();
        }
        random.push((ff / seeds.len() as f64, frac / seeds.len() as f64));
    }

    let mut maps: Vec<&SaliencyMap> = s.maps.iter().collect();
    maps.sort_by_key(|m| m.method);
    let mut rows = Vec::new();
    for map in maps {
        x.ensure_same_shape(&map.data)?;
        let norm = normalize_continuous_map(&map.data);
        let cont_ff = faithfulness_with_base(model, base, x, &norm, class)?;
        let cont_frac = norm.sum() / norm.as_slice().len() as f64;
        let ranking = pdsm_with_segmentation(
            &map.data,
            s.segmentation.clone(),
            &PdsmConfig {
                k: 0,
                ..cfg.clone()
            },
        )?
        .ranking;
        for (ki, &k) in k_values.iter().enumerate() {
            let sel = &ranking[..k.min(ranking.len())];
            let mask = crate::discretize::build_mask(&s.segmentation, sel, x.rows(), k)?;
            let row = |variant, ff, mask_fraction| FaithfulnessRow {
                sample_id: s.sample_id.clone(),
                method: map.method,
                k,
                variant,
                ff,
                mask_fraction,
            };
            rows.push(row(
                Variant::Pdsm,
                faithfulness_with_base(model, base, x, &mask.data, class)?,
                mask.on_frames() as f64 / t,
            ));
            rows.push(row(Variant::Continuous, cont_ff, cont_frac));
            rows.push(row(Variant::Random, random[ki].0, random[ki].1));
        }
    }
    Ok(rows)
}

/// FF of PDSM masks, random-phoneme masks (averaged over `seeds`) and the
/// normalized continuous map, for every sample, method and `k`. `cfg.k` is
/// ignored. Rows come out sorted by sample id, then method, then `k`.
pub fn sweep_k(
    model: &ToyClassifier,
    samples: &[SweepSample],
    cfg: &PdsmConfig,
    k_values: &[usize],
    seeds: &[u64],
    class: usize,
) -> Result<FaithfulnessReport> {
    if k_values.is_empty() {
        return Err(Error::validation("k range is empty"));
    }
    if seeds.is_empty() {
        return Err(Error::validation(
            "at least one random-baseline seed is required",
        ));
    }
    cfg.validate()?;
    crate::model::validate_class(class)?;
    let mut order: Vec<&SweepSample> = samples.iter().collect();
    order.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let per_sample: Vec<Vec<FaithfulnessRow>> = order
        .par_iter()
        .map(|s| sweep_one(model, s, cfg, k_values, seeds, class))
        .collect::<Result<_>>()?;
    Ok(FaithfulnessReport {
        metadata: ReportMetadata {
            model_sha256: model.hash(),
            pdsm: cfg.clone(),
            k_values: k_values.to_vec(),
            random_seeds: seeds.to_vec(),
            target_class: class,
        },
        rows: per_sample.into_iter().flatten().collect(),
    })
}

/// One bin `[lo, lo + FRACTION_BIN)` of the length-normalized curve. The
/// last bin also holds fraction 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_ff: f64,
    pub count: usize,
}

pub fn fraction_bin(fraction: f64) -> usize {
    let last = (1.0 / FRACTION_BIN).round() as usize - 1;
    ((fraction / FRACTION_BIN).floor().max(0.0) as usize).min(last)
}

/// Mean FF per mask-fraction bin; empty bins are omitted.
pub fn length_normalized_curve<'a>(
    rows: impl IntoIterator<Item = &'a FaithfulnessRow>,
) -> Vec<CurveBin> {
    let mut bins: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = bins.entry(fraction_bin(r.mask_fraction)).or_default();
        e.0 += r.ff;
        e.1 += 1;
    }
    bins.into_iter()
        .map(|(b, (sum, n))| CurveBin {
            lo: b as f64 * FRACTION_BIN,
            hi: (b + 1) as f64 * FRACTION_BIN,
            mean_ff: sum / n as f64,
            count: n,
        })
        .collect()
}

/// Curves for every `(method, variant)` in a report, as CSV.
pub fn curves_csv(report: &FaithfulnessReport) -> String {
    let mut groups: BTreeMap<(MethodId, Variant), Vec<&FaithfulnessRow>> = BTreeMap::new();
    for r in &report.rows {
        groups.entry((r.method, r.variant)).or_default().push(r);
    }
    let mut out = String::from("method,variant,bin_lo,bin_hi,mean_ff,count\n");
    for ((m, v), rows) in groups {
        for b in length_normalized_curve(rows) {
            let _ = writeln!(
                out,
                "{m},{v},{},{},{},{}",
                fmt_real(b.lo),
                fmt_real(b.hi),
                fmt_real(b.mean_ff),
                b.count
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub phoneme: usize,
    pub label: String,
    pub total_energy: f64,
    pub total_frames: usize,
    pub normalized_importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub rows: Vec<ImportanceRow>,
}

impl ImportanceTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("rank,phoneme,label,total_energy,total_frames,normalized_importance\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                r.phoneme,
                csv_field(&r.label),
                fmt_real(r.total_energy),
                r.total_frames,
                fmt_real(r.normalized_importance)
            );
        }
        out
    }

    /// 1-based rank of a phoneme id.
    pub fn rank_of(&self, phoneme: usize) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r.phoneme == phoneme)
            .map(|i| i + 1)
    }
}

/// Sum-pooled preprocessed energy per phoneme over all samples, divided by
/// the frames that phoneme occupies. Only `use_abs` and `threshold` of `cfg`
/// apply. Phonemes that never occur are left out.
pub fn global_importance<'a>(
    items: impl IntoIterator<Item = (&'a Matrix, &'a PhonemeSegmentation)>,
    vocab: &[String],
    cfg: &PdsmConfig,
) -> Result<ImportanceTable> {
    cfg.validate()?;
    let mut energy: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (map, seg) in items {
        let processed = preprocess(map, cfg);
        let e = phoneme_energies(&processed, seg, Pool::Sum)?;
        for (s, v) in seg.segments().iter().zip(e.0) {
            let slot = energy.entry(s.phoneme).or_default();
            slot.0 += v;
            slot.1 += s.len();
        }
    }
    let mut rows: Vec<ImportanceRow> = energy
        .into_iter()
        .map(|(p, (total_energy, total_frames))| ImportanceRow {
            phoneme: p,
            label: vocab.get(p).cloned().unwrap_or_else(|| format!("p{p}")),
            total_energy,
            total_frames,
            normalized_importance: total_energy / total_frames as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.normalized_importance.total_cmp(&a.normalized_importance));
    Ok(ImportanceTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPhoneme {
    pub rank: usize,
    pub phoneme: usize,
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub energy: f64,
}

/// The `top_m` segments by descending pooled energy, ranks from 1.
pub fn rank_phonemes(
    map: &Matrix,
    ppg: &Posteriorgram,
    cfg: &PdsmConfig,
    top_m: usize,
) -> Result<Vec<RankedPhoneme>> {
    let out = crate::discretize::pdsm_detailed(map, ppg, cfg)?;
    Ok(out
        .ranking
        .iter()
        .take(top_m)
        .enumerate()
        .map(|(i, &j)| {
            let s = out.segmentation.segments()[j];
            RankedPhoneme {
                rank: i + 1,
                phoneme: s.phoneme,
                label: ppg.vocab()[s.phoneme].clone(),
                start: s.start,
                end: s.end,
                energy: out.energies.0[j],
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub recall: f64,
    pub precision: f64,
    pub energy_fraction: f64,
}

/// Scores a mask or continuous map against a frame window `[start, end)`.
/// A frame counts as "on" when any entry of its column is nonzero;
/// `energy_fraction` uses absolute values. 0/0 is reported as 0.
pub fn localization_score(m: &Matrix, start: usize, end: usize) -> Result<Localization> {
    if start >= end || end > m.cols() {
        return Err(Error::validation(format!(
            "window [{start}, {end}) is empty or exceeds {} frames",
            m.cols()
        )));
    }
    let mut col_mass = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, v) in col_mass.iter_mut().zip(m.row(r)) {
            *acc += v.abs();
        }
    }
    let on: Vec<bool> = col_mass.iter().map(|&v| v > 0.0).collect();
    let on_total = on.iter().filter(|&&b| b).count();
    let on_inside = on[start..end].iter().filter(|&&b| b).count();
    let mass_total: f64 = col_mass.iter().sum();
    let mass_inside: f64 = col_mass[start..end].iter().sum();
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(Localization {
        recall: on_inside as f64 / (end - start) as f64,
        precision: ratio(on_inside as f64, on_total as f64),
        energy_fraction: ratio(mass_inside, mass_total),
    })
}

/// Fraction of `truth` segment indices found in `selected`.
pub fn segment_recall(selected: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().filter(|t| selected.contains(t)).count() as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{segments_from_labels, FrameLabels};
    use crate::discretize::{build_mask, Threshold};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn model() -> ToyClassifier {
        ToyClassifier::random(3)
    }

    fn input(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, "eval-test", 0);
        Matrix::from_fn(rows, cols, |_, _| r.random_range(0.0..3.0))
    }

    fn seg(labels: &[usize]) -> PhonemeSegmentation {
        segments_from_labels(&FrameLabels(labels.to_vec())).unwrap()
    }

    #[test]
    fn zero_and_full_masks() {
        let (m, x) = (model(), input(8, 12, 1));
        assert_eq!(faithfulness(&m, &x, &Matrix::zeros(8, 12), 1).unwrap(), 0.0);
        let full = faithfulness(&m, &x, &Matrix::filled(8, 12, 1.0), 1).unwrap();
        let expect = m.forward(&x).unwrap()[1] - m.forward(&Matrix::zeros(8, 12)).unwrap()[1];
        assert_eq!(full, expect);
    }

    #[test]
    fn mask_out_of_range_or_misshaped() {
        let (m, x) = (model(), input(8, 12, 1));
        let mut bad = Matrix::zeros(8, 12);
        bad.set(0, 0, 1.5);
        assert!(matches!(
            faithfulness(&m, &x, &bad, 1),
            Err(Error::Validation(_))
        ));
        assert!(faithfulness(&m, &x, &Matrix::zeros(8, 11), 1).is_err());
    }

    #[test]
    fn normalization_cases() {
        let m = Matrix::from_rows(&[[-2.0, 0.0, 2.0]]);
        assert_eq!(
            normalize_continuous_map(&m),
            Matrix::from_rows(&[[1.0, 0.0, 1.0]])
        );
        let c = Matrix::filled(2, 3, 0.7);
        assert_eq!(normalize_continuous_map(&c), Matrix::zeros(2, 3));
        let u = Matrix::from_rows(&[[0.0, 0.25, 1.0], [0.5, 0.75, 0.1]]);
        assert_eq!(normalize_continuous_map(&u), u);
    }

    fn sweep_sample(id: &str, seed: u64) -> SweepSample {
        let x = input(8, 16, seed);
        let labels = [0, 0, 1, 1, 1, 2, 2, 3, 3, 3, 3, 1, 1, 0, 0, 2];
        let mut r = rng::stream(seed, "eval-map", 0);
        let maps = [MethodId::Ig, MethodId::Gradient]
            .into_iter()
            .map(|method| {
                let data = Matrix::from_fn(8, 16, |_, _| r.random_range(-1.0..1.0));
                SaliencyMap::new(data, method, 1).unwrap()
            })
            .collect();
        SweepSample {
            sample_id: id.into(),
            input: x,
            segmentation: seg(&labels),
            maps,
        }
    }

    #[test]
    fn sweep_edge_cases_and_determinism() {
        let m = model();
        let samples = vec![sweep_sample("b", 2), sweep_sample("a", 1)];
        let cfg = crate::discretize::Preset::Tt2.config(0);
        let ks = [0, 1, 3, 7, 20];
        let rep = sweep_k(&m, &samples, &cfg, &ks, &[1, 2, 3], 1).unwrap();
        assert_eq!(rep.rows.len(), 2 * 2 * ks.len() * 3);
        assert_eq!(rep.rows[0].sample_id, "a");
        for r in &rep.rows {
            assert!((-1.0..=1.0).contains(&r.ff) && (0.0..=1.0).contains(&r.mask_fraction));
            if r.k == 0 && r.variant != Variant::Continuous {
                assert_eq!(r.ff, 0.0);
            }
        }
        // 7 segments: k = 7 and k = 20 are full masks for both variants.
        for k in [7, 20] {
            for id in ["a", "b"] {
                let get = |v| {
                    rep.rows
                        .iter()
                        .find(|r| r.sample_id == id && r.k == k && r.variant == v)
                        .unwrap()
                        .ff
                };
                assert_eq!(get(Variant::Pdsm), get(Variant::Random));
            }
        }
        let again = sweep_k(&m, &samples, &cfg, &ks, &[1, 2, 3], 1).unwrap();
        assert_eq!(rep.to_csv(), again.to_csv());
        assert!(sweep_k(&m, &samples, &cfg, &[], &[1], 1).is_err());
    }

    #[test]
    fn csv_format() {
        let m = model();
        let rep = sweep_k(
            &m,
            &[sweep_sample("s", 1)],
            &crate::discretize::Preset::Fs2.config(0),
            &[1],
            &[0],
            1,
        )
        .unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("sample_id,method,k,variant,ff,mask_fraction\n"));
        assert!(!csv.contains('\r'));
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 6);
            for num in &f[4..] {
                let mant = num.split('e').next().unwrap().trim_start_matches('-');
                assert_eq!(mant.replace('.', "").len(), 17, "{num}");
                let back: f64 = num.parse().unwrap();
                assert!(back.is_finite());
            }
        }
        assert_eq!(fmt_real(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_round_trip() {
        let rep = sweep_k(
            &model(),
            &[sweep_sample("a,b", 1), sweep_sample("c", 2)],
            &crate::discretize::Preset::Tt2.config(0),
            &[0, 2],
            &[1],
            1,
        )
        .unwrap();
        let back = FaithfulnessReport::rows_from_csv(&rep.to_csv()).unwrap();
        assert_eq!(back, rep.rows);
        assert!(FaithfulnessReport::rows_from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn aggregates_match_group_by_oracle() {
        let m = model();
        let samples: Vec<_> = (0..4).map(|i| sweep_sample(&format!("s{i}"), i)).collect();
        let rep = sweep_k(
            &m,
            &samples,
            &crate::discretize::Preset::Tt2.config(0),
            &[1, 2],
            &[5],
            1,
        )
        .unwrap();
        for ((method, k, variant), cell) in rep.aggregate() {
            let vals: Vec<f64> = rep
                .rows
                .iter()
                .filter(|r| r.method == method && r.k == k && r.variant == variant)
                .map(|r| r.ff)
                .collect();
            let naive = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((cell.ff - naive).abs() < 1e-15);
            assert_eq!(cell.count, vals.len());
        }
        let table = rep.table();
        assert_eq!(table.samples, 4);
        let ig = table.methods[&MethodId::Ig];
        let naive: Vec<f64> = rep
            .rows
            .iter()
            .filter(|r| r.method == MethodId::Ig && r.variant == Variant::Pdsm)
            .map(|r| r.ff)
            .collect();
        assert!((ig.pdsm - naive.iter().sum::<f64>() / naive.len() as f64).abs() < 1e-15);
    }

    fn row(ff: f64, frac: f64) -> FaithfulnessRow {
        FaithfulnessRow {
            sample_id: "x".into(),
            method: MethodId::Ig,
            k: 1,
            variant: Variant::Pdsm,
            ff,
            mask_fraction: frac,
        }
    }

    #[test]
    fn curve_trivial_cases() {
        let zeros = vec![row(0.0, 0.0); 5];
        assert_eq!(
            length_normalized_curve(&zeros),
            vec![CurveBin {
                lo: 0.0,
                hi: FRACTION_BIN,
                mean_ff: 0.0,
                count: 5
            }]
        );
        let one = [row(0.3, 0.42)];
        let c = length_normalized_curve(&one);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].mean_ff, 0.3);
        assert!((c[0].lo - 0.4).abs() < 1e-12);
        assert_eq!(fraction_bin(1.0), 19);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn curve_matches_group_by(rows in proptest::collection::vec((-1.0f64..1.0, 0.0f64..=1.0), 1..60)) {
            let rows: Vec<FaithfulnessRow> = rows.iter().map(|&(f, m)| row(f, m)).collect();
            let curve = length_normalized_curve(&rows);
            let mut naive: Vec<(usize, Vec<f64>)> = Vec::new();
            for r in &rows {
                let b = ((r.mask_fraction * 20.0) as usize).min(19);
                match naive.iter_mut().find(|(k, _)| *k == b) {
                    Some((_, v)) => v.push(r.ff),
                    None => naive.push((b, vec![r.ff])),
                }
            }
            naive.sort_by_key(|(b, _)| *b);
            prop_assert_eq!(curve.len(), naive.len());
            for (c, (b, v)) in curve.iter().zip(&naive) {
                prop_assert_eq!(fraction_bin(c.lo + 1e-9), *b);
                prop_assert_eq!(c.count, v.len());
                prop_assert!((c.mean_ff - v.iter().sum::<f64>() / v.len() as f64).abs() < 1e-12);
            }
        }

        /// Values outside the selected spans only shrink, so the selection
        /// and therefore FF stay the same.
        #[test]
        fn ff_ignores_saliency_outside_mask(seed in 0u64..1000, shrink in 0.0f64..1.0, k in 1usize..4) {
            let m = model();
            let x = input(8, 16, seed);
            let s = seg(&[0, 0, 1, 1, 1, 2, 2, 3, 3, 3, 3, 1, 1, 0, 0, 2]);
            let mut r = rng::stream(seed, "eval-prop", 0);
            let map = Matrix::from_fn(8, 16, |_, _| r.random_range(0.01..1.0));
            let cfg = PdsmConfig { use_abs: false, threshold: Threshold::None, pool: Pool::Sum, k, skip_phonemes: vec![] };
            let a = pdsm_with_segmentation(&map, s.clone(), &cfg).unwrap().mask;
            let on = a.column_indicator();
            let changed = Matrix::from_fn(8, 16, |i, t| if on[t] { map.get(i, t) } else { map.get(i, t) * shrink });
            let b = pdsm_with_segmentation(&changed, s, &cfg).unwrap().mask;
            prop_assert_eq!(&a.data, &b.data);
            prop_assert_eq!(faithfulness(&m, &x, &a.data, 1).unwrap(), faithfulness(&m, &x, &b.data, 1).unwrap());
        }
    }

    #[test]
    fn importance_definitions() {
        let vocab: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let cfg = PdsmConfig {
            use_abs: false,
            threshold: Threshold::None,
            pool: Pool::Mean,
            k: 1,
            skip_phonemes: vec![],
        };
        let map = Matrix::filled(2, 5, 1.5);
        let one = seg(&[0, 0, 0, 0, 0]);
        let t = global_importance([(&map, &one)], &vocab, &cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].normalized_importance, 15.0 / 5.0);

        // Equal totals, phoneme 1 spans twice the frames.
        let map = Matrix::from_rows(&[[2.0, 2.0, 1.0, 1.0, 1.0, 1.0]]);
        let two = seg(&[0, 0, 1, 1, 1, 1]);
        let t = global_importance([(&map, &two)], &vocab, &cfg).unwrap();
        assert_eq!(t.rows[0].label, "a");
        assert_eq!(
            t.rows[1].normalized_importance,
            t.rows[0].normalized_importance / 2.0
        );
        assert_eq!(t.rank_of(1), Some(2));
        assert!(t.to_csv().starts_with("rank,phoneme,label,"));
    }

    fn ppg_for(labels: &[usize], n: usize) -> Posteriorgram {
        let data = Matrix::from_fn(n, labels.len(), |r, t| f64::from(u8::from(labels[t] == r)));
        Posteriorgram::new(data, vec![]).unwrap()
    }

    #[test]
    fn ranking_cases() {
        let cfg = PdsmConfig {
            use_abs: false,
            threshold: Threshold::None,
            pool: Pool::Mean,
            k: 0,
            skip_phonemes: vec![],
        };
        let ppg = ppg_for(&[0, 0, 1, 1, 2, 2], 3);
        let map = Matrix::from_rows(&[[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]]);
        let r = rank_phonemes(&map, &ppg, &cfg, 10).unwrap();
        assert_eq!(r.iter().map(|p| p.start).collect::<Vec<_>>(), vec![4, 2, 0]);
        assert_eq!(r[0].rank, 1);
        assert_eq!(r[0].label, "p2");

        let flat = Matrix::filled(1, 6, 1.0);
        let r = rank_phonemes(&flat, &ppg, &cfg, 2).unwrap();
        assert_eq!(r.iter().map(|p| p.start).collect::<Vec<_>>(), vec![0, 2]);

        // Full ordering agrees with the top-k selection for every k.
        let map = input(3, 6, 4);
        let full = rank_phonemes(&map, &ppg, &cfg, 3).unwrap();
        for k in 0..=3 {
            let sel =
                crate::discretize::pdsm(&map, &ppg, &PdsmConfig { k, ..cfg.clone() }).unwrap();
            let mut top: Vec<usize> = full[..k].iter().map(|p| p.start / 2).collect();
            top.sort_unstable();
            assert_eq!(sel.selected, top);
        }
    }

    #[test]
    fn localization_cases() {
        let s = seg(&[0, 0, 1, 1, 1, 2, 2, 2]);
        let exact = build_mask(&s, &[1], 4, 1).unwrap();
        let l = localization_score(&exact.data, 2, 5).unwrap();
        assert_eq!((l.recall, l.precision, l.energy_fraction), (1.0, 1.0, 1.0));
        let l = localization_score(&build_mask(&s, &[0], 4, 1).unwrap().data, 2, 5).unwrap();
        assert_eq!((l.recall, l.precision), (0.0, 0.0));
        let full = Matrix::filled(4, 8, 1.0);
        assert_eq!(localization_score(&full, 3, 4).unwrap().recall, 1.0);
        assert!(localization_score(&full, 4, 4).is_err());
        assert!(localization_score(&full, 2, 9).is_err());
        let cont = Matrix::from_rows(&[[0.0, 1.0, -3.0, 0.0]]);
        assert_eq!(
            localization_score(&cont, 2, 4).unwrap().energy_fraction,
            0.75
        );
    }

    #[test]
    fn random_mask_recall_tracks_fraction() {
        let labels: Vec<usize> = (0..60).map(|t| (t / 5) % 4).collect();
        let s = seg(&labels);
        let (mut recall, mut frac) = (0.0, 0.0);
        let draws = 10_000;
        for seed in 0..draws {
            let m = random_phoneme_mask(&s, 4, 1, seed).unwrap();
            recall += localization_score(&m.data, 17, 41).unwrap().recall;
            frac += m.fraction();
        }
        let (recall, frac) = (recall / draws as f64, frac / draws as f64);
        assert!((recall - frac).abs() <= 0.02, "{recall} vs {frac}");
    }

    #[test]
    fn segment_recall_counts() {
        assert_eq!(segment_recall(&[1, 4], &[4, 7]), 0.5);
        assert_eq!(segment_recall(&[], &[1]), 0.0);
    }
}
