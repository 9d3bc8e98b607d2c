//! Shared domain types.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Classifier input: `F x T` nonnegative energies.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub sample_id: String,
    data: Matrix,
}

impl Spectrogram {
    pub fn new(sample_id: impl Into<String>, data: Matrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::validation("spectrogram has an empty dimension"));
        }
        if let Some(v) = data.as_slice().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::validation(format!(
                "spectrogram entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Spectrogram {
            sample_id: sample_id.into(),
            data,
        })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }
}

/// Attribution methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Gradient,
    GradInput,
    Ig,
    #[serde(rename = "gradshap")]
    GradShap,
    GuidedBp,
    #[serde(rename = "deeplift")]
    DeepLift,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Ig,
        MethodId::GradShap,
        MethodId::GradInput,
        MethodId::GuidedBp,
        MethodId::Gradient,
        MethodId::DeepLift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Gradient => "gradient",
            MethodId::GradInput => "grad_input",
            MethodId::Ig => "ig",
            MethodId::GradShap => "gradshap",
            MethodId::GuidedBp => "guided_bp",
            MethodId::DeepLift => "deeplift",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown attribution method '{s}'")))
    }
}

/// `F x T` attribution scores for one classifier decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub data: Matrix,
    pub method: MethodId,
    pub target_class: usize,
}

impl SaliencyMap {
    pub fn new(data: Matrix, method: MethodId, target_class: usize) -> Result<Self> {
        if !data.is_finite() {
            return Err(Error::validation("saliency map has non-finite entries"));
        }
        Ok(SaliencyMap {
            data,
            method,
            target_class,
        })
    }
}

/// Phoneme score matrix, `N x T'` over a vocabulary of `N` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    data: Matrix,
    vocab: Vec<String>,
}

impl Posteriorgram {
    /// An empty `vocab` is replaced by placeholder labels `p0..p{N-1}`.
    pub fn new(data: Matrix, vocab: Vec<String>) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::validation("posteriorgram has an empty dimension"));
        }
        if data.as_slice().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(
                "posteriorgram entries must be finite and nonnegative",
            ));
        }
        let vocab = if vocab.is_empty() {
            (0..data.rows()).map(|i| format!("p{i}")).collect()
        } else {
            vocab
        };
        if vocab.len() != data.rows() {
            return Err(Error::shape(
                format!("{} vocabulary labels", data.rows()),
                format!("{} labels", vocab.len()),
            ));
        }
        Ok(Posteriorgram { data, vocab })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn frames(&self) -> usize {
        self.data.cols()
    }
}

/// One constant-phoneme span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub phoneme: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Run-length partition of `[0, total_frames)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSegmentation {
    segments: Vec<Segment>,
    total_frames: usize,
}

impl PhonemeSegmentation {
    pub fn new(segments: Vec<Segment>, total_frames: usize) -> Result<Self> {
        let seg = PhonemeSegmentation {
            segments,
            total_frames,
        };
        seg.validate()?;
        Ok(seg)
    }

    /// Checks the partition and run-length invariants.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.segments.first() else {
            return Err(Error::validation("segmentation has no segments"));
        };
        if first.start != 0 {
            return Err(Error::validation("first segment must start at frame 0"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.end <= s.start {
                return Err(Error::validation(format!("segment {i} is empty")));
            }
            if let Some(next) = self.segments.get(i + 1) {
                if next.start != s.end {
                    return Err(Error::validation(format!(
                        "segments {i} and {} do not abut",
                        i + 1
                    )));
                }
                if next.phoneme == s.phoneme {
                    return Err(Error::validation(format!(
                        "segments {i} and {} share phoneme {}",
                        i + 1,
                        s.phoneme
                    )));
                }
            }
        }
        let last = self.segments.last().unwrap();
        if last.end != self.total_frames {
            return Err(Error::validation(format!(
                "last segment ends at {} but total_frames is {}",
                last.end, self.total_frames
            )));
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Expands back to one label per frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_frames);
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.phoneme, s.len()));
        }
        out
    }
}

/// Binary column-constant mask built from selected segments.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedMask {
    pub data: Matrix,
    /// Selected segment indices, ascending.
    pub selected: Vec<usize>,
    pub k_requested: usize,
}

impl DiscretizedMask {
    /// Number of frames switched on.
    pub fn on_frames(&self) -> usize {
        if self.data.rows() == 0 {
            return 0;
        }
        self.data.row(0).iter().filter(|&&v| v != 0.0).count()
    }

    /// Fraction of the time axis covered by the mask.
    pub fn fraction(&self) -> f64 {
        self.on_frames() as f64 / self.data.cols() as f64
    }

    /// One flag per frame, taken from the first row.
    pub fn column_indicator(&self) -> Vec<bool> {
        self.data.row(0).iter().map(|&v| v != 0.0).collect()
    }
}

/// Class labels. Class index 1 is the anomalous class in both tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
    Clean,
    Noisy,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Real | Label::Clean => 0,
            Label::Fake | Label::Noisy => 1,
        }
    }
}
