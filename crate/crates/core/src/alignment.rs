//! Posteriorgram to phoneme segmentation: per-frame argmax, run-length
//! grouping into `[start, end)` spans, and time-axis resampling when the
//! posteriorgram hop differs from the spectrogram's.

use crate::error::{Error, Result};
use crate::interchange::{PhonemeSegmentation, Posteriorgram, Segment};

/// One vocabulary index per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels(pub Vec<usize>);

/// Most likely phoneme per frame. Ties go to the lowest vocabulary index.
pub fn frame_argmax(ppg: &Posteriorgram) -> FrameLabels {
    let data = ppg.data();
    let labels = (0..data.cols())
        .map(|t| {
            let mut best = 0;
            let mut best_v = data.get(0, t);
            for i in 1..data.rows() {
                let v = data.get(i, t);
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            best
        })
        .collect();
    FrameLabels(labels)
}

/// Run-length encodes frame labels into maximal constant spans.
pub fn segments_from_labels(labels: &FrameLabels) -> Result<PhonemeSegmentation> {
    let labels = &labels.0;
    if labels.is_empty() {
        return Err(Error::validation("cannot segment an empty label sequence"));
    }
    let mut segments: Vec<Segment> = Vec::new();
    for (t, &p) in labels.iter().enumerate() {
        match segments.last_mut() {
            Some(last) if last.phoneme == p => last.end = t + 1,
            _ => segments.push(Segment {
                phoneme: p,
                start: t,
                end: t + 1,
            }),
        }
    }
    PhonemeSegmentation::new(segments, labels.len())
}

/// `segments_from_labels(frame_argmax(ppg))`.
pub fn segment_posteriorgram(ppg: &Posteriorgram) -> Result<PhonemeSegmentation> {
    segments_from_labels(&frame_argmax(ppg))
}

/// Maps a segmentation over `T'` frames onto `target_frames` frames.
///
/// Every boundary `b` becomes `round(b * target / T')` with halves rounded
/// up. Spans that collapse to zero length are dropped and equal neighbours
/// merged, so the result is again a valid run-length partition.
pub fn resample_segmentation(
    seg: &PhonemeSegmentation,
    target_frames: usize,
) -> Result<PhonemeSegmentation> {
    if target_frames == 0 {
        return Err(Error::validation("target frame count must be at least 1"));
    }
    let src = seg.total_frames();
    if src == target_frames {
        return Ok(seg.clone());
    }
    let map = |b: usize| -> usize {
        let num = 2 * b as u128 * target_frames as u128 + src as u128;
        (num / (2 * src as u128)) as usize
    };
    let mut out: Vec<Segment> = Vec::with_capacity(seg.len());
    for s in seg.segments() {
        let (start, end) = (map(s.start), map(s.end));
        if end <= start {
            continue;
        }
        // Boundary mapping is monotone, so kept spans still abut.
        match out.last_mut() {
            Some(last) if last.phoneme == s.phoneme => last.end = end,
            _ => out.push(Segment {
                phoneme: s.phoneme,
                start,
                end,
            }),
        }
    }
    PhonemeSegmentation::new(out, target_frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn ppg_from_columns(cols: &[&[f64]]) -> Posteriorgram {
        let n = cols[0].len();
        let m = Matrix::from_fn(n, cols.len(), |i, t| cols[t][i]);
        Posteriorgram::new(m, vec![]).unwrap()
    }

    fn seg(parts: &[(usize, usize, usize)], total: usize) -> PhonemeSegmentation {
        PhonemeSegmentation::new(
            parts
                .iter()
                .map(|&(p, s, e)| Segment {
                    phoneme: p,
                    start: s,
                    end: e,
                })
                .collect(),
            total,
        )
        .unwrap()
    }

    #[test]
    fn argmax_example() {
        let ppg = ppg_from_columns(&[
            &[0.1, 0.8, 0.1],
            &[0.1, 0.8, 0.1],
            &[0.5, 0.25, 0.25],
            &[0.3, 0.3, 0.4],
        ]);
        assert_eq!(frame_argmax(&ppg).0, vec![1, 1, 0, 2]);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let third = 1.0 / 3.0;
        let ppg = ppg_from_columns(&[&[third, third, third], &[0.2, 0.5, 0.5]]);
        assert_eq!(frame_argmax(&ppg).0, vec![0, 1]);
    }

    #[test]
    fn run_length_examples() {
        let s = segments_from_labels(&FrameLabels(vec![0, 0, 2, 2, 2, 1])).unwrap();
        assert_eq!(s, seg(&[(0, 0, 2), (2, 2, 5), (1, 5, 6)], 6));
        let s = segments_from_labels(&FrameLabels(vec![7])).unwrap();
        assert_eq!(s, seg(&[(7, 0, 1)], 1));
        assert!(segments_from_labels(&FrameLabels(vec![])).is_err());
    }

    #[test]
    fn resample_examples() {
        let s = seg(&[(0, 0, 2), (2, 2, 5), (1, 5, 6)], 6);
        assert_eq!(resample_segmentation(&s, 6).unwrap(), s);
        let s = seg(&[(0, 0, 3), (1, 3, 6)], 6);
        assert_eq!(
            resample_segmentation(&s, 2).unwrap(),
            seg(&[(0, 0, 1), (1, 1, 2)], 2)
        );
        assert!(resample_segmentation(&s, 0).is_err());
    }

    #[test]
    fn resample_drops_collapsed_and_merges() {
        // Middle span [4, 5) collapses when 10 frames shrink to 2.
        let s = seg(&[(0, 0, 4), (1, 4, 5), (0, 5, 10)], 10);
        let r = resample_segmentation(&s, 2).unwrap();
        assert_eq!(r, seg(&[(0, 0, 2)], 2));
    }

    #[test]
    fn resample_rounds_half_up() {
        // Boundary 1 of 2 frames onto 3 frames -> 1.5 -> 2.
        let s = seg(&[(0, 0, 1), (1, 1, 2)], 2);
        assert_eq!(
            resample_segmentation(&s, 3).unwrap(),
            seg(&[(0, 0, 2), (1, 2, 3)], 3)
        );
    }

    fn labels_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..5, 1..200)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn run_length_round_trip(labels in labels_strategy()) {
            let s = segments_from_labels(&FrameLabels(labels.clone())).unwrap();
            prop_assert_eq!(s.frame_labels(), labels);
        }

        #[test]
        fn argmax_invariant_under_column_scaling(
            cols in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..30),
            scales in prop::collection::vec(0.01f64..100.0, 30),
        ) {
            let t = cols.len();
            let a = Matrix::from_fn(4, t, |i, j| cols[j][i]);
            let b = Matrix::from_fn(4, t, |i, j| cols[j][i] * scales[j]);
            let pa = Posteriorgram::new(a, vec![]).unwrap();
            let pb = Posteriorgram::new(b, vec![]).unwrap();
            prop_assert_eq!(frame_argmax(&pa), frame_argmax(&pb));
        }

        #[test]
        fn resample_preserves_partition_and_order(
            labels in prop::collection::vec(0usize..6, 100),
            target in 1usize..400,
        ) {
            let s = segments_from_labels(&FrameLabels(labels)).unwrap();
            let r = resample_segmentation(&s, target).unwrap();
            r.validate().unwrap();
            prop_assert_eq!(r.total_frames(), target);
            // Output phoneme sequence is a subsequence of the input's.
            let src: Vec<usize> = s.segments().iter().map(|x| x.phoneme).collect();
            let mut it = src.iter();
            for x in r.segments() {
                prop_assert!(it.any(|&p| p == x.phoneme));
            }
            prop_assert_eq!(resample_segmentation(&r, target).unwrap(), r);
        }
    }

    #[test]
    fn resample_100_to_237_keeps_every_segment_when_long_enough() {
        let labels: Vec<usize> = (0..100).map(|t| (t / 10) % 3).collect();
        let s = segments_from_labels(&FrameLabels(labels)).unwrap();
        let r = resample_segmentation(&s, 237).unwrap();
        assert_eq!(r.len(), s.len());
        let order: Vec<usize> = r.segments().iter().map(|x| x.phoneme).collect();
        let orig: Vec<usize> = s.segments().iter().map(|x| x.phoneme).collect();
        assert_eq!(order, orig);
    }
}
