//! Signal alignment pipeline.
//!
//! Source and target recordings differ in sampling rate and strength range.
//! The pipeline cuts source signals into fixed-duration sliding windows,
//! block-averages each window down to the target point count, and min-max
//! normalizes every signal into [0, 1]. Target signals already at the right
//! length are only normalized. Order is fixed: slice, downsample, normalize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which ear a signal was recorded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left = 0,
    Right = 1,
}

impl Side {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "L" => Some(Side::Left),
            "R" => Some(Side::Right),
            _ => None,
        }
    }
}

/// Diagnosis class. Tinnitus is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Control = 0,
    Tinnitus = 1,
}

impl ClassLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        match i {
            0 => Some(ClassLabel::Control),
            1 => Some(ClassLabel::Tinnitus),
            _ => None,
        }
    }
}

/// One recorded signal as it arrives from a dataset file: arbitrary length,
/// arbitrary strength units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub values: Vec<f64>,
    pub subject_id: String,
    pub side: Side,
    pub class_label: ClassLabel,
    pub dataset_id: String,
}

impl RawSignal {
    pub fn sample_count(&self) -> usize {
        self.values.len()
    }
}

/// A signal after alignment: exactly `target_points` values in [0, 1], plus
/// the index where its window started in the parent raw signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSignal {
    pub values: Vec<f64>,
    pub subject_id: String,
    pub side: Side,
    pub class_label: ClassLabel,
    pub dataset_id: String,
    pub parent_offset: usize,
}

/// Window size `n_s`, window stride, and aligned length `n_g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub window_size: usize,
    pub stride: usize,
    pub target_points: usize,
}

impl AlignmentConfig {
    pub fn new(window_size: usize, stride: usize, target_points: usize) -> Result<Self> {
        if target_points < 1 || window_size < target_points {
            return Err(Error::InvalidTargetLength {
                target_points,
                window_size,
            });
        }
        if stride < 1 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        Ok(AlignmentConfig {
            window_size,
            stride,
            target_points,
        })
    }
}

/// One slice of a raw signal, still at the source sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: Vec<f64>,
    pub parent_offset: usize,
}

/// Cut a raw signal into overlapping windows of `cfg.window_size` samples,
/// starting every `cfg.stride` samples. Yields
/// `floor((n - window) / stride) + 1` windows.
pub fn slice_sliding_window(raw: &RawSignal, cfg: &AlignmentConfig) -> Result<Vec<Window>> {
    let n = raw.sample_count();
    if n < cfg.window_size {
        return Err(Error::SampleCountTooSmall {
            subject_id: raw.subject_id.clone(),
            sample_count: n,
            window_size: cfg.window_size,
        });
    }
    let count = (n - cfg.window_size) / cfg.stride + 1;
    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * cfg.stride;
        windows.push(Window {
            values: raw.values[start..start + cfg.window_size].to_vec(),
            parent_offset: start,
        });
    }
    Ok(windows)
}

/// Contiguous block layout used by [`downsample`]: with `l = floor(n_s/n_g)`
/// and `m = n_s - l*n_g`, the first `m` blocks hold `l + 1` samples and the
/// remaining `n_g - m` blocks hold `l`, covering all `n_s` samples exactly
/// once.
pub fn downsample_blocks(n_s: usize, n_g: usize) -> Result<Vec<usize>> {
    if n_g < 1 || n_g > n_s {
        return Err(Error::InvalidTargetLength {
            target_points: n_g,
            window_size: n_s,
        });
    }
    let l = n_s / n_g;
    let m = n_s - l * n_g;
    let mut blocks = Vec::with_capacity(n_g);
    for j in 0..n_g {
        blocks.push(if j < m { l + 1 } else { l });
    }
    Ok(blocks)
}

/// Reduce a window of `n_s` samples to `n_g` block means.
pub fn downsample(window: &[f64], n_g: usize) -> Result<Vec<f64>> {
    let blocks = downsample_blocks(window.len(), n_g)?;
    let mut out = Vec::with_capacity(n_g);
    let mut start = 0;
    for size in blocks {
        let block = &window[start..start + size];
        out.push(block.iter().sum::<f64>() / size as f64);
        start += size;
    }
    Ok(out)
}

/// Per-signal min-max normalization into [0, 1]. A constant signal maps to
/// all zeros rather than failing, so degenerate flat windows stay in the
/// pipeline.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptySignal);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; values.len()]);
    }
    let span = max - min;
    Ok(values.iter().map(|v| (v - min) / span).collect())
}

/// Align a whole dataset. With `apply_window` set (source-style data) every
/// raw signal is sliced, downsampled, and normalized; otherwise (target-style
/// data) signals must already have `target_points` samples and are only
/// normalized. Labels propagate to every slice; output order follows input
/// order.
pub fn align_dataset(
    raws: &[RawSignal],
    cfg: &AlignmentConfig,
    apply_window: bool,
) -> Result<Vec<AlignedSignal>> {
    let mut out = Vec::new();
    for raw in raws {
        if apply_window {
            for window in slice_sliding_window(raw, cfg)? {
                let reduced = downsample(&window.values, cfg.target_points)?;
                out.push(AlignedSignal {
                    values: minmax_normalize(&reduced)?,
                    subject_id: raw.subject_id.clone(),
                    side: raw.side,
                    class_label: raw.class_label,
                    dataset_id: raw.dataset_id.clone(),
                    parent_offset: window.parent_offset,
                });
            }
        } else {
            if raw.sample_count() != cfg.target_points {
                return Err(Error::LengthMismatch {
                    subject_id: raw.subject_id.clone(),
                    expected: cfg.target_points,
                    actual: raw.sample_count(),
                });
            }
            out.push(AlignedSignal {
                values: minmax_normalize(&raw.values)?,
                subject_id: raw.subject_id.clone(),
                side: raw.side,
                class_label: raw.class_label,
                dataset_id: raw.dataset_id.clone(),
                parent_offset: 0,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn raw(n: usize, subject: &str) -> RawSignal {
        RawSignal {
            values: (0..n).map(|i| i as f64).collect(),
            subject_id: subject.to_string(),
            side: Side::Left,
            class_label: ClassLabel::Control,
            dataset_id: "d".to_string(),
        }
    }

    #[test]
    fn sliding_window_counts_and_offsets() {
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        // floor((500 - 400) / 20) + 1 = 6 windows at offsets 0, 20, ..., 100.
        let windows = slice_sliding_window(&raw(500, "s1"), &cfg).unwrap();
        assert_eq!(windows.len(), 6);
        let offsets: Vec<usize> = windows.iter().map(|w| w.parent_offset).collect();
        assert_eq!(offsets, vec![0, 20, 40, 60, 80, 100]);
        for w in &windows {
            assert_eq!(w.values.len(), 400);
        }
        assert_eq!(windows[3].values[0], 60.0);
    }

    #[test]
    fn sliding_window_exact_fit() {
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        let windows = slice_sliding_window(&raw(400, "s1"), &cfg).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].parent_offset, 0);
    }

    #[test]
    fn sliding_window_too_short() {
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        let err = slice_sliding_window(&raw(399, "s7"), &cfg).unwrap_err();
        match err {
            Error::SampleCountTooSmall {
                subject_id,
                sample_count,
                window_size,
            } => {
                assert_eq!(subject_id, "s7");
                assert_eq!(sample_count, 399);
                assert_eq!(window_size, 400);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn downsample_reference_geometry() {
        // n_s = 400, n_g = 131 gives l = 3, m = 7: seven 4-sample blocks then
        // 124 3-sample blocks (7*4 + 124*3 = 400).
        let blocks = downsample_blocks(400, 131).unwrap();
        assert_eq!(blocks.len(), 131);
        assert_eq!(blocks.iter().filter(|&&b| b == 4).count(), 7);
        assert_eq!(blocks.iter().filter(|&&b| b == 3).count(), 124);
        assert_eq!(blocks.iter().sum::<usize>(), 400);
        assert_eq!(&blocks[..8], &[4, 4, 4, 4, 4, 4, 4, 3]);
    }

    #[test]
    fn downsample_small_example() {
        // l = 1, m = 2 forces the (2, 2, 1, 1) block layout.
        let out = downsample(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 4).unwrap();
        assert_eq!(out, vec![1.5, 3.5, 5.0, 6.0]);
    }

    #[test]
    fn downsample_identity_when_lengths_match() {
        let input = vec![0.3, -1.0, 2.5, 7.0];
        assert_eq!(downsample(&input, 4).unwrap(), input);
    }

    #[test]
    fn downsample_rejects_bad_target() {
        assert!(matches!(
            downsample(&[1.0, 2.0], 3),
            Err(Error::InvalidTargetLength { .. })
        ));
        assert!(matches!(
            downsample(&[1.0, 2.0], 0),
            Err(Error::InvalidTargetLength { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(minmax_normalize(&[0.0, 5.0, 10.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[7.0, 7.0, 7.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(minmax_normalize(&[-2.0, 0.0, 2.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(matches!(minmax_normalize(&[]), Err(Error::EmptySignal)));
    }

    #[test]
    fn align_source_shape() {
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        let raws: Vec<RawSignal> = (0..4).map(|i| raw(500, &format!("s{i}"))).collect();
        let aligned = align_dataset(&raws, &cfg, true).unwrap();
        assert_eq!(aligned.len(), 4 * 6);
        for a in &aligned {
            assert_eq!(a.values.len(), 131);
            assert!(a.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // Labels propagate to every slice.
        assert!(aligned[..6].iter().all(|a| a.subject_id == "s0"));
    }

    #[test]
    fn align_full_source_dataset_count() {
        // 408 signals of 500 points, window 400, stride 20: six windows per
        // signal, so 2448 aligned signals of 131 points.
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        let raws: Vec<RawSignal> = (0..408).map(|i| raw(500, &format!("s{}", i % 38))).collect();
        let aligned = align_dataset(&raws, &cfg, true).unwrap();
        assert_eq!(aligned.len(), 2448);
    }

    #[test]
    fn align_target_normalizes_only() {
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        let raws: Vec<RawSignal> = (0..3).map(|i| raw(131, &format!("t{i}"))).collect();
        let aligned = align_dataset(&raws, &cfg, false).unwrap();
        assert_eq!(aligned.len(), 3);
        for a in &aligned {
            assert_eq!(a.parent_offset, 0);
            assert_eq!(a.values.len(), 131);
        }
    }

    #[test]
    fn align_target_rejects_wrong_length() {
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        let err = align_dataset(&[raw(130, "t9")], &cfg, false).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }

    #[test]
    fn align_empty_input() {
        let cfg = AlignmentConfig::new(400, 20, 131).unwrap();
        assert!(align_dataset(&[], &cfg, true).unwrap().is_empty());
    }

    #[test]
    fn block_partition_exhaustive() {
        // Every (n_g, n_s) pair up to 64: blocks are contiguous by
        // construction, so covering means summing to n_s with m oversized
        // blocks first.
        for n_s in 1..=64usize {
            for n_g in 1..=n_s {
                let blocks = downsample_blocks(n_s, n_g).unwrap();
                let l = n_s / n_g;
                let m = n_s - l * n_g;
                assert_eq!(blocks.len(), n_g);
                assert_eq!(blocks.iter().sum::<usize>(), n_s);
                for (j, &b) in blocks.iter().enumerate() {
                    assert_eq!(b, if j < m { l + 1 } else { l });
                }
            }
        }
    }

    fn argsort(values: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        idx
    }

    proptest! {
        #[test]
        fn downsample_preserves_mass(window in prop::collection::vec(-100.0f64..100.0, 1..64),
                                     frac in 0.0f64..1.0) {
            let n_s = window.len();
            let n_g = 1 + ((n_s - 1) as f64 * frac) as usize;
            let out = downsample(&window, n_g).unwrap();
            let blocks = downsample_blocks(n_s, n_g).unwrap();
            let mass_out: f64 = out.iter().zip(&blocks).map(|(v, &b)| v * b as f64).sum();
            let mass_in: f64 = window.iter().sum();
            let scale = mass_in.abs().max(1.0);
            prop_assert!((mass_out - mass_in).abs() <= 1e-9 * scale);
        }

        #[test]
        fn downsample_preserves_monotonicity(steps in prop::collection::vec(0.0f64..5.0, 1..48),
                                             frac in 0.0f64..1.0) {
            let mut acc = -3.0;
            let window: Vec<f64> = steps.iter().map(|s| { acc += s; acc }).collect();
            let n_s = window.len();
            let n_g = 1 + ((n_s - 1) as f64 * frac) as usize;
            let out = downsample(&window, n_g).unwrap();
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn normalize_range_and_extremes(values in prop::collection::vec(-1e3f64..1e3, 1..80)) {
            let out = minmax_normalize(&values).unwrap();
            prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                prop_assert!(out.contains(&0.0));
                prop_assert!(out.contains(&1.0));
            }
        }

        #[test]
        fn normalize_keeps_order(values in prop::collection::vec(-50.0f64..50.0, 2..40)) {
            let out = minmax_normalize(&values).unwrap();
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                prop_assert_eq!(argsort(&values), argsort(&out));
            }
        }

        #[test]
        fn downsample_means_stay_in_hull(window in prop::collection::vec(-10.0f64..10.0, 1..64)) {
            let out = downsample(&window, 1).unwrap();
            let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out[0] >= min - 1e-12 && out[0] <= max + 1e-12);
        }
    }

    #[test]
    fn downsample_mass_preservation_spot_check() {
        let window: Vec<f64> = (0..400).map(|i| (i as f64 * 0.1).sin()).collect();
        let out = downsample(&window, 131).unwrap();
        let blocks = downsample_blocks(400, 131).unwrap();
        let mass_out: f64 = out.iter().zip(&blocks).map(|(v, &b)| v * b as f64).sum();
        assert_relative_eq!(mass_out, window.iter().sum::<f64>(), max_relative = 1e-12);
    }
}
