//! Action-atom boundary detection.
//!
//! Boundaries are nonlinear changes in joint trajectories at 30 fps: a sliding
//! least-squares line is fit to each joint coordinate over the past `window`
//! frames and extrapolated one step; the L1 residuals, normalized per joint
//! and reduced to a scalar signal, are thresholded on their first and second
//! temporal differences. Detection runs at the input rate (30 fps) while the
//! resulting segments index the 5 fps token stream.

use std::fmt;

use crate::pose::PoseSequence;

#[derive(Debug, Clone)]
pub struct SegmenterConfig {
    /// Line-fit window in frames.
    pub window: usize,
    /// First-difference threshold.
    pub tau1: f64,
    /// Suppression period after a detection, seconds.
    pub refractory: f64,
    pub input_fps: f64,
    pub token_fps: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig { window: 5, tau1: 0.005, refractory: 0.5, input_fps: 30.0, token_fps: 5.0 }
    }
}

/// Extrapolation residuals and the reduced scalar signal with its temporal
/// differences.
#[derive(Debug, Clone)]
pub struct ErrorSignal {
    /// T×J×3 L1 residuals, flattened row-major.
    pub per_joint: Vec<f64>,
    pub frames: usize,
    pub joints: usize,
    pub joint_mean: Vec<f64>,
    pub joint_std: Vec<f64>,
    pub e: Vec<f64>,
    pub de: Vec<f64>,
    pub d2e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentError {
    SequenceTooShort { len: usize, window: usize },
}

impl fmt::Display for SegmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentError::SequenceTooShort { len, window } => {
                write!(f, "sequence length {len} must exceed fit window {window}")
            }
        }
    }
}

impl std::error::Error for SegmentError {}

/// A partition of `[0, len)` into contiguous segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    /// Segment start frames, always beginning with 0, strictly increasing.
    pub boundaries: Vec<usize>,
    /// Half-open `(start, end)` intervals.
    pub segments: Vec<(usize, usize)>,
    pub len: usize,
}

impl SegmentMap {
    /// Builds a map from boundary starts. `0` is forced present; duplicates
    /// collapse; starts at or beyond `len` are dropped.
    pub fn from_boundaries(starts: &[usize], len: usize) -> SegmentMap {
        assert!(len >= 1, "segment map needs at least one frame");
        let mut bounds: Vec<usize> = starts.iter().copied().filter(|&b| b < len).collect();
        bounds.push(0);
        bounds.sort_unstable();
        bounds.dedup();
        let mut segments = Vec::with_capacity(bounds.len());
        for (i, &s) in bounds.iter().enumerate() {
            let e = if i + 1 < bounds.len() { bounds[i + 1] } else { len };
            segments.push((s, e));
        }
        let map = SegmentMap { boundaries: bounds, segments, len };
        map.assert_partition();
        map
    }

    /// Uniform segments of `seg_len` frames (the last may be shorter).
    pub fn fixed(len: usize, seg_len: usize) -> SegmentMap {
        assert!(seg_len >= 1);
        let starts: Vec<usize> = (0..len).step_by(seg_len).collect();
        SegmentMap::from_boundaries(&starts, len)
    }

    pub fn count(&self) -> usize {
        self.segments.len()
    }

    /// Segment index owning frame `t`.
    pub fn seg_of(&self, t: usize) -> usize {
        debug_assert!(t < self.len);
        match self.boundaries.binary_search(&t) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|(s, e)| e - s).collect()
    }

    pub fn assert_partition(&self) {
        assert!(!self.segments.is_empty());
        assert_eq!(self.segments[0].0, 0, "first segment must start at 0");
        for w in self.segments.windows(2) {
            assert_eq!(w[0].1, w[1].0, "segments must be contiguous");
        }
        let last = self.segments.last().unwrap();
        assert_eq!(last.1, self.len, "segments must cover the full range");
        assert!(self.segments.iter().all(|(s, e)| e > s), "empty segment");
    }
}

/// Per-joint, per-coordinate L1 residuals of a one-step linear extrapolation
/// fit over the previous `window` frames. Frames `t < window` get residual 0.
/// Uses only the joint-position channels.
pub fn extrapolation_error(seq: &PoseSequence, window: usize) -> Result<ErrorSignal, SegmentError> {
    assert!(window >= 2, "fit window must be at least 2");
    let t_len = seq.len;
    if t_len <= window {
        return Err(SegmentError::SequenceTooShort { len: t_len, window });
    }
    let joints = seq.joints();
    let mut per_joint = vec![0.0f64; t_len * joints * 3];

    // Closed-form least squares over local x = 0..w-1, evaluated at x = w.
    // The x statistics are constant per window length.
    let w = window as f64;
    let x_mean = (w - 1.0) / 2.0;
    let x_var: f64 = (0..window).map(|x| (x as f64 - x_mean) * (x as f64 - x_mean)).sum();

    for t in window..t_len {
        for j in 0..joints {
            for a in 0..3 {
                let mut y_mean = 0.0f64;
                for tt in t - window..t {
                    y_mean += seq.joint_pos(tt, j)[a] as f64;
                }
                y_mean /= w;
                let mut cov = 0.0f64;
                for (x, tt) in (t - window..t).enumerate() {
                    cov += (x as f64 - x_mean) * (seq.joint_pos(tt, j)[a] as f64 - y_mean);
                }
                let slope = cov / x_var;
                let pred = y_mean + slope * (w - x_mean);
                let obs = seq.joint_pos(t, j)[a] as f64;
                per_joint[(t * joints + j) * 3 + a] = (pred - obs).abs();
            }
        }
    }

    Ok(normalize_and_reduce(per_joint, t_len, joints))
}

/// Normalizes residuals per joint (mean/std pooled over the joint's three
/// coordinates and all frames, std floored at 1e-8) and reduces to the scalar
/// signal `e` with first/second differences (`de[0] = d2e[0] = d2e[1] = 0`).
pub fn normalize_and_reduce(per_joint: Vec<f64>, frames: usize, joints: usize) -> ErrorSignal {
    let mut joint_mean = vec![0.0f64; joints];
    let mut joint_std = vec![0.0f64; joints];
    let n = (frames * 3) as f64;
    for j in 0..joints {
        let mut s = 0.0;
        for t in 0..frames {
            for a in 0..3 {
                s += per_joint[(t * joints + j) * 3 + a];
            }
        }
        joint_mean[j] = s / n;
        let mut var = 0.0;
        for t in 0..frames {
            for a in 0..3 {
                let d = per_joint[(t * joints + j) * 3 + a] - joint_mean[j];
                var += d * d;
            }
        }
        joint_std[j] = (var / n).sqrt().max(1e-8);
    }

    let mut e = vec![0.0f64; frames];
    let denom = (joints * 3) as f64;
    for t in 0..frames {
        let mut s = 0.0;
        for j in 0..joints {
            for a in 0..3 {
                s += (per_joint[(t * joints + j) * 3 + a] - joint_mean[j]) / joint_std[j];
            }
        }
        e[t] = s / denom;
    }

    let mut de = vec![0.0f64; frames];
    let mut d2e = vec![0.0f64; frames];
    for t in 1..frames {
        de[t] = e[t] - e[t - 1];
    }
    for t in 2..frames {
        d2e[t] = de[t] - de[t - 1];
    }

    ErrorSignal { per_joint, frames, joints, joint_mean, joint_std, e, de, d2e }
}

/// Scans frames in ascending order and marks boundaries where
/// `(de > tau1 && d2e > 0) || (d2e > tau2)` with `tau2 = mean_t(|d2e_t|)`
/// over `t >= 2`. After a mark, detection is suppressed for
/// `ceil(refractory * input_fps)` frames. Frame 0 is an implicit boundary
/// and does not trigger suppression.
pub fn detect_boundaries(sig: &ErrorSignal, cfg: &SegmenterConfig) -> Vec<usize> {
    let frames = sig.frames;
    let mut tau2 = 0.0f64;
    if frames > 2 {
        for t in 2..frames {
            tau2 += sig.d2e[t].abs();
        }
        tau2 /= (frames - 2) as f64;
    }
    let suppress = (cfg.refractory * cfg.input_fps).ceil() as usize;
    let mut bounds = vec![0usize];
    let mut blocked_until = 0usize;
    for t in 1..frames {
        if t < blocked_until {
            continue;
        }
        let hit = (sig.de[t] > cfg.tau1 && sig.d2e[t] > 0.0) || sig.d2e[t] > tau2;
        if hit {
            bounds.push(t);
            blocked_until = t + suppress;
        }
    }
    bounds
}

/// Maps 30 fps boundary frames to token indices (`floor(b / stride)` with
/// `stride = input_fps / token_fps`) and builds the token-level segment map.
pub fn to_token_segments(bounds: &[usize], t_tokens: usize, cfg: &SegmenterConfig) -> SegmentMap {
    assert!(t_tokens >= 1);
    let stride = (cfg.input_fps / cfg.token_fps).round() as usize;
    let starts: Vec<usize> = bounds.iter().map(|&b| b / stride).collect();
    SegmentMap::from_boundaries(&starts, t_tokens)
}

/// Full atom segmentation: residuals → boundaries at 30 fps → token segments.
pub fn segment_atoms(
    seq: &PoseSequence,
    t_tokens: usize,
    cfg: &SegmenterConfig,
) -> Result<SegmentMap, SegmentError> {
    let sig = extrapolation_error(seq, cfg.window)?;
    let bounds = detect_boundaries(&sig, cfg);
    Ok(to_token_segments(&bounds, t_tokens, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{feature_dim, PoseSequence};

    /// 1-joint sequence whose x-coordinate follows `f(t)`; other channels 0.
    fn seq_from_fn(frames: usize, f: impl Fn(usize) -> f32) -> PoseSequence {
        let d = feature_dim(1);
        let mut values = vec![0.0f32; frames * d];
        for t in 0..frames {
            values[t * d + 7] = f(t);
        }
        PoseSequence::new(values, frames, d, 30.0, "toy")
    }

    #[test]
    fn linear_trajectory_has_zero_residuals() {
        let seq = seq_from_fn(40, |t| 0.3 * t as f32 - 1.0);
        let sig = extrapolation_error(&seq, 5).unwrap();
        for (i, &r) in sig.per_joint.iter().enumerate() {
            assert!(r.abs() <= 1e-4, "residual {r} at {i}");
        }
    }

    #[test]
    fn slope_change_residual_matches_closed_form() {
        // Line A (slope s1) up to and including t*, line B (slope s2) after.
        // At t*+1 the window lies entirely on line A, so the residual is
        // |s2 - s1| times one extrapolation step.
        let (s1, s2, tstar) = (0.02f32, 0.11f32, 20usize);
        let seq = seq_from_fn(40, |t| {
            if t <= tstar {
                s1 * t as f32
            } else {
                s1 * tstar as f32 + s2 * (t - tstar) as f32
            }
        });
        let w = 5;
        let sig = extrapolation_error(&seq, w).unwrap();
        let expect = (s2 - s1).abs() as f64;
        let got = sig.per_joint[(tstar + 1) * 3];
        assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
        assert!(sig.per_joint[(tstar - 1) * 3].abs() < 1e-5);
        assert!(sig.per_joint[(tstar + w + 1) * 3].abs() < 1e-4);
    }

    #[test]
    fn window_two_reduces_to_two_point_extrapolation() {
        let seq = seq_from_fn(30, |t| ((t * t) as f32) * 0.003 + (t as f32 * 0.7).sin() * 0.05);
        let sig = extrapolation_error(&seq, 2).unwrap();
        for t in 2..30 {
            let x2 = seq.joint_pos(t - 1, 0)[0] as f64;
            let x1 = seq.joint_pos(t - 2, 0)[0] as f64;
            let pred = 2.0 * x2 - x1;
            let expect = (pred - seq.joint_pos(t, 0)[0] as f64).abs();
            let got = sig.per_joint[t * 3];
            assert!((got - expect).abs() < 1e-9, "t={t}: {got} vs {expect}");
        }
    }

    #[test]
    fn too_short_sequence_is_rejected() {
        let seq = seq_from_fn(5, |t| t as f32);
        match extrapolation_error(&seq, 5) {
            Err(SegmentError::SequenceTooShort { .. }) => {}
            other => panic!("expected SequenceTooShort, got {other:?}"),
        }
    }

    #[test]
    fn constant_residuals_center_to_zero() {
        // The 1e-8 std floor amplifies the summation ulp, so "zero" here is
        // bounded by ulp/floor rather than machine epsilon.
        let frames = 20;
        let per_joint = vec![0.42f64; frames * 2 * 3];
        let sig = normalize_and_reduce(per_joint, frames, 2);
        for &v in &sig.e {
            assert!(v.abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn single_spike_gives_unique_maximum() {
        let frames = 30;
        let joints = 3;
        let mut per_joint = vec![0.0f64; frames * joints * 3];
        for (i, v) in per_joint.iter_mut().enumerate() {
            *v = 0.01 * ((i % 7) as f64);
        }
        let tstar = 17;
        per_joint[(tstar * joints + 1) * 3 + 2] = 5.0;
        let sig = normalize_and_reduce(per_joint, frames, joints);
        let (mut best_t, mut best) = (0, f64::MIN);
        for (t, &v) in sig.e.iter().enumerate() {
            if v > best {
                best = v;
                best_t = t;
            }
        }
        assert_eq!(best_t, tstar);
    }

    #[test]
    fn second_difference_of_ramp_is_zero() {
        let frames = 25;
        let joints = 1;
        let mut per_joint = vec![0.0f64; frames * 3];
        for t in 0..frames {
            for a in 0..3 {
                per_joint[t * 3 + a] = 0.2 * t as f64 + 1.0;
            }
        }
        let sig = normalize_and_reduce(per_joint, frames, joints);
        for t in 2..frames {
            assert!(sig.d2e[t].abs() < 1e-10, "t={t}: {}", sig.d2e[t]);
        }
    }

    #[test]
    fn flat_signal_yields_only_implicit_boundary() {
        let frames = 60;
        let sig = normalize_and_reduce(vec![0.0; frames * 3], frames, 1);
        let bounds = detect_boundaries(&sig, &SegmenterConfig::default());
        assert_eq!(bounds, vec![0]);
    }

    #[test]
    fn single_kink_detected_within_window() {
        let tstar = 45usize;
        let seq = seq_from_fn(120, |t| {
            if t <= tstar {
                0.002 * t as f32
            } else {
                0.002 * tstar as f32 + 0.05 * (t - tstar) as f32
            }
        });
        let cfg = SegmenterConfig::default();
        let sig = extrapolation_error(&seq, cfg.window).unwrap();
        let bounds = detect_boundaries(&sig, &cfg);
        let near: Vec<usize> = bounds
            .iter()
            .copied()
            .filter(|&b| b > 0 && b.abs_diff(tstar) <= cfg.window + 1)
            .collect();
        assert_eq!(near.len(), 1, "bounds: {bounds:?}");
    }

    fn two_kink_seq(gap_frames: usize) -> PoseSequence {
        let k1 = 40usize;
        let k2 = k1 + gap_frames;
        let slopes = [0.001f32, 0.06, 0.001];
        seq_from_fn(k2 + 60, move |t| {
            if t <= k1 {
                slopes[0] * t as f32
            } else if t <= k2 {
                slopes[0] * k1 as f32 + slopes[1] * (t - k1) as f32
            } else {
                slopes[0] * k1 as f32
                    + slopes[1] * (k2 - k1) as f32
                    + slopes[2] * (t - k2) as f32
            }
        })
    }

    #[test]
    fn refractory_suppresses_nearby_kink() {
        let cfg = SegmenterConfig::default();
        // 0.3 s apart: the second kink falls inside the suppression window.
        let seq = two_kink_seq(9);
        let sig = extrapolation_error(&seq, cfg.window).unwrap();
        let bounds = detect_boundaries(&sig, &cfg);
        let in_band: Vec<_> = bounds.iter().filter(|&&b| (38..=64).contains(&b)).collect();
        assert_eq!(in_band.len(), 1, "bounds: {bounds:?}");

        // 0.6 s apart: both kinks detected.
        let seq = two_kink_seq(18);
        let sig = extrapolation_error(&seq, cfg.window).unwrap();
        let bounds = detect_boundaries(&sig, &cfg);
        let first: Vec<_> = bounds.iter().filter(|&&b| (38..=46).contains(&b)).collect();
        let second: Vec<_> = bounds.iter().filter(|&&b| (56..=64).contains(&b)).collect();
        assert_eq!(first.len(), 1, "bounds: {bounds:?}");
        assert_eq!(second.len(), 1, "bounds: {bounds:?}");
    }

    #[test]
    fn suppression_spacing_invariant() {
        let cfg = SegmenterConfig::default();
        let seq = seq_from_fn(300, |t| ((t as f32) * 0.9).sin() * (0.01 * t as f32).cos());
        let sig = extrapolation_error(&seq, cfg.window).unwrap();
        let bounds = detect_boundaries(&sig, &cfg);
        let min_gap = (cfg.refractory * cfg.input_fps).ceil() as usize;
        for w in bounds.windows(2) {
            if w[0] == 0 {
                continue; // implicit boundary does not suppress
            }
            assert!(w[1] - w[0] >= min_gap, "bounds too close: {:?}", w);
        }
    }

    #[test]
    fn translation_invariance_of_boundaries() {
        let cfg = SegmenterConfig::default();
        let base = seq_from_fn(200, |t| (t as f32 * 0.23).sin() * 0.3);
        let mut shifted = base.clone();
        for t in 0..shifted.len {
            let off = t * shifted.dim + 7;
            shifted.values[off] += 12.5;
        }
        let b1 = detect_boundaries(&extrapolation_error(&base, cfg.window).unwrap(), &cfg);
        let b2 = detect_boundaries(&extrapolation_error(&shifted, cfg.window).unwrap(), &cfg);
        assert_eq!(b1, b2);
    }

    #[test]
    fn token_segments_from_single_boundary() {
        let cfg = SegmenterConfig::default();
        let map = to_token_segments(&[0], 9, &cfg);
        assert_eq!(map.segments, vec![(0, 9)]);
    }

    #[test]
    fn token_segments_index_arithmetic() {
        let cfg = SegmenterConfig::default();
        let map = to_token_segments(&[0, 6, 12], 5, &cfg);
        assert_eq!(map.segments, vec![(0, 1), (1, 2), (2, 5)]);
    }

    #[test]
    fn token_segments_dedup_same_token() {
        let cfg = SegmenterConfig::default();
        let map = to_token_segments(&[0, 3, 4], 7, &cfg);
        assert_eq!(map.segments, vec![(0, 7)]);
    }

    #[test]
    fn seg_of_matches_intervals() {
        let map = SegmentMap::from_boundaries(&[0, 3, 8], 12);
        for t in 0..12 {
            let k = map.seg_of(t);
            let (s, e) = map.segments[k];
            assert!(s <= t && t < e);
        }
        assert_eq!(map.lengths(), vec![3, 5, 4]);
    }
}
