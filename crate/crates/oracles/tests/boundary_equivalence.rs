//! The production boundary detector against the normal-equation oracle.

use motif_core::segment::{detect_boundaries, extrapolation_error, SegmenterConfig};
use motif_oracles::harness::{random_pose_sequence, Lcg};
use motif_oracles::naive_boundaries;

#[test]
fn detector_matches_naive_reimplementation_on_random_sequences() {
    let mut rng = Lcg::new(0xb0);
    let cfg = SegmenterConfig::default();
    for case in 0..100 {
        let frames = rng.range(60, 901);
        let joints = rng.range(1, 9);
        let seq = random_pose_sequence(&mut rng, frames, joints);
        let sig = extrapolation_error(&seq, cfg.window).unwrap();
        let fast = detect_boundaries(&sig, &cfg);
        let slow = naive_boundaries(&seq, &cfg);
        assert_eq!(fast, slow, "case {case}: T={frames} J={joints}");
    }
}

#[test]
fn detector_matches_oracle_with_nondefault_config() {
    let mut rng = Lcg::new(0xb1);
    let cfg = SegmenterConfig { window: 3, tau1: 0.02, refractory: 0.3, ..SegmenterConfig::default() };
    for _ in 0..25 {
        let frames = rng.range(40, 400);
        let joints = rng.range(1, 5);
        let seq = random_pose_sequence(&mut rng, frames, joints);
        let sig = extrapolation_error(&seq, cfg.window).unwrap();
        assert_eq!(detect_boundaries(&sig, &cfg), naive_boundaries(&seq, &cfg));
    }
}
