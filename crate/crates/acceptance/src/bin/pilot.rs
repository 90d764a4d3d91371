//! Manual pilot run for tuning: times each pipeline phase and prints the
//! loss trajectories and downstream metrics the acceptance criteria gate on.

use std::time::Instant;

use motif_acceptance::*;
use motif_core::heads::{in_top_n, knn_classify, majority_label, LabeledToken};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let train_n: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(TRAIN_SEQUENCES);
    let test_n: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(TEST_SEQUENCES);
    let epochs: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(PRETRAIN_EPOCHS);
    let h_epochs: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(HEAD_EPOCHS);
    let t0 = Instant::now();
    let pipe = build_pipeline_scaled(train_n, test_n, epochs, h_epochs);
    println!("total build time: {:.1}s", t0.elapsed().as_secs_f64());
    println!("pretrain time (both steps): {:.1}s", pipe.pretrain_seconds);

    let s1 = &pipe.stage1.epoch_mean;
    let e2 = &pipe.e2e.epoch_mean;
    println!("stage1 epochs: first {:.6} last {:.6} ratio {:.3}", s1[0], s1[s1.len() - 1], s1[s1.len() - 1] / s1[0]);
    println!("  curve: {:?}", s1.iter().step_by(2).map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
    println!("e2e epochs: first {:.6} last {:.6} ratio {:.3}", e2[0], e2[e2.len() - 1], e2[e2.len() - 1] / e2[0]);
    println!("  curve: {:?}", e2.iter().step_by(2).map(|v| format!("{v:.2e}")).collect::<Vec<_>>());

    // k-NN over motif tokens: train bank, test queries.
    let mut bank = Vec::new();
    for (ls, labels) in pipe.train.motif_latents.iter().zip(&pipe.train.labels5) {
        let mut at = 0;
        for k in 0..ls.count {
            let len = ls.lengths[k];
            bank.push(LabeledToken {
                token: ls.token(k).to_vec(),
                label: majority_label(&labels[at..at + len]),
                segment_len: len,
            });
            at += len;
        }
    }
    let mut top1 = 0usize;
    let mut total = 0usize;
    for (ls, labels) in pipe.test.motif_latents.iter().zip(&pipe.test.labels5) {
        let mut at = 0;
        for k in 0..ls.count {
            let len = ls.lengths[k];
            let truth = majority_label(&labels[at..at + len]);
            let (_, scores) = knn_classify(ls.token(k), &bank, 20, 0.07, CLASSES).unwrap();
            if in_top_n(&scores, truth, 1) {
                top1 += 1;
            }
            total += 1;
            at += len;
        }
    }
    println!("knn top1: {:.4} over {total} test tokens", top1 as f64 / total as f64);

    // Prediction MPJPE: full model vs clip ablation.
    let head_cfg = head_config();
    let horizon = 15;
    let mean_mpjpe = |latents: &[motif_core::model::LatentSequence],
                      dec: &motif_core::autodiff::ParamStore<f32>,
                      pred: &motif_core::autodiff::ParamStore<f32>| {
        let mut errs = Vec::new();
        for (ls, poses) in latents.iter().zip(&pipe.test.poses5) {
            let cut = poses.len - horizon;
            let mut hist_count = 0;
            let mut hist_frames = 0;
            for (k, &len) in ls.lengths.iter().enumerate() {
                if hist_frames + len > cut {
                    break;
                }
                hist_frames += len;
                hist_count = k + 1;
            }
            if hist_count == 0 {
                continue;
            }
            let history = motif_core::model::LatentSequence {
                tokens: ls.tokens[..hist_count * ls.dim].to_vec(),
                count: hist_count,
                dim: ls.dim,
                lengths: ls.lengths[..hist_count].to_vec(),
            };
            let out = motif_core::heads::rollout(&history, pred, dec, &head_cfg, horizon).unwrap();
            let gt = poses.slice_frames(hist_frames, hist_frames + horizon);
            let frames: Vec<usize> = (0..horizon).collect();
            errs.push(motif_core::heads::mpjpe(&out, &gt, &frames).unwrap());
        }
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let full = mean_mpjpe(&pipe.test.motif_latents, &pipe.decoder, &pipe.predictor);
    let ablation =
        mean_mpjpe(&pipe.ablation_latents_test, &pipe.ablation_decoder, &pipe.ablation_predictor);
    println!("prediction mpjpe: full {full:.2} mm, clip ablation {ablation:.2} mm");
    println!("patterns mined: {}", pipe.patterns.patterns.len());
    let mean_motif_len: f64 = pipe
        .train
        .motif_maps
        .iter()
        .flat_map(|m| m.lengths())
        .map(|l| l as f64)
        .sum::<f64>()
        / pipe.train.motif_maps.iter().map(|m| m.count()).sum::<usize>() as f64;
    println!("mean motif length: {mean_motif_len:.2} frames @5fps");
}
