//! Stage-1-only pilot for schedule tuning: prints the epoch-mean loss curve
//! and the epoch-50/epoch-1 ratio for a given corpus size and learning rate.

use motif_acceptance::*;
use motif_core::train::{pretrain_stage1, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(100);
    let epochs: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(50);
    let lr: f64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let wd: f64 = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(0.1);

    let arts = prepare_corpus(n, 1);
    let iters_per_epoch = n / 8;
    let tcfg = TrainConfig {
        epochs,
        lr_peak: lr,
        weight_decay: wd,
        total_iters: (epochs * iters_per_epoch) as u64,
        ..TrainConfig::desk(11)
    };
    let result = pretrain_stage1::<f32>(
        &arts.poses5,
        &arts.atom_maps,
        &model_config(),
        &tcfg,
        None,
        None,
    )
    .unwrap();
    let m = &result.epoch_mean;
    println!("lr={lr} wd={wd} n={n} epochs={epochs}");
    println!("curve: {:?}", m.iter().step_by(epochs.div_ceil(25)).map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
    println!("first {:.4e} min {:.4e} last {:.4e} ratio {:.3}", m[0], m.iter().cloned().fold(f64::MAX, f64::min), m[m.len() - 1], m[m.len() - 1] / m[0]);
}
