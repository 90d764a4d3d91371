//! AdamW with decoupled weight decay, the warmup + cosine LR schedule, and
//! the EMA update for target-extractor parameters.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::{AutodiffError, GradMap, Real};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.1 }
    }
}

/// First/second moments per parameter plus the shared step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState<F> {
    pub m: BTreeMap<String, Vec<F>>,
    pub v: BTreeMap<String, Vec<F>>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new() -> Self {
        AdamState { m: BTreeMap::new(), v: BTreeMap::new(), step: 0 }
    }
}

/// One AdamW step over every parameter present in `grads`. Parameters not in
/// `grads` are left untouched (no decay on unused parameters).
pub fn adamw_step<F: Real>(
    params: &mut ParamStore<F>,
    grads: &GradMap<F>,
    state: &mut AdamState<F>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let one = F::ONE;
    let bias1 = F::from_f64(1.0 - cfg.beta1.powi(t));
    let bias2 = F::from_f64(1.0 - cfg.beta2.powi(t));
    let lr_f = F::from_f64(lr);
    let wd = F::from_f64(cfg.weight_decay);
    let eps = F::from_f64(cfg.eps);

    for (name, g) in grads {
        let p = params.get_mut(name);
        if p.values.len() != g.len() {
            return Err(AutodiffError::ShapeMismatch {
                name: name.clone(),
                expected: p.values.len(),
                got: g.len(),
            });
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![F::ZERO; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![F::ZERO; g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            // Decoupled decay uses the pre-update parameter value.
            p.values[i] = p.values[i] - lr_f * (m_hat / (v_hat.sqrt() + eps) + wd * p.values[i]);
        }
    }
    Ok(())
}

/// Learning rate at `iter`: linear 0 → `peak` over `[0, warmup)`, cosine
/// `peak` → `floor` over `[warmup, total)`, `floor` afterward.
pub fn lr_at(iter: u64, warmup: u64, total: u64, peak: f64, floor: f64) -> f64 {
    if iter < warmup {
        peak * iter as f64 / warmup as f64
    } else if iter < total {
        let progress = (iter - warmup) as f64 / (total - warmup) as f64;
        floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    } else {
        floor
    }
}

/// EMA update `target += (1 - decay) * (online - target)` for every tensor in
/// `target` that also exists in `online`. The incremental form leaves targets
/// bit-identical when online equals target.
pub fn ema_update<F: Real>(target: &mut ParamStore<F>, online: &ParamStore<F>, decay: f64) {
    let one_minus = F::from_f64(1.0 - decay);
    for (name, t) in target.iter_mut() {
        let o = online.get(name);
        debug_assert_eq!(o.values.len(), t.values.len());
        for i in 0..t.values.len() {
            let delta = one_minus * (o.values[i] - t.values[i]);
            t.values[i] += delta;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(vals: &[(&str, f64)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (n, v) in vals {
            s.insert(n, vec![*v], vec![1]);
        }
        s
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut p = scalar_store(&[("w", 0.7)]);
        let mut st = AdamState::new();
        let mut grads = GradMap::new();
        grads.insert("w".to_string(), vec![0.0]);
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        adamw_step(&mut p, &grads, &mut st, 0.1, &cfg).unwrap();
        assert_eq!(p.get("w").values[0], 0.7);
    }

    #[test]
    fn single_step_unit_gradient_moves_by_lr() {
        // Bias-corrected m_hat/sqrt(v_hat) = 1 on the first step with g = 1.
        let mut p = scalar_store(&[("w", 0.0)]);
        let mut st = AdamState::new();
        let mut grads = GradMap::new();
        grads.insert("w".to_string(), vec![1.0]);
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        adamw_step(&mut p, &grads, &mut st, 0.1, &cfg).unwrap();
        assert!((p.get("w").values[0] + 0.1).abs() < 1e-8, "got {}", p.get("w").values[0]);
    }

    #[test]
    fn matches_reference_trace_for_five_steps() {
        // Independent scalar re-implementation of AdamW, stepped alongside.
        let (b1, b2, eps, wd, lr) = (0.9, 0.999, 1e-8, 0.05, 0.01);
        let mut ref_p = [0.3f64, -0.8, 1.2];
        let mut ref_m = [0.0f64; 3];
        let mut ref_v = [0.0f64; 3];

        let mut p = ParamStore::new();
        p.insert("w", ref_p.to_vec(), vec![3]);
        let mut st = AdamState::new();
        let cfg = AdamConfig { beta1: b1, beta2: b2, eps, weight_decay: wd };

        for t in 1..=5u32 {
            let g: Vec<f64> = (0..3).map(|i| ((t as f64) * 0.3 + i as f64).sin()).collect();
            for i in 0..3 {
                ref_m[i] = b1 * ref_m[i] + (1.0 - b1) * g[i];
                ref_v[i] = b2 * ref_v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = ref_m[i] / (1.0 - b1.powi(t as i32));
                let vh = ref_v[i] / (1.0 - b2.powi(t as i32));
                ref_p[i] -= lr * (mh / (vh.sqrt() + eps) + wd * ref_p[i]);
            }
            let mut grads = GradMap::new();
            grads.insert("w".to_string(), g);
            adamw_step(&mut p, &grads, &mut st, lr, &cfg).unwrap();
        }
        for i in 0..3 {
            assert!((p.get("w").values[i] - ref_p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn adamw_rejects_shape_mismatch() {
        let mut p = scalar_store(&[("w", 0.0)]);
        let mut st = AdamState::new();
        let mut grads = GradMap::new();
        grads.insert("w".to_string(), vec![1.0, 2.0]);
        match adamw_step(&mut p, &grads, &mut st, 0.1, &AdamConfig::default()) {
            Err(AutodiffError::ShapeMismatch { .. }) => {}
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn lr_schedule_endpoints_and_midpoint() {
        assert_eq!(lr_at(0, 2000, 100_000, 1e-3, 1e-6), 0.0);
        assert!((lr_at(2000, 2000, 100_000, 1e-3, 1e-6) - 1e-3).abs() < 1e-15);
        // 51000 is halfway through the cosine phase.
        let mid = lr_at(51_000, 2000, 100_000, 1e-3, 1e-6);
        assert!((mid - 5.005e-4).abs() < 1e-9, "got {mid}");
        assert_eq!(lr_at(100_000, 2000, 100_000, 1e-3, 1e-6), 1e-6);
        assert_eq!(lr_at(1_000_000, 2000, 100_000, 1e-3, 1e-6), 1e-6);
    }

    #[test]
    fn ema_matches_closed_form_over_100_steps() {
        let decay = 0.996;
        let theta = 0.825f64;
        let theta_bar0 = -0.4f64;
        let mut target = scalar_store(&[("w", theta_bar0)]);
        let online = scalar_store(&[("w", theta)]);
        for n in 1..=100u32 {
            ema_update(&mut target, &online, decay);
            let expect = decay.powi(n as i32) * theta_bar0 + (1.0 - decay.powi(n as i32)) * theta;
            assert!(
                (target.get("w").values[0] - expect).abs() <= 1e-10,
                "step {n}: {} vs {expect}",
                target.get("w").values[0]
            );
        }
    }

    #[test]
    fn ema_is_bitwise_noop_when_equal() {
        let mut target = scalar_store(&[("w", 0.1234567)]);
        let online = scalar_store(&[("w", 0.1234567)]);
        ema_update(&mut target, &online, 0.996);
        assert_eq!(target.get("w").values[0].to_bits(), 0.1234567f64.to_bits());
    }
}
