//! Verification oracles: independent, unoptimized reimplementations used by
//! the test suites to check the main pipeline.
//!
//! These share only data types with `motif-core`; every algorithm here is
//! recomputed from scratch (normal-equation line fits, full string-space
//! enumeration, exponential cover search, central finite differences) and
//! never calls into the optimized implementation paths it checks.

use motif_core::mine::{group_into_classes, MinerConfig, Pattern, PatternSet};
use motif_core::pose::PoseSequence;
use motif_core::segment::SegmenterConfig;

/// Boundary detection recomputed the slow way: for every frame, solve the
/// 2x2 least-squares normal equations directly, then normalize, difference,
/// and threshold with the same rules as the production detector.
pub fn naive_boundaries(seq: &PoseSequence, cfg: &SegmenterConfig) -> Vec<usize> {
    let w = cfg.window;
    let frames = seq.len;
    let joints = seq.joints();
    assert!(frames > w, "oracle needs more frames than the fit window");

    // Residuals via normal equations: fit y = b + m x on x = 0..w-1,
    // predict at x = w.
    let mut residual = vec![0.0f64; frames * joints * 3];
    for t in w..frames {
        for j in 0..joints {
            for a in 0..3 {
                let mut s1 = 0.0f64; // sum 1
                let mut sx = 0.0f64;
                let mut sxx = 0.0f64;
                let mut sy = 0.0f64;
                let mut sxy = 0.0f64;
                for (x, tt) in (t - w..t).enumerate() {
                    let xf = x as f64;
                    let y = seq.joint_pos(tt, j)[a] as f64;
                    s1 += 1.0;
                    sx += xf;
                    sxx += xf * xf;
                    sy += y;
                    sxy += xf * y;
                }
                let det = s1 * sxx - sx * sx;
                let intercept = (sy * sxx - sx * sxy) / det;
                let slope = (s1 * sxy - sx * sy) / det;
                let pred = intercept + slope * w as f64;
                residual[(t * joints + j) * 3 + a] =
                    (pred - seq.joint_pos(t, j)[a] as f64).abs();
            }
        }
    }

    // Per-joint normalization over all frames and the joint's 3 coordinates.
    let n = (frames * 3) as f64;
    let mut e = vec![0.0f64; frames];
    let mut mu = vec![0.0f64; joints];
    let mut sigma = vec![0.0f64; joints];
    for j in 0..joints {
        let mut s = 0.0;
        for t in 0..frames {
            for a in 0..3 {
                s += residual[(t * joints + j) * 3 + a];
            }
        }
        mu[j] = s / n;
        let mut var = 0.0;
        for t in 0..frames {
            for a in 0..3 {
                let d = residual[(t * joints + j) * 3 + a] - mu[j];
                var += d * d;
            }
        }
        sigma[j] = (var / n).sqrt().max(1e-8);
    }
    for t in 0..frames {
        let mut s = 0.0;
        for j in 0..joints {
            for a in 0..3 {
                s += (residual[(t * joints + j) * 3 + a] - mu[j]) / sigma[j];
            }
        }
        e[t] = s / (joints * 3) as f64;
    }

    let mut de = vec![0.0f64; frames];
    let mut d2e = vec![0.0f64; frames];
    for t in 1..frames {
        de[t] = e[t] - e[t - 1];
    }
    for t in 2..frames {
        d2e[t] = de[t] - de[t - 1];
    }
    let mut tau2 = 0.0;
    if frames > 2 {
        for t in 2..frames {
            tau2 += d2e[t].abs();
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
        if (de[t] > cfg.tau1 && d2e[t] > 0.0) || d2e[t] > tau2 {
            bounds.push(t);
            blocked_until = t + suppress;
        }
    }
    bounds
}

fn hamming(a: &[u16], b: &[u16]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn is_constant(s: &[u16]) -> bool {
    s.windows(2).all(|w| w[0] == w[1])
}

/// Frequent patterns by full enumeration: every code string of each length
/// is generated, counted against every window with the Hamming tolerance,
/// and grouped with the same class rules as the miner. Strings that never
/// occur exactly are not variants; constant strings fall under the run rule.
/// Instance bounds: `alphabet <= 6`, `p_max <= 4`.
pub fn brute_force_frequent(corpus: &[Vec<u16>], cfg: &MinerConfig) -> PatternSet {
    assert!(!corpus.is_empty(), "empty corpus");
    assert!(cfg.alphabet <= 6 && cfg.p_max <= 4, "oracle instance bounds exceeded");

    let mut mined: Vec<(Vec<u16>, u64, Vec<Vec<u16>>)> = Vec::new();
    for len in 2..=cfg.p_max {
        let (o, h) = match motif_core::mine::threshold_schedule(len, cfg) {
            Ok(v) => v,
            Err(_) => continue,
        };
        // Enumerate the full string space of this length.
        let mut counted: Vec<(Vec<u16>, u64)> = Vec::new();
        let total = (cfg.alphabet as u64).pow(len as u32);
        for code in 0..total {
            let mut s = Vec::with_capacity(len);
            let mut c = code;
            for _ in 0..len {
                s.push((c % cfg.alphabet as u64) as u16);
                c /= cfg.alphabet as u64;
            }
            if is_constant(&s) {
                continue;
            }
            // Exact occurrence gate: a candidate variant must appear
            // somewhere verbatim.
            let exact = count_windows(corpus, &s, 0);
            if exact == 0 {
                continue;
            }
            let tolerant = count_windows(corpus, &s, h);
            counted.push((s, tolerant));
        }
        counted.sort_by(|a, b| a.0.cmp(&b.0));
        for (canonical, support, variants) in group_into_classes(&counted, h) {
            if support >= o as u64 {
                mined.push((canonical, support, variants));
            }
        }
    }
    mined.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));

    let mut patterns: Vec<Pattern> = Vec::new();
    for (canonical, support, variants) in mined {
        patterns.push(Pattern { id: patterns.len(), canonical, support, variants, is_run: false });
    }
    // The run rule: maximal identical-code runs of length >= 2.
    let mut runs: std::collections::BTreeMap<(u16, usize), u64> = Default::default();
    for seq in corpus {
        let mut i = 0;
        while i < seq.len() {
            let mut j = i + 1;
            while j < seq.len() && seq[j] == seq[i] {
                j += 1;
            }
            if j - i >= 2 {
                *runs.entry((seq[i], j - i)).or_insert(0) += 1;
            }
            i = j;
        }
    }
    let existing: std::collections::BTreeSet<Vec<u16>> =
        patterns.iter().map(|p| p.canonical.clone()).collect();
    for ((code, len), count) in runs {
        let canonical = vec![code; len];
        if existing.contains(&canonical) {
            continue;
        }
        patterns.push(Pattern {
            id: patterns.len(),
            canonical: canonical.clone(),
            support: count,
            variants: vec![canonical],
            is_run: true,
        });
    }
    PatternSet { patterns }
}

fn count_windows(corpus: &[Vec<u16>], pattern: &[u16], h: usize) -> u64 {
    let len = pattern.len();
    let mut count = 0;
    for seq in corpus {
        if seq.len() < len {
            continue;
        }
        for i in 0..=seq.len() - len {
            if hamming(&seq[i..i + len], pattern) <= h {
                count += 1;
            }
        }
    }
    count
}

/// Minimal cover size by trying every segmentation recursively. Instance
/// bounds: sequence length <= 15, <= 5 usable patterns.
pub fn exhaustive_cover(seq: &[u16], patterns: &PatternSet, cfg: &MinerConfig) -> usize {
    assert!(seq.len() <= 15, "oracle instance bounds exceeded");
    fn rec(seq: &[u16], at: usize, patterns: &PatternSet, cfg: &MinerConfig) -> usize {
        if at == seq.len() {
            return 0;
        }
        // Singleton step.
        let mut best = 1 + rec(seq, at + 1, patterns, cfg);
        for p in &patterns.patterns {
            let len = p.canonical.len();
            if at + len <= seq.len()
                && motif_core::mine::pattern_matches(p, &seq[at..at + len], cfg)
            {
                best = best.min(1 + rec(seq, at + len, patterns, cfg));
            }
        }
        best
    }
    rec(seq, 0, patterns, cfg)
}

/// Central-difference gradient of a scalar function at `params`.
pub fn finite_diff_grad<Func>(f: Func, params: &[f64], eps: f64) -> Vec<f64>
where
    Func: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; params.len()];
    let mut p = params.to_vec();
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let fp = f(&p);
        p[i] = orig - eps;
        let fm = f(&p);
        p[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Relative error between gradient vectors:
/// `||a - b|| / max(||a||, ||b||, 1e-12)`.
pub fn grad_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_exact_on_quadratic() {
        let f = |p: &[f64]| p.iter().map(|x| 1.5 * x * x).sum::<f64>();
        let at = [0.3, -1.2, 2.0];
        let g = finite_diff_grad(f, &at, 1e-5);
        for (gi, xi) in g.iter().zip(&at) {
            assert!((gi - 3.0 * xi).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_diff_zero_function() {
        let g = finite_diff_grad(|_| 0.0, &[1.0, 2.0], 1e-5);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn brute_force_rejects_empty_corpus() {
        let result = std::panic::catch_unwind(|| {
            brute_force_frequent(&[], &MinerConfig { alphabet: 4, p_max: 3, ..MinerConfig::default() })
        });
        assert!(result.is_err());
    }

    #[test]
    fn brute_force_single_symbol_corpus_yields_only_runs() {
        let corpus = vec![vec![2u16; 6]];
        let cfg = MinerConfig { alphabet: 4, p_max: 3, o_max: 1, o_min: 1, h_min: 0, h_max: 0, ..MinerConfig::default() };
        let set = brute_force_frequent(&corpus, &cfg);
        assert!(set.patterns.iter().all(|p| p.is_run));
        assert_eq!(set.patterns.len(), 1);
        assert_eq!(set.patterns[0].canonical, vec![2u16; 6]);
    }

    #[test]
    fn exhaustive_cover_trivial_cases() {
        let cfg = MinerConfig { alphabet: 4, p_max: 4, ..MinerConfig::default() };
        let empty = PatternSet::default();
        assert_eq!(exhaustive_cover(&[3], &empty, &cfg), 1);
        let set = PatternSet {
            patterns: vec![Pattern {
                id: 0,
                canonical: vec![1, 2, 3],
                support: 5,
                variants: vec![vec![1, 2, 3]],
                is_run: false,
            }],
        };
        assert_eq!(exhaustive_cover(&[1, 2, 3], &set, &cfg), 1);
    }
}

/// Deterministic random-instance generators and parameter flattening shared
/// by the equivalence/gradient test suites.
pub mod harness {
    use motif_core::autodiff::{ParamStore, Real};
    use motif_core::pose::{feature_dim, PoseSequence};

    /// Splitmix-style generator; self-contained so the oracles stay free of
    /// the implementation's RNG choices.
    pub struct Lcg(u64);

    impl Lcg {
        pub fn new(seed: u64) -> Self {
            Lcg(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1))
        }

        pub fn next_u64(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        }

        /// Uniform in [0, 1).
        pub fn uniform(&mut self) -> f64 {
            (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
        }

        pub fn range(&mut self, lo: usize, hi: usize) -> usize {
            lo + (self.next_u64() % (hi - lo) as u64) as usize
        }

        /// Standard normal via Box-Muller.
        pub fn normal(&mut self) -> f64 {
            let u1 = self.uniform().max(1e-12);
            let u2 = self.uniform();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    /// A 30 fps test sequence mixing random-walk joints with piecewise
    /// linear ramps so both detector branches fire.
    pub fn random_pose_sequence(rng: &mut Lcg, frames: usize, joints: usize) -> PoseSequence {
        let dim = feature_dim(joints);
        let mut values = vec![0.0f32; frames * dim];
        for j in 0..joints {
            for a in 0..3 {
                let style = rng.range(0, 3);
                let mut x = rng.normal() as f32;
                let mut slope = 0.05 * rng.normal() as f32;
                for t in 0..frames {
                    match style {
                        0 => x += 0.02 * rng.normal() as f32, // random walk
                        1 => {
                            // piecewise linear with occasional slope breaks
                            if rng.uniform() < 0.04 {
                                slope = 0.05 * rng.normal() as f32;
                            }
                            x += slope;
                        }
                        _ => {
                            x = (t as f32 * (0.05 + 0.01 * j as f32) + a as f32).sin()
                                * (1.0 + 0.1 * j as f32)
                        }
                    }
                    values[t * dim + 7 + 3 * j + a] = x;
                }
            }
        }
        PoseSequence::new(values, frames, dim, 30.0, "oracle")
    }

    /// Random code corpus within the brute-force instance bounds.
    pub fn random_corpus(
        rng: &mut Lcg,
        sequences: usize,
        max_len: usize,
        alphabet: usize,
    ) -> Vec<Vec<u16>> {
        (0..sequences)
            .map(|_| {
                let len = rng.range(4, max_len + 1);
                // Mildly repetitive streams so frequent patterns exist.
                let period = rng.range(2, 5);
                let base: Vec<u16> =
                    (0..period).map(|_| rng.range(0, alphabet) as u16).collect();
                (0..len)
                    .map(|i| {
                        if rng.uniform() < 0.2 {
                            rng.range(0, alphabet) as u16
                        } else {
                            base[i % period]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Flattens every parameter (sorted name order) into one vector.
    pub fn flatten_params<F: Real>(store: &ParamStore<F>) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, t) in store.iter() {
            out.extend(t.values.iter().map(|v| v.to_f64()));
        }
        out
    }

    /// Writes a flat vector back into the store (sorted name order).
    pub fn unflatten_params<F: Real>(store: &mut ParamStore<F>, flat: &[f64]) {
        let mut at = 0;
        for (_, t) in store.iter_mut() {
            for v in t.values.iter_mut() {
                *v = F::from_f64(flat[at]);
                at += 1;
            }
        }
        assert_eq!(at, flat.len());
    }
}

/// Finite-difference checks for every differentiable tape op, shared by the
/// gradient test suite and the acceptance criterion.
pub mod opcheck {
    use super::{finite_diff_grad, grad_rel_err};
    use crate::harness::Lcg;
    use motif_core::autodiff::{attention, AttentionSpec, Tape};

    /// Runs one op check; returns the relative error between the analytic
    /// and central-difference gradients.
    fn check<B>(init: &[f64], rows: usize, cols: usize, build: B) -> f64
    where
        B: Fn(&mut Tape<f64>, usize) -> usize,
    {
        let analytic = {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.param("x", init.to_vec(), rows, cols);
            let loss = build(&mut tape, x);
            let grads = tape.backward(loss);
            grads.get("x").cloned().unwrap_or_else(|| vec![0.0; init.len()])
        };
        let numeric = finite_diff_grad(
            |vals| {
                let mut tape: Tape<f64> = Tape::new();
                let x = tape.input(vals.to_vec(), rows, cols);
                let loss = build(&mut tape, x);
                tape.scalar_value(loss)
            },
            init,
            1e-5,
        );
        grad_rel_err(&analytic, &numeric)
    }

    /// Checks every differentiable op on small random shapes. Returns
    /// `(op name, rel err)` per op.
    pub fn check_all_ops(seed: u64) -> Vec<(&'static str, f64)> {
        let mut rng = Lcg::new(seed);
        let mut randv = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal() * 0.7).collect() };
        let a = randv(12);
        let b = randv(12);
        let bias = randv(4);
        // Keep |x| away from the smooth-L1 kink at 1 and the abs kink at 0.
        let safe: Vec<f64> =
            a.iter().map(|&x| if x.abs() > 0.9 { x * 0.8 } else { x + 0.05 }).collect();
        let positive: Vec<f64> = a.iter().map(|x| x * x + 0.5).collect();
        let mut out = Vec::new();

        out.push(("matmul_left", check(&a, 3, 4, |t, x| {
            let w = t.input(b.clone(), 4, 3);
            let y = t.matmul(x, w);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("matmul_right", check(&a, 4, 3, |t, x| {
            let l = t.input(b.clone(), 3, 4);
            let y = t.matmul(l, x);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("add_sub_mul", check(&a, 3, 4, |t, x| {
            let other = t.input(b.clone(), 3, 4);
            let s = t.add(x, other);
            let d = t.sub(s, x);
            let m = t.mul(d, x);
            t.mean_all(m)
        })));
        out.push(("add_row_broadcast", check(&bias, 1, 4, |t, x| {
            let base = t.input(a.clone(), 3, 4);
            let y = t.add_row_broadcast(base, x);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("scale_add_scalar", check(&a, 3, 4, |t, x| {
            let y = t.scale(x, -1.7);
            let z = t.add_scalar(y, 0.4);
            let w = t.mul(z, z);
            t.mean_all(w)
        })));
        out.push(("transpose", check(&a, 3, 4, |t, x| {
            let y = t.transpose(x);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("reshape", check(&a, 3, 4, |t, x| {
            let y = t.reshape(x, 4, 3);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("gather_rows", check(&a, 3, 4, |t, x| {
            let y = t.gather_rows(x, &[2, 0, 2, 1]);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("vstack_concat_slice", check(&a, 3, 4, |t, x| {
            let p = t.gather_rows(x, &[0, 1]);
            let q = t.gather_rows(x, &[2]);
            let stacked = t.vstack(&[p, q]);
            let left = t.slice_cols(stacked, 0, 2);
            let right = t.slice_cols(stacked, 2, 2);
            let cc = t.concat_cols(&[right, left]);
            let z = t.mul(cc, cc);
            t.mean_all(z)
        })));
        out.push(("masked_softmax_rows", check(&a, 3, 4, |t, x| {
            let allowed = vec![
                true, true, false, true, true, true, true, true, false, true, true, false,
            ];
            let y = t.masked_softmax_rows(x, &allowed);
            let w = t.input(b.clone(), 3, 4);
            let z = t.mul(y, w);
            t.mean_all(z)
        })));
        out.push(("layer_norm_input", check(&a, 3, 4, |t, x| {
            let g = t.input(vec![1.1, 0.9, 1.0, 1.2], 1, 4);
            let bt = t.input(vec![0.1, -0.1, 0.0, 0.2], 1, 4);
            let y = t.layer_norm(x, g, bt);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("layer_norm_gamma", check(&bias, 1, 4, |t, x| {
            let base = t.input(a.clone(), 3, 4);
            let bt = t.input(vec![0.0; 4], 1, 4);
            let y = t.layer_norm(base, x, bt);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("gelu", check(&a, 3, 4, |t, x| {
            let y = t.gelu(x);
            t.mean_all(y)
        })));
        out.push(("sqrt", check(&positive, 3, 4, |t, x| {
            let y = t.sqrt(x);
            t.mean_all(y)
        })));
        out.push(("sum_rows", check(&a, 3, 4, |t, x| {
            let y = t.sum_rows(x);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("mean_rows", check(&a, 3, 4, |t, x| {
            let y = t.mean_rows(x);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("sum_all", check(&a, 3, 4, |t, x| {
            let y = t.mul(x, x);
            t.sum_all(y)
        })));
        out.push(("mean_all", check(&a, 3, 4, |t, x| t.mean_all(x))));
        out.push(("max_pool_segments", check(&a, 3, 4, |t, x| {
            let y = t.max_pool_segments(x, &[(0, 2), (2, 3)]);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("rope", check(&a, 3, 4, |t, x| {
            let y = t.rope(x, &[0, 2, 5]);
            let z = t.mul(y, y);
            t.mean_all(z)
        })));
        out.push(("smooth_l1_mean", check(&safe, 3, 4, |t, x| t.smooth_l1_mean(x))));
        out.push(("softplus", check(&a, 3, 4, |t, x| {
            let y = t.softplus(x);
            t.mean_all(y)
        })));
        out.push(("abs", check(&safe, 3, 4, |t, x| {
            let y = t.abs(x);
            t.mean_all(y)
        })));
        out.push(("weighted_cross_entropy", check(&a, 3, 4, |t, x| {
            t.weighted_cross_entropy(x, &[1, 3, 0], &[0.5, 1.0, 2.0, 1.5])
        })));

        // Attention composite, every projection plus the inputs.
        let d = 4;
        let x = randv(3 * d);
        let wq = randv(d * d);
        let wk = randv(d * d);
        let wv = randv(d * d);
        let mask = vec![true, true, false, true, true, true, false, true, true];
        for slot in ["wq", "wk", "wv", "x"] {
            let (init, rows): (&Vec<f64>, usize) = match slot {
                "wq" => (&wq, d),
                "wk" => (&wk, d),
                "wv" => (&wv, d),
                _ => (&x, 3),
            };
            let err = check(init, rows, d, |t, p| {
                let (xq, q_w, k_w, v_w);
                if slot == "x" {
                    xq = p;
                    q_w = t.input(wq.clone(), d, d);
                    k_w = t.input(wk.clone(), d, d);
                    v_w = t.input(wv.clone(), d, d);
                } else {
                    xq = t.input(x.clone(), 3, d);
                    q_w = if slot == "wq" { p } else { t.input(wq.clone(), d, d) };
                    k_w = if slot == "wk" { p } else { t.input(wk.clone(), d, d) };
                    v_w = if slot == "wv" { p } else { t.input(wv.clone(), d, d) };
                }
                let out = attention(
                    t,
                    &AttentionSpec {
                        q: xq,
                        k: xq,
                        v: xq,
                        wq: q_w,
                        wk: k_w,
                        wv: v_w,
                        mask: &mask,
                        heads: 2,
                        pos_q: Some(&[0, 1, 2]),
                        pos_k: Some(&[0, 1, 2]),
                    },
                )
                .unwrap();
                let z = t.mul(out, out);
                t.mean_all(z)
            });
            let name: &'static str = match slot {
                "wq" => "attention_wq",
                "wk" => "attention_wk",
                "wv" => "attention_wv",
                _ => "attention_inputs",
            };
            out.push((name, err));
        }
        out
    }
}
