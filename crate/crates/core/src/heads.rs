//! Downstream heads over motif latent tokens.
//!
//! * zero-shot weighted k-NN classification over labeled bank tokens,
//! * a 1-layer per-frame recognition head (repeat each token over its
//!   segment, classify every frame) trained with class-balanced CE,
//! * a pose decoder trained on joint-position and velocity reconstruction,
//! * an autoregressive next-token predictor with segment-length regression,
//!   decoded through the frozen decoder,
//! * a bidirectional latent interpolator with a learnable gap token,
//! * MPJPE and majority-vote labeling utilities.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::autodiff::{
    adamw_step, lr_at, AdamConfig, AdamState, GradMap, NodeId, ParamStore, Real, Tape,
};
use crate::model::{encoder_stack, LatentSequence};
use crate::pose::{PoseSequence, ROOT_DIM};
use crate::train::{IterStats, TrainConfig, TrainError};

#[derive(Debug, Clone)]
pub struct HeadConfig {
    /// Latent token dimension (matches the extractor).
    pub token_dim: usize,
    pub heads: usize,
    pub recog_layers: usize,
    pub dec_layers: usize,
    pub pred_layers: usize,
    /// Inner width of the prediction head (64 at paper scale).
    pub pred_dim: usize,
    pub interp_layers: usize,
    pub ffn_mult: usize,
    pub num_classes: usize,
    /// Pose feature dimension the decoder reconstructs.
    pub pose_dim: usize,
    /// Maximum decodable segment length at inference.
    pub max_segment_len: usize,
}

impl HeadConfig {
    pub fn full(token_dim: usize, num_classes: usize, pose_dim: usize) -> Self {
        HeadConfig {
            token_dim,
            heads: 4,
            recog_layers: 1,
            dec_layers: 4,
            pred_layers: 4,
            pred_dim: 64,
            interp_layers: 4,
            ffn_mult: 4,
            num_classes,
            pose_dim,
            max_segment_len: 150,
        }
    }

    /// Desk preset: widths divided by the shared factor 8, two heads.
    pub fn desk(token_dim: usize, num_classes: usize, pose_dim: usize) -> Self {
        HeadConfig { heads: 2, pred_dim: 8, ..Self::full(token_dim, num_classes, pose_dim) }
    }
}

#[derive(Debug)]
pub enum HeadError {
    EmptyBank,
    LengthMismatch { tokens: usize, frames: usize },
    EmptyHistory,
    AllGaps,
    ShapeMismatch { detail: String },
    Train(TrainError),
}

impl fmt::Display for HeadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadError::EmptyBank => write!(f, "k-NN bank is empty"),
            HeadError::LengthMismatch { tokens, frames } => {
                write!(f, "segment lengths sum to {tokens}, sequence has {frames} frames")
            }
            HeadError::EmptyHistory => write!(f, "prediction needs at least one history token"),
            HeadError::AllGaps => write!(f, "interpolation needs at least one observed token"),
            HeadError::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            HeadError::Train(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for HeadError {}

impl From<TrainError> for HeadError {
    fn from(e: TrainError) -> Self {
        HeadError::Train(e)
    }
}

// ---------------------------------------------------------------------------
// k-NN classification
// ---------------------------------------------------------------------------

/// A labeled bank token for zero-shot classification.
#[derive(Debug, Clone)]
pub struct LabeledToken {
    pub token: Vec<f32>,
    pub label: u16,
    pub segment_len: usize,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        dot += *x as f64 * *y as f64;
        na += *x as f64 * *x as f64;
        nb += *y as f64 * *y as f64;
    }
    dot / (na.sqrt() * nb.sqrt()).max(1e-12)
}

/// Weighted k-NN vote: cosine similarity, weight `exp(sim / tau)`, class
/// scores are summed weights. Returns the argmax class (lowest index on
/// ties) and the per-class score vector (scaled by a common positive factor
/// for numerical stability).
pub fn knn_classify(
    query: &[f32],
    bank: &[LabeledToken],
    k: usize,
    tau: f64,
    num_classes: usize,
) -> Result<(u16, Vec<f64>), HeadError> {
    if bank.is_empty() {
        return Err(HeadError::EmptyBank);
    }
    let k = k.min(bank.len());
    let mut sims: Vec<(usize, f64)> =
        bank.iter().enumerate().map(|(i, t)| (i, cosine(query, &t.token))).collect();
    sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let top = &sims[..k];
    let max_sim = top[0].1;
    let mut scores = vec![0.0f64; num_classes];
    for &(i, s) in top {
        let w = ((s - max_sim) / tau).exp();
        scores[bank[i].label as usize] += w;
    }
    let mut best = 0usize;
    for c in 1..num_classes {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    Ok((best as u16, scores))
}

/// True when the correct class is within the `n` highest scores.
pub fn in_top_n(scores: &[f64], truth: u16, n: usize) -> bool {
    let better = scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| {
            s > scores[truth as usize] || (s == scores[truth as usize] && c < truth as usize)
        })
        .count();
    better < n
}

/// Modal label; ties resolve to the lowest class index.
pub fn majority_label(labels: &[u16]) -> u16 {
    assert!(!labels.is_empty(), "majority vote over an empty segment");
    let mut counts: std::collections::BTreeMap<u16, usize> = Default::default();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let mut best = *counts.keys().next().unwrap();
    let mut best_n = 0usize;
    for (&l, &n) in &counts {
        if n > best_n {
            best = l;
            best_n = n;
        }
    }
    best
}

/// Mean per-joint position error in millimeters over the given frames.
pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence, frames: &[usize]) -> Result<f64, HeadError> {
    if pred.dim != gt.dim || pred.len != gt.len {
        return Err(HeadError::ShapeMismatch {
            detail: format!("pred {}x{} vs gt {}x{}", pred.len, pred.dim, gt.len, gt.dim),
        });
    }
    let joints = pred.joints();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for &t in frames {
        for j in 0..joints {
            let p = pred.joint_pos(t, j);
            let g = gt.joint_pos(t, j);
            let mut d2 = 0.0f64;
            for a in 0..3 {
                let d = (p[a] - g[a]) as f64;
                d2 += d * d;
            }
            total += d2.sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64 * 1000.0)
}

// ---------------------------------------------------------------------------
// Shared forward pieces
// ---------------------------------------------------------------------------

/// Repeats token k over its segment length: (K, d) → (T, d).
fn repeat_rows<F: Real>(tape: &mut Tape<F>, tokens: NodeId, lengths: &[usize]) -> NodeId {
    let mut idx = Vec::with_capacity(lengths.iter().sum());
    for (k, &l) in lengths.iter().enumerate() {
        idx.extend(std::iter::repeat(k).take(l));
    }
    tape.gather_rows(tokens, &idx)
}

fn linear<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    prefix: &str,
    trainable: bool,
    x: NodeId,
) -> NodeId {
    let t = store.get(&format!("{prefix}.w"));
    let (r, c) = (t.rows(), t.cols());
    let w = if trainable {
        tape.param(&format!("{prefix}.w"), t.values.clone(), r, c)
    } else {
        tape.input(t.values.clone(), r, c)
    };
    let t = store.get(&format!("{prefix}.b"));
    let b = if trainable {
        tape.param(&format!("{prefix}.b"), t.values.clone(), 1, t.values.len())
    } else {
        tape.input(t.values.clone(), 1, t.values.len())
    };
    let y = tape.matmul(x, w);
    tape.add_row_broadcast(y, b)
}

fn latent_input<F: Real>(tape: &mut Tape<F>, latents: &LatentSequence) -> NodeId {
    let values: Vec<F> = latents.tokens.iter().map(|&v| F::from_f32(v)).collect();
    tape.input(values, latents.count, latents.dim)
}

// ---------------------------------------------------------------------------
// Recognition head
// ---------------------------------------------------------------------------

/// Per-frame logits: tokens repeated over their segments, a 1-layer encoder
/// with frame-position rotary encoding, then a linear classifier.
pub fn recognition_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    cfg: &HeadConfig,
    trainable: bool,
    latents: &LatentSequence,
    rope: bool,
) -> Result<NodeId, HeadError> {
    let frames = latents.frames();
    let tokens = latent_input(tape, latents);
    let repeated = repeat_rows(tape, tokens, &latents.lengths);
    let positions: Vec<usize> = (0..frames).collect();
    let mask = vec![true; frames * frames];
    let out = encoder_stack(
        tape, store, "recog", trainable, cfg.recog_layers, cfg.heads, repeated, &mask, &positions,
        rope,
    )
    .map_err(|e| HeadError::Train(TrainError::Model(e.into())))?;
    Ok(linear(tape, store, "recog.head", trainable, out))
}

/// Inverse-frequency class weights from frame labels.
pub fn class_weights(labels: &[Vec<u16>], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0u64; num_classes];
    for seq in labels {
        for &l in seq {
            counts[l as usize] += 1;
        }
    }
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
        .collect()
}

pub fn init_recognition_params<F: Real>(cfg: &HeadConfig, seed: u64) -> ParamStore<F> {
    let mut init = HeadInit::new(seed);
    let mut store = ParamStore::new();
    init.stack(&mut store, "recog", cfg.recog_layers, cfg.token_dim, cfg.ffn_mult);
    init.weight(&mut store, "recog.head.w", cfg.token_dim, cfg.num_classes);
    init.bias(&mut store, "recog.head.b", cfg.num_classes);
    store
}

/// Trains the recognition head with class-balanced cross-entropy.
pub fn train_recognition(
    latents: &[LatentSequence],
    frame_labels: &[Vec<u16>],
    cfg: &HeadConfig,
    tcfg: &TrainConfig,
) -> Result<(ParamStore<f32>, Vec<IterStats>), HeadError> {
    let weights = class_weights(frame_labels, cfg.num_classes);
    let params = init_recognition_params::<f32>(cfg, tcfg.seed);
    train_head_loop(params, latents.len(), tcfg, |tape, store, si| {
        let labels: Vec<usize> = frame_labels[si].iter().map(|&l| l as usize).collect();
        let w: Vec<f32> = weights.iter().map(|&x| x as f32).collect();
        let logits = recognition_forward(tape, store, cfg, true, &latents[si], true)?;
        Ok(tape.weighted_cross_entropy(logits, &labels, &w))
    })
}

/// Frame accuracy of the trained head: (top-1, top-3).
pub fn eval_recognition(
    latents: &[LatentSequence],
    frame_labels: &[Vec<u16>],
    store: &ParamStore<f32>,
    cfg: &HeadConfig,
) -> Result<(f64, f64), HeadError> {
    let mut top1 = 0usize;
    let mut top3 = 0usize;
    let mut total = 0usize;
    for (ls, labels) in latents.iter().zip(frame_labels) {
        let mut tape: Tape<f32> = Tape::new();
        let logits = recognition_forward(&mut tape, store, cfg, false, ls, true)?;
        let v = tape.values(logits);
        let c = cfg.num_classes;
        for (t, &truth) in labels.iter().enumerate() {
            let row = &v[t * c..(t + 1) * c];
            let scores: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            let mut best = 0usize;
            for j in 1..c {
                if scores[j] > scores[best] {
                    best = j;
                }
            }
            if best == truth as usize {
                top1 += 1;
            }
            if in_top_n(&scores, truth, 3) {
                top3 += 1;
            }
            total += 1;
        }
    }
    Ok((top1 as f64 / total as f64, top3 as f64 / total as f64))
}

// ---------------------------------------------------------------------------
// Pose decoder
// ---------------------------------------------------------------------------

/// Decodes latents to per-frame pose features: repeat per segment length,
/// 4-layer encoder, linear head to the pose dimension.
pub fn decoder_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    cfg: &HeadConfig,
    trainable: bool,
    tokens: NodeId,
    lengths: &[usize],
    rope: bool,
) -> Result<NodeId, HeadError> {
    let frames: usize = lengths.iter().sum();
    let repeated = repeat_rows(tape, tokens, lengths);
    let positions: Vec<usize> = (0..frames).collect();
    let mask = vec![true; frames * frames];
    let out = encoder_stack(
        tape, store, "dec", trainable, cfg.dec_layers, cfg.heads, repeated, &mask, &positions, rope,
    )
    .map_err(|e| HeadError::Train(TrainError::Model(e.into())))?;
    Ok(linear(tape, store, "dec.head", trainable, out))
}

/// Euclidean norm per 3-vector row group, averaged: input is (n, 3*J)
/// reshaped to (n*J, 3).
fn mean_joint_norm<F: Real>(tape: &mut Tape<F>, diff: NodeId) -> NodeId {
    let (n, cols) = tape.shape(diff);
    debug_assert_eq!(cols % 3, 0);
    let grouped = tape.reshape(diff, n * cols / 3, 3);
    let sq = tape.mul(grouped, grouped);
    let ssq = tape.sum_rows(sq);
    // Epsilon keeps the gradient finite at exact zero error.
    let eps = tape.add_scalar(ssq, F::from_f64(1e-24));
    let norms = tape.sqrt(eps);
    tape.mean_all(norms)
}

/// Decoder loss: `1.5 * L_pos + 1.0 * L_vel` over joint-position channels.
/// `L_pos` averages per-joint position error over every frame; `L_vel`
/// averages per-joint velocity error over frames `2..=T-1` (empty when
/// T < 3). Returns (loss node, pos value, vel value).
pub fn decode_loss<F: Real>(
    tape: &mut Tape<F>,
    pred: NodeId,
    target: &PoseSequence,
) -> (NodeId, f64, f64) {
    let (frames, dim) = tape.shape(pred);
    assert_eq!(frames, target.len);
    assert_eq!(dim, target.dim);
    let joints = target.joints();
    let pos_cols = 3 * joints;

    let target_vals: Vec<F> = target.values.iter().map(|&v| F::from_f32(v)).collect();
    let target_node = tape.input(target_vals, frames, dim);

    let pred_pos = tape.slice_cols(pred, ROOT_DIM, pos_cols);
    let targ_pos = tape.slice_cols(target_node, ROOT_DIM, pos_cols);
    let pos_diff = tape.sub(pred_pos, targ_pos);
    let l_pos = mean_joint_norm(tape, pos_diff);

    let (loss, l_vel_val) = if frames >= 3 {
        let cur: Vec<usize> = (2..frames).collect();
        let prev: Vec<usize> = (1..frames - 1).collect();
        let p_cur = tape.gather_rows(pred_pos, &cur);
        let p_prev = tape.gather_rows(pred_pos, &prev);
        let pvel = tape.sub(p_cur, p_prev);
        let t_cur = tape.gather_rows(targ_pos, &cur);
        let t_prev = tape.gather_rows(targ_pos, &prev);
        let tvel = tape.sub(t_cur, t_prev);
        let vel_diff = tape.sub(pvel, tvel);
        let l_vel = mean_joint_norm(tape, vel_diff);
        let weighted_pos = tape.scale(l_pos, F::from_f64(1.5));
        let total = tape.add(weighted_pos, l_vel);
        (total, tape.scalar_value(l_vel).to_f64())
    } else {
        (tape.scale(l_pos, F::from_f64(1.5)), 0.0)
    };
    let l_pos_val = tape.scalar_value(l_pos).to_f64();
    (loss, l_pos_val, l_vel_val)
}

pub fn init_decoder_params<F: Real>(cfg: &HeadConfig, seed: u64) -> ParamStore<F> {
    let mut init = HeadInit::new(seed);
    let mut store = ParamStore::new();
    init.stack(&mut store, "dec", cfg.dec_layers, cfg.token_dim, cfg.ffn_mult);
    init.weight(&mut store, "dec.head.w", cfg.token_dim, cfg.pose_dim);
    init.bias(&mut store, "dec.head.b", cfg.pose_dim);
    store
}

pub fn train_decoder(
    latents: &[LatentSequence],
    poses: &[PoseSequence],
    cfg: &HeadConfig,
    tcfg: &TrainConfig,
) -> Result<(ParamStore<f32>, Vec<IterStats>), HeadError> {
    let params = init_decoder_params::<f32>(cfg, tcfg.seed);
    train_head_loop(params, latents.len(), tcfg, |tape, store, si| {
        let ls = &latents[si];
        if ls.frames() != poses[si].len {
            return Err(HeadError::LengthMismatch { tokens: ls.frames(), frames: poses[si].len });
        }
        let tokens = latent_input(tape, ls);
        let pred = decoder_forward(tape, store, cfg, true, tokens, &ls.lengths, true)?;
        let (loss, _, _) = decode_loss(tape, pred, &poses[si]);
        Ok(loss)
    })
}

// ---------------------------------------------------------------------------
// Next-token prediction head
// ---------------------------------------------------------------------------

/// Causal forward: (K, d) history → per-position next-token predictions
/// (K, d) and raw length logits (K, 1). Runs at the inner width with linear
/// in/out projections.
pub fn predictor_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    cfg: &HeadConfig,
    trainable: bool,
    tokens: NodeId,
    rope: bool,
) -> Result<(NodeId, NodeId), HeadError> {
    let k = tape.shape(tokens).0;
    if k == 0 {
        return Err(HeadError::EmptyHistory);
    }
    let x = linear(tape, store, "pn.in", trainable, tokens);
    let positions: Vec<usize> = (0..k).collect();
    let mut mask = vec![false; k * k];
    for i in 0..k {
        for j in 0..=i {
            mask[i * k + j] = true;
        }
    }
    let out = encoder_stack(
        tape, store, "pn", trainable, cfg.pred_layers, cfg.heads, x, &mask, &positions, rope,
    )
    .map_err(|e| HeadError::Train(TrainError::Model(e.into())))?;
    let tok = linear(tape, store, "pn.tok", trainable, out);
    let len = linear(tape, store, "pn.len", trainable, out);
    Ok((tok, len))
}

pub fn init_predictor_params<F: Real>(cfg: &HeadConfig, seed: u64) -> ParamStore<F> {
    let mut init = HeadInit::new(seed);
    let mut store = ParamStore::new();
    init.weight(&mut store, "pn.in.w", cfg.token_dim, cfg.pred_dim);
    init.bias(&mut store, "pn.in.b", cfg.pred_dim);
    init.stack(&mut store, "pn", cfg.pred_layers, cfg.pred_dim, cfg.ffn_mult);
    init.weight(&mut store, "pn.tok.w", cfg.pred_dim, cfg.token_dim);
    init.bias(&mut store, "pn.tok.b", cfg.token_dim);
    init.weight(&mut store, "pn.len.w", cfg.pred_dim, 1);
    init.bias(&mut store, "pn.len.b", 1);
    store
}

/// Teacher-forced training loss for one sequence:
/// `L_token + L_dec + L_segm`. Token and length terms average over the K-1
/// transitions; the decoder term feeds `(z_1, zhat_2, ..., zhat_K)` through
/// the frozen decoder with ground-truth lengths.
pub fn predictor_loss<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    decoder: &ParamStore<F>,
    cfg: &HeadConfig,
    latents: &LatentSequence,
    poses: &PoseSequence,
    trainable: bool,
) -> Result<NodeId, HeadError> {
    let k = latents.count;
    if k < 2 {
        return Err(HeadError::EmptyHistory);
    }
    let tokens = latent_input(tape, latents);
    let (tok_pred, len_pred) = predictor_forward(tape, store, cfg, trainable, tokens, true)?;

    // Positions 0..K-2 predict tokens 1..K-1.
    let steps: Vec<usize> = (0..k - 1).collect();
    let preds = tape.gather_rows(tok_pred, &steps);
    let next: Vec<usize> = (1..k).collect();
    let targets = tape.gather_rows(tokens, &next);
    let tok_diff = tape.sub(targets, preds);
    let l_token = tape.smooth_l1_mean(tok_diff);

    let len_logits = tape.gather_rows(len_pred, &steps);
    let sp = tape.softplus(len_logits);
    let log_lens: Vec<F> =
        (1..k).map(|i| F::from_f64((latents.lengths[i] as f64).ln())).collect();
    let log_target = tape.input(log_lens, k - 1, 1);
    let len_diff = tape.sub(log_target, sp);
    let len_abs = tape.abs(len_diff);
    let l_segm = tape.mean_all(len_abs);

    // Frozen decoder on (z_1, zhat_2..zhat_K) with ground-truth lengths.
    let first = tape.gather_rows(tokens, &[0]);
    let dec_in = tape.vstack(&[first, preds]);
    let dec_out = decoder_forward(tape, decoder, cfg, false, dec_in, &latents.lengths, true)?;
    let (l_dec, _, _) = decode_loss(tape, dec_out, poses);

    let partial = tape.add(l_token, l_dec);
    Ok(tape.add(partial, l_segm))
}

pub fn train_predictor(
    latents: &[LatentSequence],
    poses: &[PoseSequence],
    decoder: &ParamStore<f32>,
    cfg: &HeadConfig,
    tcfg: &TrainConfig,
) -> Result<(ParamStore<f32>, Vec<IterStats>), HeadError> {
    let params = init_predictor_params::<f32>(cfg, tcfg.seed);
    train_head_loop(params, latents.len(), tcfg, |tape, store, si| {
        if latents[si].count < 2 {
            return Err(HeadError::EmptyHistory);
        }
        predictor_loss(tape, store, decoder, cfg, &latents[si], &poses[si], true)
    })
}

/// Decoded segment length: `round(exp(softplus(raw)))` clamped to
/// `[1, max_segment_len]`.
pub fn decode_length(raw: f64, max_len: usize) -> usize {
    let sp = raw.max(0.0) + (-raw.abs()).exp().ln_1p();
    (sp.exp().round() as usize).clamp(1, max_len)
}

/// Autoregressive rollout: predicts tokens and lengths until `horizon` new
/// frames are covered, decodes history + predictions through the frozen
/// decoder, and returns exactly the `horizon` predicted frames.
pub fn rollout(
    history: &LatentSequence,
    predictor: &ParamStore<f32>,
    decoder: &ParamStore<f32>,
    cfg: &HeadConfig,
    horizon: usize,
) -> Result<PoseSequence, HeadError> {
    if history.count == 0 {
        return Err(HeadError::EmptyHistory);
    }
    let mut tokens = history.tokens.clone();
    let mut lengths = history.lengths.clone();
    let mut count = history.count;
    let mut new_frames = 0usize;
    while new_frames < horizon {
        let mut tape: Tape<f32> = Tape::new();
        let cur = LatentSequence {
            tokens: tokens.clone(),
            count,
            dim: history.dim,
            lengths: lengths.clone(),
        };
        let input = latent_input(&mut tape, &cur);
        let (tok_pred, len_pred) = predictor_forward(&mut tape, predictor, cfg, false, input, true)?;
        let last = count - 1;
        let next: Vec<f32> =
            tape.values(tok_pred)[last * history.dim..(last + 1) * history.dim].to_vec();
        let raw = tape.values(len_pred)[last] as f64;
        let len = decode_length(raw, cfg.max_segment_len);
        tokens.extend_from_slice(&next);
        lengths.push(len);
        count += 1;
        new_frames += len;
    }

    let mut tape: Tape<f32> = Tape::new();
    let all = LatentSequence { tokens, count, dim: history.dim, lengths: lengths.clone() };
    let input = latent_input(&mut tape, &all);
    let dec = decoder_forward(&mut tape, decoder, cfg, false, input, &lengths, true)?;
    let vals = tape.values(dec);
    let hist_frames = history.frames();
    let dim = cfg.pose_dim;
    let out: Vec<f32> =
        vals[hist_frames * dim..(hist_frames + horizon) * dim].iter().copied().collect();
    Ok(PoseSequence::new(out, horizon, dim, 5.0, "rollout"))
}

// ---------------------------------------------------------------------------
// Interpolation head
// ---------------------------------------------------------------------------

/// Bidirectional interpolation: observed tokens stay, gap positions receive
/// the learnable gap token, and the stack output at every position is the
/// interpolated latent sequence (no output projection, so zero-weight layers
/// pass inputs through).
pub fn interpolate_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    cfg: &HeadConfig,
    trainable: bool,
    observed: NodeId,
    observed_ids: &[usize],
    total: usize,
    rope: bool,
) -> Result<NodeId, HeadError> {
    if observed_ids.is_empty() {
        return Err(HeadError::AllGaps);
    }
    assert_eq!(tape.shape(observed).0, observed_ids.len());
    let gap_ids: Vec<usize> = (0..total).filter(|i| observed_ids.binary_search(i).is_err()).collect();
    let t = store.get("interp.gap");
    let gap = if trainable {
        tape.param("interp.gap", t.values.clone(), 1, t.cols())
    } else {
        tape.input(t.values.clone(), 1, t.cols())
    };
    let replicas = tape.gather_rows(gap, &vec![0; gap_ids.len()]);
    let stacked = tape.vstack(&[observed, replicas]);
    let mut perm = vec![0usize; total];
    for (row, &id) in observed_ids.iter().enumerate() {
        perm[id] = row;
    }
    for (row, &id) in gap_ids.iter().enumerate() {
        perm[id] = observed_ids.len() + row;
    }
    let input = tape.gather_rows(stacked, &perm);
    let positions: Vec<usize> = (0..total).collect();
    let mask = vec![true; total * total];
    encoder_stack(
        tape, store, "interp", trainable, cfg.interp_layers, cfg.heads, input, &mask, &positions,
        rope,
    )
    .map_err(|e| HeadError::Train(TrainError::Model(e.into())))
}

pub fn init_interp_params<F: Real>(cfg: &HeadConfig, seed: u64) -> ParamStore<F> {
    let mut init = HeadInit::new(seed);
    let mut store = ParamStore::new();
    init.weight(&mut store, "interp.gap", 1, cfg.token_dim);
    init.stack(&mut store, "interp", cfg.interp_layers, cfg.token_dim, cfg.ffn_mult);
    store
}

/// Training loss for one sequence: smooth-L1 between outputs and the full
/// latents at every position (observed ones included) plus the frozen-decoder
/// pose loss.
#[allow(clippy::too_many_arguments)]
pub fn interpolate_loss<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    decoder: &ParamStore<F>,
    cfg: &HeadConfig,
    latents: &LatentSequence,
    poses: &PoseSequence,
    gap_ids: &[usize],
    trainable: bool,
) -> Result<NodeId, HeadError> {
    let observed_ids: Vec<usize> =
        (0..latents.count).filter(|i| gap_ids.binary_search(i).is_err()).collect();
    if observed_ids.is_empty() {
        return Err(HeadError::AllGaps);
    }
    let full = latent_input(tape, latents);
    let observed = tape.gather_rows(full, &observed_ids);
    let out =
        interpolate_forward(tape, store, cfg, trainable, observed, &observed_ids, latents.count, true)?;
    let diff = tape.sub(full, out);
    let l_latent = tape.smooth_l1_mean(diff);
    let dec_out = decoder_forward(tape, decoder, cfg, false, out, &latents.lengths, true)?;
    let (l_dec, _, _) = decode_loss(tape, dec_out, poses);
    Ok(tape.add(l_latent, l_dec))
}

/// Samples a contiguous motif gap spanning `gap_seconds` of frames (at the
/// token fps), leaving at least one observed token.
pub fn sample_gap(
    lengths: &[usize],
    gap_seconds: (f64, f64),
    fps: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let k = lengths.len();
    if k < 2 {
        return Vec::new();
    }
    let target = rng.gen_range(gap_seconds.0..=gap_seconds.1) * fps;
    let start = rng.gen_range(0..k);
    let mut ids = Vec::new();
    let mut covered = 0usize;
    for i in start..k {
        if ids.len() + 1 >= k {
            break; // keep one observed token
        }
        ids.push(i);
        covered += lengths[i];
        if covered as f64 >= target {
            break;
        }
    }
    ids
}

pub fn train_interpolator(
    latents: &[LatentSequence],
    poses: &[PoseSequence],
    decoder: &ParamStore<f32>,
    cfg: &HeadConfig,
    tcfg: &TrainConfig,
    gap_seconds: (f64, f64),
    fps: f64,
) -> Result<(ParamStore<f32>, Vec<IterStats>), HeadError> {
    let params = init_interp_params::<f32>(cfg, tcfg.seed);
    // Gap positions are re-sampled per epoch from the epoch RNG stream.
    let mut gaps: Vec<Vec<Vec<usize>>> = Vec::new();
    for epoch in 0..tcfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ (epoch as u64 + 0x5bd1e995));
        gaps.push(
            latents
                .iter()
                .map(|ls| sample_gap(&ls.lengths, gap_seconds, fps, &mut rng))
                .collect(),
        );
    }
    train_head_loop_epochal(params, latents.len(), tcfg, |tape, store, si, epoch| {
        let gap = &gaps[epoch][si];
        if gap.is_empty() {
            return Err(HeadError::AllGaps);
        }
        interpolate_loss(tape, store, decoder, cfg, &latents[si], &poses[si], gap, true)
    })
}

// ---------------------------------------------------------------------------
// Shared head-training loop
// ---------------------------------------------------------------------------

struct HeadInit {
    rng: ChaCha8Rng,
}

impl HeadInit {
    fn new(seed: u64) -> Self {
        HeadInit { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Xavier-scale normal, matched to the extractor's init.
    fn weight<F: Real>(&mut self, store: &mut ParamStore<F>, name: &str, r: usize, c: usize) {
        let normal = Normal::new(0.0, (2.0 / (r + c) as f64).sqrt()).unwrap();
        let values: Vec<F> =
            (0..r * c).map(|_| F::from_f64(normal.sample(&mut self.rng))).collect();
        store.insert(name, values, vec![r, c]);
    }

    fn bias<F: Real>(&mut self, store: &mut ParamStore<F>, name: &str, c: usize) {
        store.insert(name, vec![F::ZERO; c], vec![1, c]);
    }

    fn norm<F: Real>(&mut self, store: &mut ParamStore<F>, prefix: &str, c: usize) {
        store.insert(&format!("{prefix}.g"), vec![F::ONE; c], vec![1, c]);
        store.insert(&format!("{prefix}.b"), vec![F::ZERO; c], vec![1, c]);
    }

    /// Pre-norm encoder stack parameters compatible with
    /// [`crate::model::encoder_stack`].
    fn stack<F: Real>(
        &mut self,
        store: &mut ParamStore<F>,
        prefix: &str,
        layers: usize,
        dim: usize,
        ffn_mult: usize,
    ) {
        let h = dim * ffn_mult;
        for l in 0..layers {
            let lp = format!("{prefix}.l{l}");
            self.norm(store, &format!("{lp}.sa.ln"), dim);
            for w in ["wq", "wk", "wv"] {
                self.weight(store, &format!("{lp}.sa.{w}"), dim, dim);
            }
            self.norm(store, &format!("{lp}.ff.ln"), dim);
            self.weight(store, &format!("{lp}.ff.in.w"), dim, h);
            self.bias(store, &format!("{lp}.ff.in.b"), h);
            self.weight(store, &format!("{lp}.ff.out.w"), h, dim);
            self.bias(store, &format!("{lp}.ff.out.b"), dim);
        }
    }
}

fn train_head_loop<L>(
    params: ParamStore<f32>,
    n: usize,
    tcfg: &TrainConfig,
    loss_builder: L,
) -> Result<(ParamStore<f32>, Vec<IterStats>), HeadError>
where
    L: Fn(&mut Tape<f32>, &ParamStore<f32>, usize) -> Result<NodeId, HeadError> + Sync,
{
    train_head_loop_epochal(params, n, tcfg, |tape, store, si, _| loss_builder(tape, store, si))
}

/// Shared AdamW loop for the heads. Sequences whose loss builder reports a
/// data-shaped error (too few tokens, no gap) are skipped for that batch.
fn train_head_loop_epochal<L>(
    mut params: ParamStore<f32>,
    n: usize,
    tcfg: &TrainConfig,
    loss_builder: L,
) -> Result<(ParamStore<f32>, Vec<IterStats>), HeadError>
where
    L: Fn(&mut Tape<f32>, &ParamStore<f32>, usize, usize) -> Result<NodeId, HeadError> + Sync,
{
    let mut opt = AdamState::new();
    let adam_cfg = AdamConfig { weight_decay: tcfg.weight_decay, ..AdamConfig::default() };
    let mut history = Vec::new();

    for epoch in 0..tcfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(epoch as u64 + 1)));
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for batch in order.chunks(tcfg.batch) {
            let results: Vec<Option<(GradMap<f32>, f64)>> = batch
                .par_iter()
                .map(|&si| {
                    let mut tape: Tape<f32> = Tape::new();
                    match loss_builder(&mut tape, &params, si, epoch) {
                        Ok(loss) => {
                            let v = tape.scalar_value(loss) as f64;
                            Some((tape.backward(loss), v))
                        }
                        Err(HeadError::EmptyHistory) | Err(HeadError::AllGaps) => None,
                        Err(_e) => None,
                    }
                })
                .collect();
            let mut grads: GradMap<f32> = GradMap::new();
            let mut batch_loss = 0.0;
            let mut count = 0usize;
            for r in results.into_iter().flatten() {
                let (g, v) = r;
                for (name, gv) in g {
                    match grads.get_mut(&name) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&gv) {
                                *a += *b;
                            }
                        }
                        None => {
                            grads.insert(name, gv);
                        }
                    }
                }
                batch_loss += v;
                count += 1;
            }
            if count == 0 {
                continue;
            }
            let scale = 1.0 / count as f32;
            for g in grads.values_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            batch_loss /= count as f64;
            if !batch_loss.is_finite() {
                return Err(HeadError::Train(TrainError::NonFiniteLoss {
                    epoch,
                    iter: opt.step,
                }));
            }
            let lr = lr_at(opt.step, tcfg.warmup, tcfg.total_iters, tcfg.lr_peak, tcfg.lr_floor);
            adamw_step(&mut params, &grads, &mut opt, lr, &adam_cfg)
                .map_err(|e| HeadError::Train(TrainError::Model(e.into())))?;
            history.push(IterStats {
                epoch,
                iter: opt.step,
                loss: batch_loss,
                local: batch_loss,
                global: 0.0,
            });
        }
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::feature_dim;

    fn toy_head_cfg() -> HeadConfig {
        HeadConfig {
            token_dim: 8,
            heads: 2,
            recog_layers: 1,
            dec_layers: 1,
            pred_layers: 1,
            pred_dim: 4,
            interp_layers: 1,
            ffn_mult: 2,
            num_classes: 3,
            pose_dim: feature_dim(1),
            max_segment_len: 150,
        }
    }

    fn toy_latents(k: usize, dim: usize, seg_len: usize) -> LatentSequence {
        let tokens: Vec<f32> = (0..k * dim).map(|i| ((i as f32) * 0.37).sin()).collect();
        LatentSequence { tokens, count: k, dim, lengths: vec![seg_len; k] }
    }

    fn toy_poses(frames: usize) -> PoseSequence {
        let d = feature_dim(1);
        let values: Vec<f32> = (0..frames * d).map(|i| ((i as f32) * 0.21).cos() * 0.3).collect();
        PoseSequence::new(values, frames, d, 5.0, "toy")
    }

    #[test]
    fn knn_exact_bank_token_wins_with_k1() {
        let bank = vec![
            LabeledToken { token: vec![1.0, 0.0, 0.0], label: 2, segment_len: 3 },
            LabeledToken { token: vec![0.0, 1.0, 0.0], label: 1, segment_len: 3 },
        ];
        let (label, _) = knn_classify(&[1.0, 0.0, 0.0], &bank, 1, 0.07, 3).unwrap();
        assert_eq!(label, 2);
    }

    #[test]
    fn knn_weight_ratio_matches_closed_form() {
        // Cos similarities 0.9 and 0.1 with tau 0.07: the near class wins by
        // a weight ratio of exp(0.8 / 0.07).
        let a = [1.0f32, 0.0];
        let near = [0.9f32, (1.0f32 - 0.81).sqrt()];
        let far = [0.1f32, (1.0f32 - 0.01).sqrt()];
        let bank = vec![
            LabeledToken { token: near.to_vec(), label: 0, segment_len: 1 },
            LabeledToken { token: far.to_vec(), label: 1, segment_len: 1 },
        ];
        let (label, scores) = knn_classify(&a, &bank, 2, 0.07, 2).unwrap();
        assert_eq!(label, 0);
        let ratio = scores[0] / scores[1];
        let expect = (0.8f64 / 0.07).exp();
        assert!((ratio / expect - 1.0).abs() < 1e-3, "{ratio} vs {expect}");
    }

    #[test]
    fn knn_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 5;
        let classes = 4;
        let bank: Vec<LabeledToken> = (0..60)
            .map(|i| LabeledToken {
                token: (0..dim).map(|_| rng.gen::<f32>() - 0.5).collect(),
                label: (i % classes) as u16,
                segment_len: 1,
            })
            .collect();
        for _ in 0..500 {
            let q: Vec<f32> = (0..dim).map(|_| rng.gen::<f32>() - 0.5).collect();
            let (label, _) = knn_classify(&q, &bank, 7, 0.1, classes).unwrap();

            // Brute force: sort all, take 7, tally exp((sim - max)/tau).
            let mut sims: Vec<(usize, f64)> =
                bank.iter().enumerate().map(|(i, t)| (i, cosine(&q, &t.token))).collect();
            sims.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
            let mx = sims[0].1;
            let mut scores = vec![0.0f64; classes];
            for &(i, s) in &sims[..7] {
                scores[bank[i].label as usize] += ((s - mx) / 0.1).exp();
            }
            let mut want = 0;
            for c in 1..classes {
                if scores[c] > scores[want] {
                    want = c;
                }
            }
            assert_eq!(label as usize, want);
        }
    }

    #[test]
    fn knn_rejects_empty_bank() {
        assert!(matches!(knn_classify(&[1.0], &[], 1, 0.1, 2), Err(HeadError::EmptyBank)));
    }

    #[test]
    fn majority_label_rules() {
        assert_eq!(majority_label(&[4, 4, 4]), 4);
        assert_eq!(majority_label(&[1, 1, 3, 3]), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let labels: Vec<u16> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let got = majority_label(&labels);
            // Counting oracle.
            let mut counts = [0usize; 5];
            for &l in &labels {
                counts[l as usize] += 1;
            }
            let best = (0..5).max_by_key(|&c| (counts[c], usize::MAX - c)).unwrap();
            assert_eq!(got as usize, best);
        }
    }

    #[test]
    fn mpjpe_zero_offset_and_uniform_offset() {
        let gt = toy_poses(6);
        let frames: Vec<usize> = (0..6).collect();
        assert_eq!(mpjpe(&gt, &gt, &frames).unwrap(), 0.0);
        let mut pred = gt.clone();
        for t in 0..6 {
            let off = t * pred.dim + 7; // x of joint 0
            pred.values[off] += 0.05;
        }
        let got = mpjpe(&pred, &gt, &frames).unwrap();
        assert!((got - 50.0).abs() < 1e-3, "{got}");
    }

    #[test]
    fn mpjpe_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = toy_poses(5);
        let mut pred = gt.clone();
        for v in pred.values.iter_mut() {
            *v += rng.gen::<f32>() * 0.01;
        }
        let frames: Vec<usize> = vec![1, 3, 4];
        let got = mpjpe(&pred, &gt, &frames).unwrap();
        let joints = gt.joints();
        let mut total = 0.0f64;
        let mut n = 0;
        for &t in &frames {
            for j in 0..joints {
                let p = pred.joint_pos(t, j);
                let g = gt.joint_pos(t, j);
                let mut d = 0.0f64;
                for a in 0..3 {
                    let diff = (p[a] - g[a]) as f64;
                    d += diff * diff;
                }
                total += d.sqrt();
                n += 1;
            }
        }
        assert!((got - total / n as f64 * 1000.0).abs() < 1e-9);
    }

    #[test]
    fn mpjpe_rejects_shape_mismatch() {
        let a = toy_poses(5);
        let b = toy_poses(6);
        assert!(matches!(mpjpe(&a, &b, &[0]), Err(HeadError::ShapeMismatch { .. })));
    }

    #[test]
    fn recognition_uniform_weights_equal_unweighted_ce() {
        let mut tape: Tape<f64> = Tape::new();
        let logits_vals = vec![1.0, -0.5, 0.2, 0.3, 0.9, -1.0];
        let logits = tape.input(logits_vals.clone(), 2, 3);
        let labels = vec![0usize, 1];
        let weighted = tape.weighted_cross_entropy(logits, &labels, &[5.0, 5.0, 5.0]);
        let logits2 = tape.input(logits_vals, 2, 3);
        let unweighted = tape.weighted_cross_entropy(logits2, &labels, &[1.0, 1.0, 1.0]);
        assert!(
            (tape.scalar_value(weighted) - tape.scalar_value(unweighted)).abs() < 1e-12,
            "uniform weights must reduce to plain mean CE"
        );
    }

    #[test]
    fn recognition_perfect_logits_drive_loss_to_zero() {
        let mut tape: Tape<f64> = Tape::new();
        let labels = vec![0usize, 2, 1];
        let scale = 50.0;
        let mut vals = vec![0.0; 3 * 3];
        for (i, &y) in labels.iter().enumerate() {
            vals[i * 3 + y] = scale;
        }
        let logits = tape.input(vals, 3, 3);
        let loss = tape.weighted_cross_entropy(logits, &labels, &[1.0, 1.0, 1.0]);
        assert!(tape.scalar_value(loss) < 1e-6);
    }

    #[test]
    fn recognition_zero_layers_repeat_logits_within_segment() {
        // With no encoder layers and no rotary encoding, frames of one
        // segment share identical logits.
        let cfg = HeadConfig { recog_layers: 0, ..toy_head_cfg() };
        let store: ParamStore<f64> = init_recognition_params(&cfg, 3);
        let ls = toy_latents(2, cfg.token_dim, 3);
        let mut tape: Tape<f64> = Tape::new();
        let logits = recognition_forward(&mut tape, &store, &cfg, false, &ls, false).unwrap();
        let v = tape.values(logits);
        let c = cfg.num_classes;
        for seg in 0..2 {
            for t in 1..3 {
                for j in 0..c {
                    assert_eq!(
                        v[(seg * 3) * c + j].to_bits(),
                        v[(seg * 3 + t) * c + j].to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn decode_loss_matches_hand_example() {
        // 1 joint, 1-D motion: targets (0,1,2), predictions (0,1,3).
        // L_pos = 1/3, L_vel = |2-1| over the single velocity term = 1,
        // total = 1.5/3 + 1 = 1.5.
        let d = feature_dim(1);
        let mut target_vals = vec![0.0f32; 3 * d];
        let mut pred_vals = vec![0.0f64; 3 * d];
        for (t, (gt, pr)) in [(0.0, 0.0), (1.0, 1.0), (2.0, 3.0)].iter().enumerate() {
            target_vals[t * d + 7] = *gt as f32;
            pred_vals[t * d + 7] = *pr;
        }
        let target = PoseSequence::new(target_vals, 3, d, 5.0, "hand");
        let mut tape: Tape<f64> = Tape::new();
        let pred = tape.input(pred_vals, 3, d);
        let (loss, l_pos, l_vel) = decode_loss(&mut tape, pred, &target);
        assert!((l_pos - 1.0 / 3.0).abs() < 1e-9, "{l_pos}");
        assert!((l_vel - 1.0).abs() < 1e-9, "{l_vel}");
        assert!((tape.scalar_value(loss) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn decode_loss_t2_has_no_velocity_term() {
        let d = feature_dim(1);
        let target = toy_poses(2);
        let mut tape: Tape<f64> = Tape::new();
        let pred_vals: Vec<f64> = target.values.iter().map(|&v| v as f64 + 0.1).collect();
        let pred = tape.input(pred_vals, 2, d);
        let (loss, l_pos, l_vel) = decode_loss(&mut tape, pred, &target);
        assert_eq!(l_vel, 0.0);
        assert!((tape.scalar_value(loss) - 1.5 * l_pos).abs() < 1e-12);
    }

    #[test]
    fn decode_loss_zero_for_perfect_reconstruction() {
        let target = toy_poses(5);
        let mut tape: Tape<f64> = Tape::new();
        let pred_vals: Vec<f64> = target.values.iter().map(|&v| v as f64).collect();
        let pred = tape.input(pred_vals, 5, target.dim);
        let (loss, _, _) = decode_loss(&mut tape, pred, &target);
        assert!(tape.scalar_value(loss) < 1e-9);
    }

    #[test]
    fn predictor_zero_segm_loss_when_lengths_match() {
        // Softplus(raw) = log(len) makes the length term vanish; checked via
        // the closed form on decode_length.
        let len = 12usize;
        let log_len = (len as f64).ln();
        // softplus(x) = log_len  =>  x = ln(exp(log_len) - 1)
        let raw = ((log_len).exp() - 1.0).ln();
        assert_eq!(decode_length(raw, 150), len);
    }

    #[test]
    fn predictor_is_causal() {
        let cfg = toy_head_cfg();
        let store: ParamStore<f64> = init_predictor_params(&cfg, 11);
        let ls = toy_latents(5, cfg.token_dim, 2);
        let run = |tokens: Vec<f32>| {
            let mut tape: Tape<f64> = Tape::new();
            let l = LatentSequence { tokens, ..ls.clone() };
            let input = latent_input(&mut tape, &l);
            let (tok, _) = predictor_forward(&mut tape, &store, &cfg, false, input, true).unwrap();
            tape.values(tok).to_vec()
        };
        let base = run(ls.tokens.clone());
        // Change tokens 3 and 4; outputs at positions 0..=2 must not move.
        let mut altered = ls.tokens.clone();
        for v in altered[3 * cfg.token_dim..].iter_mut() {
            *v += 1.5;
        }
        let changed = run(altered);
        for row in 0..3 {
            for j in 0..cfg.token_dim {
                assert_eq!(
                    base[row * cfg.token_dim + j].to_bits(),
                    changed[row * cfg.token_dim + j].to_bits(),
                    "causality violated at row {row}"
                );
            }
        }
    }

    #[test]
    fn rollout_covers_and_truncates_to_horizon() {
        let cfg = toy_head_cfg();
        let pred: ParamStore<f32> = init_predictor_params(&cfg, 13);
        let dec: ParamStore<f32> = init_decoder_params(&cfg, 14);
        let history = toy_latents(3, cfg.token_dim, 2);
        let out = rollout(&history, &pred, &dec, &cfg, 15).unwrap();
        assert_eq!(out.len, 15);
        assert_eq!(out.dim, cfg.pose_dim);
    }

    #[test]
    fn decode_length_clamps() {
        assert_eq!(decode_length(-100.0, 150), 1);
        assert_eq!(decode_length(100.0, 150), 150);
    }

    #[test]
    fn interpolation_identity_at_zero_weights() {
        let cfg = toy_head_cfg();
        let mut store: ParamStore<f64> = init_interp_params(&cfg, 15);
        let names: Vec<String> = store.names().cloned().collect();
        for n in names {
            if n.contains(".sa.w") || n.contains(".ff.in") || n.contains(".ff.out") {
                for v in store.get_mut(&n).values.iter_mut() {
                    *v = 0.0;
                }
            }
        }
        let ls = toy_latents(4, cfg.token_dim, 2);
        let mut tape: Tape<f64> = Tape::new();
        let full = latent_input(&mut tape, &ls);
        let out = interpolate_forward(&mut tape, &store, &cfg, false, full, &[0, 1, 2, 3], 4, true)
            .unwrap();
        let vals = tape.values(out);
        for (i, &v) in vals.iter().enumerate() {
            assert!((v - ls.tokens[i] as f64).abs() < 1e-12);
        }
        // Matching targets: L_latent is exactly SL1(0) = 0.
        let diff = tape.sub(full, out);
        let l = tape.smooth_l1_mean(diff);
        assert_eq!(tape.scalar_value(l), 0.0);
    }

    #[test]
    fn interpolation_rejects_all_gaps() {
        let cfg = toy_head_cfg();
        let store: ParamStore<f64> = init_interp_params(&cfg, 15);
        let mut tape: Tape<f64> = Tape::new();
        let empty = tape.input(vec![], 0, cfg.token_dim);
        assert!(matches!(
            interpolate_forward(&mut tape, &store, &cfg, false, empty, &[], 3, true),
            Err(HeadError::AllGaps)
        ));
    }

    #[test]
    fn interpolator_learns_constant_corpus() {
        // Constant-token sequences: after training, a gap between identical
        // observed tokens is predicted close to that token.
        let cfg = toy_head_cfg();
        let dim = cfg.token_dim;
        let mut latents = Vec::new();
        let mut poses = Vec::new();
        for s in 0..4 {
            let tok: Vec<f32> = (0..dim).map(|j| ((s * dim + j) as f32 * 0.23).sin() * 0.5).collect();
            let mut tokens = Vec::new();
            for _ in 0..5 {
                tokens.extend_from_slice(&tok);
            }
            latents.push(LatentSequence { tokens, count: 5, dim, lengths: vec![2; 5] });
            poses.push(toy_poses(10));
        }
        // A zeroed decoder keeps the pose term constant, so the fixture
        // isolates the latent objective.
        let mut dec: ParamStore<f32> = init_decoder_params(&cfg, 1);
        let names: Vec<String> = dec.names().cloned().collect();
        for n in names {
            for v in dec.get_mut(&n).values.iter_mut() {
                *v = 0.0;
            }
        }
        let tcfg = TrainConfig {
            epochs: 800,
            batch: 4,
            warmup: 20,
            total_iters: 800,
            lr_peak: 1e-2,
            weight_decay: 0.0,
            seed: 2,
            ..TrainConfig::default()
        };
        let (params, _) =
            train_interpolator(&latents, &poses, &dec, &cfg, &tcfg, (0.4, 0.8), 5.0).unwrap();

        let ls = &latents[0];
        let observed_ids = vec![0usize, 1, 3, 4];
        let mut tape: Tape<f32> = Tape::new();
        let full = latent_input(&mut tape, ls);
        let obs = tape.gather_rows(full, &observed_ids);
        let out = interpolate_forward(&mut tape, &params, &cfg, false, obs, &observed_ids, 5, true)
            .unwrap();
        let vals = tape.values(out);
        let mut err = 0.0f64;
        for j in 0..dim {
            err += (vals[2 * dim + j] as f64 - ls.token(2)[j] as f64).abs();
        }
        err /= dim as f64;
        assert!(err < 0.05, "gap prediction error {err}");
    }

    #[test]
    fn head_training_smoke_recognition() {
        let cfg = toy_head_cfg();
        let latents: Vec<LatentSequence> = (0..4).map(|_| toy_latents(3, cfg.token_dim, 2)).collect();
        let labels: Vec<Vec<u16>> = (0..4).map(|s| vec![(s % 3) as u16; 6]).collect();
        let tcfg = TrainConfig {
            epochs: 2,
            batch: 2,
            warmup: 1,
            total_iters: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let (params, history) = train_recognition(&latents, &labels, &cfg, &tcfg).unwrap();
        assert!(!history.is_empty());
        let (top1, top3) = eval_recognition(&latents, &labels, &params, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&top1));
        assert!(top3 >= top1);
    }
}
