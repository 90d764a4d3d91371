//! The two-step pretraining procedure.
//!
//! Step one trains the first stage alone: atom segments are masked, the
//! visible atoms are encoded, and the predictor regresses the masked atom
//! latents against targets from the EMA extractor. Step two trains both
//! stages end to end: motif segments are masked (hierarchically masking
//! their atoms), and the predictor regresses masked motif latents.
//!
//! The loss decomposes each latent into the masked-set mean (global) and the
//! per-segment deviation (local); the global term is dynamically weighted by
//! `alpha * sg(local_k / global)` per segment, so the local part dominates.
//! Targets are detached; the EMA target extractor updates after every
//! optimizer step.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{
    adamw_step, ema_update, lr_at, read_checkpoint, write_checkpoint, AdamConfig, AdamState,
    GradMap, NodeId, ParamStore, Real, Tape,
};
use crate::model::{
    extract, extractor_param_names, init_params, motif_atom_ranges, predict_masked,
    stage1_tokens, target_tokens, MaskSpec, ModelConfig, ModelError,
};
use crate::pose::{atomic_write, PoseSequence};
use crate::segment::SegmentMap;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mask_ratio: f64,
    pub ema_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    pub warmup: u64,
    /// Cosine horizon in iterations.
    pub total_iters: u64,
    pub weight_decay: f64,
    /// Global-loss weight coefficient.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Paper-scale schedule; the desk preset shrinks epochs and horizons.
        TrainConfig {
            mask_ratio: 0.5,
            ema_decay: 0.996,
            epochs: 400,
            batch: 64,
            lr_peak: 1e-3,
            lr_floor: 1e-6,
            warmup: 2000,
            total_iters: 100_000,
            weight_decay: 0.1,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            batch: 8,
            warmup: 100,
            total_iters: 1250,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug)]
pub enum TrainError {
    /// A sequence with one segment cannot be masked and stay visible.
    SingleSegment,
    /// The decomposed loss needs at least two masked segments.
    MaskTooSmall { masked: usize },
    NonFiniteLoss { epoch: usize, iter: u64 },
    Model(ModelError),
    Io(std::io::Error),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::SingleSegment => write!(f, "sequence has a single segment"),
            TrainError::MaskTooSmall { masked } => {
                write!(f, "decomposed loss needs >= 2 masked segments, got {masked}")
            }
            TrainError::NonFiniteLoss { epoch, iter } => {
                write!(f, "non-finite loss at epoch {epoch}, iteration {iter}")
            }
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

/// Uniformly samples `ceil(ratio * k)` segment ordinals without replacement,
/// clamped to `[1, k-1]` so at least one segment stays visible.
pub fn sample_mask(k: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, TrainError> {
    if k < 2 {
        return Err(TrainError::SingleSegment);
    }
    let m = ((ratio * k as f64).ceil() as usize).clamp(1, k - 1);
    let mut pool: Vec<usize> = (0..k).collect();
    for i in 0..m {
        let j = rng.gen_range(i..k);
        pool.swap(i, j);
    }
    let mut picked: Vec<usize> = pool[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Per-call loss breakdown.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub global: f64,
    pub locals: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub alpha: f64,
}

/// Builds the decomposed loss on the tape: predictions and (detached) targets
/// are split into masked-set means and per-segment deviations;
/// `L = (1/|K|) sum_k [ L^l_k + alpha * sg(L^l_k / L^g) * L^g ]` with each
/// term a mean smooth-L1. Returns the scalar loss node and the report.
pub fn decomposed_loss<F: Real>(
    tape: &mut Tape<F>,
    pred: NodeId,
    target_values: &[F],
    alpha: f64,
) -> Result<(NodeId, LossReport), TrainError> {
    decomposed_loss_impl(tape, pred, target_values, alpha, None)
}

/// Same loss with the per-segment weights pinned to externally supplied
/// values instead of the stop-gradient ratio. Finite-difference checks use
/// this to keep the sg inputs frozen across perturbed evaluations.
pub fn decomposed_loss_fixed_lambdas<F: Real>(
    tape: &mut Tape<F>,
    pred: NodeId,
    target_values: &[F],
    alpha: f64,
    lambdas: &[f64],
) -> Result<(NodeId, LossReport), TrainError> {
    decomposed_loss_impl(tape, pred, target_values, alpha, Some(lambdas))
}

fn decomposed_loss_impl<F: Real>(
    tape: &mut Tape<F>,
    pred: NodeId,
    target_values: &[F],
    alpha: f64,
    fixed_lambdas: Option<&[f64]>,
) -> Result<(NodeId, LossReport), TrainError> {
    let (k, d) = tape.shape(pred);
    if k < 2 {
        return Err(TrainError::MaskTooSmall { masked: k });
    }
    assert_eq!(target_values.len(), k * d, "target shape mismatch");
    let target = tape.input(target_values.to_vec(), k, d);

    let zeros = vec![0usize; k];
    let pred_g = tape.mean_rows(pred);
    let targ_g = tape.mean_rows(target);
    let pred_g_rep = tape.gather_rows(pred_g, &zeros);
    let targ_g_rep = tape.gather_rows(targ_g, &zeros);
    let pred_dev = tape.sub(pred, pred_g_rep);
    let targ_dev = tape.sub(target, targ_g_rep);

    let gdiff = tape.sub(pred_g, targ_g);
    let l_g = tape.smooth_l1_mean(gdiff);
    let l_g_val = tape.scalar_value(l_g).to_f64();

    let mut locals = Vec::with_capacity(k);
    let mut lambdas = Vec::with_capacity(k);
    let mut terms: Vec<NodeId> = Vec::with_capacity(k);
    for i in 0..k {
        let p_row = [i];
        let prow = tape.gather_rows(pred_dev, &p_row);
        let trow = tape.gather_rows(targ_dev, &p_row);
        let diff = tape.sub(prow, trow);
        let l_k = tape.smooth_l1_mean(diff);
        let l_k_val = tape.scalar_value(l_k).to_f64();
        let lambda = match fixed_lambdas {
            Some(ls) => ls[i],
            None => l_k_val / l_g_val.max(1e-8),
        };
        locals.push(l_k_val);
        lambdas.push(lambda);
        // lambda is stop-gradient: it scales the global node as a constant.
        let weighted_g = tape.scale(l_g, F::from_f64(alpha * lambda));
        terms.push(tape.add(l_k, weighted_g));
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = tape.add(sum, t);
    }
    let total = tape.scale(sum, F::from_f64(1.0 / k as f64));
    let report = LossReport {
        total: tape.scalar_value(total).to_f64(),
        global: l_g_val,
        locals,
        lambdas,
        alpha,
    };
    Ok((total, report))
}

/// One logged iteration.
#[derive(Debug, Clone)]
pub struct IterStats {
    pub epoch: usize,
    pub iter: u64,
    pub loss: f64,
    pub local: f64,
    pub global: f64,
}

/// Final state of a pretraining run.
pub struct TrainResult<F> {
    /// Online parameters: extractor, predictor, mask tokens.
    pub params: ParamStore<F>,
    /// EMA copies of the extractor parameters.
    pub ema: ParamStore<F>,
    pub opt: AdamState<F>,
    pub history: Vec<IterStats>,
    /// Mean loss per epoch.
    pub epoch_mean: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Stage1,
    EndToEnd,
}

/// Pretrains stage 1: atom-level masking with the atom map doubling as the
/// motif map.
pub fn pretrain_stage1<F: Real>(
    corpus: &[PoseSequence],
    atom_maps: &[SegmentMap],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<ResumeState<F>>,
    out_dir: Option<&Path>,
) -> Result<TrainResult<F>, TrainError> {
    pretrain(Mode::Stage1, corpus, atom_maps, atom_maps, model_cfg, cfg, init, out_dir)
}

/// Trains both stages end to end from a stage-1 state: motif-level masking
/// with hierarchical atom masking.
pub fn pretrain_end_to_end<F: Real>(
    corpus: &[PoseSequence],
    atom_maps: &[SegmentMap],
    motif_maps: &[SegmentMap],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<ResumeState<F>>,
    out_dir: Option<&Path>,
) -> Result<TrainResult<F>, TrainError> {
    pretrain(Mode::EndToEnd, corpus, atom_maps, motif_maps, model_cfg, cfg, init, out_dir)
}

/// Parameters plus optimizer state to resume from, and the epoch to start at.
pub struct ResumeState<F> {
    pub params: ParamStore<F>,
    pub ema: Option<ParamStore<F>>,
    pub opt: Option<AdamState<F>>,
    pub start_epoch: usize,
}

impl<F: Real> ResumeState<F> {
    /// Fresh phase from existing parameters (new optimizer, EMA re-seeded).
    pub fn from_params(params: ParamStore<F>) -> Self {
        ResumeState { params, ema: None, opt: None, start_epoch: 0 }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    // Distinct stream per epoch so a resumed run replays the identical
    // shuffles and masks.
    ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(epoch as u64 + 1)))
}

#[allow(clippy::too_many_arguments)]
fn pretrain<F: Real>(
    mode: Mode,
    corpus: &[PoseSequence],
    atom_maps: &[SegmentMap],
    motif_maps: &[SegmentMap],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<ResumeState<F>>,
    out_dir: Option<&Path>,
) -> Result<TrainResult<F>, TrainError> {
    assert_eq!(corpus.len(), atom_maps.len());
    assert_eq!(corpus.len(), motif_maps.len());

    let (mut params, ema_init, opt_init, start_epoch) = match init {
        Some(r) => (r.params, r.ema, r.opt, r.start_epoch),
        None => (init_params::<F>(model_cfg, cfg.seed), None, None, 0),
    };
    let mut ema = ema_init.unwrap_or_else(|| {
        let mut t = ParamStore::new();
        for name in extractor_param_names(&params) {
            let p = params.get(&name);
            t.insert(&name, p.values.clone(), p.shape.clone());
        }
        t
    });
    let mut opt = opt_init.unwrap_or_else(AdamState::new);
    let adam_cfg = AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() };

    let mut history: Vec<IterStats> = Vec::new();
    let mut epoch_mean: Vec<f64> = Vec::new();

    for epoch in start_epoch..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut epoch_losses: Vec<f64> = Vec::new();
        for batch in order.chunks(cfg.batch) {
            // Masks are sampled sequentially (determinism); the per-sequence
            // forward/backward passes then run in parallel.
            let mut tasks: Vec<(usize, Vec<usize>)> = Vec::new();
            for &si in batch {
                let k = match mode {
                    Mode::Stage1 => atom_maps[si].count(),
                    Mode::EndToEnd => motif_maps[si].count(),
                };
                if k < 2 {
                    continue; // cannot mask and keep something visible
                }
                let picked = sample_mask(k, cfg.mask_ratio, &mut rng)?;
                if picked.len() < 2 {
                    continue; // decomposed loss needs two masked segments
                }
                tasks.push((si, picked));
            }
            if tasks.is_empty() {
                continue;
            }

            let results: Vec<Result<(GradMap<F>, LossReport), TrainError>> = tasks
                .par_iter()
                .map(|(si, picked)| {
                    step_one_sequence(
                        mode,
                        &corpus[*si],
                        &atom_maps[*si],
                        &motif_maps[*si],
                        picked,
                        &params,
                        &ema,
                        model_cfg,
                        cfg.alpha,
                    )
                })
                .collect();

            let mut grads: GradMap<F> = GradMap::new();
            let mut batch_loss = 0.0;
            let mut batch_local = 0.0;
            let mut batch_global = 0.0;
            let n = results.len();
            for r in results {
                let (g, report) = r?;
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
                batch_loss += report.total;
                batch_local += report.locals.iter().sum::<f64>() / report.locals.len() as f64;
                batch_global += report.global;
            }
            let scale = F::from_f64(1.0 / n as f64);
            for g in grads.values_mut() {
                for v in g.iter_mut() {
                    *v = *v * scale;
                }
            }
            batch_loss /= n as f64;
            batch_local /= n as f64;
            batch_global /= n as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, iter: opt.step });
            }

            let lr = lr_at(opt.step, cfg.warmup, cfg.total_iters, cfg.lr_peak, cfg.lr_floor);
            adamw_step(&mut params, &grads, &mut opt, lr, &adam_cfg)
                .map_err(|e| TrainError::Model(ModelError::Autodiff(e)))?;
            ema_update(&mut ema, &params, cfg.ema_decay);

            history.push(IterStats {
                epoch,
                iter: opt.step,
                loss: batch_loss,
                local: batch_local,
                global: batch_global,
            });
            epoch_losses.push(batch_loss);
        }

        let mean = if epoch_losses.is_empty() {
            f64::NAN
        } else {
            epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64
        };
        epoch_mean.push(mean);
        if std::env::var_os("MOTIF_PROGRESS").is_some() {
            eprintln!("epoch {epoch}: mean loss {mean:.6e} (step {})", opt.step);
        }

        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            let ckpt = checkpoint_store(&params, &ema, &opt, epoch + 1);
            write_checkpoint(&ckpt, &dir.join("checkpoint.mckp"))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            write_history_csv(&history, &dir.join("loss_history.csv"))?;
        }
    }

    Ok(TrainResult { params, ema, opt, history, epoch_mean })
}

/// Forward + backward for one sequence; returns parameter gradients and the
/// loss report.
#[allow(clippy::too_many_arguments)]
fn step_one_sequence<F: Real>(
    mode: Mode,
    poses: &PoseSequence,
    atom_map: &SegmentMap,
    motif_map: &SegmentMap,
    picked: &[usize],
    params: &ParamStore<F>,
    ema: &ParamStore<F>,
    model_cfg: &ModelConfig,
    alpha: f64,
) -> Result<(GradMap<F>, LossReport), TrainError> {
    let mut tape: Tape<F> = Tape::new();
    let (pred, target_rows) = match mode {
        Mode::Stage1 => {
            let k = atom_map.count();
            let visible: Vec<usize> =
                (0..k).filter(|a| picked.binary_search(a).is_err()).collect();
            let s1 = stage1_tokens(&mut tape, params, true, model_cfg, poses, atom_map, picked, true)?;
            let pred = predict_masked(
                &mut tape, params, true, model_cfg, s1.tokens, &visible, k, picked, "s1.mask", true,
            )?;
            let full = target_tokens(ema, model_cfg, poses, atom_map, motif_map, false)?;
            (pred, gather_target_rows(&full, model_cfg.dim, picked))
        }
        Mode::EndToEnd => {
            let motif_atoms = motif_atom_ranges(atom_map, motif_map)?;
            let spec = MaskSpec::from_motifs(picked, &motif_atoms);
            let k = motif_map.count();
            let visible: Vec<usize> =
                (0..k).filter(|m| picked.binary_search(m).is_err()).collect();
            let ex = extract(
                &mut tape, params, true, model_cfg, poses, atom_map, motif_map, Some(&spec), true,
            )?;
            let pred = predict_masked(
                &mut tape, params, true, model_cfg, ex.motif_tokens, &visible, k, picked,
                "s2.mask", true,
            )?;
            let full = target_tokens(ema, model_cfg, poses, atom_map, motif_map, true)?;
            (pred, gather_target_rows(&full, model_cfg.dim, picked))
        }
    };
    let (loss, report) = decomposed_loss(&mut tape, pred, &target_rows, alpha)?;
    let grads = tape.backward(loss);
    Ok((grads, report))
}

fn gather_target_rows<F: Real>(full: &[F], dim: usize, rows: &[usize]) -> Vec<F> {
    let mut out = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        out.extend_from_slice(&full[r * dim..(r + 1) * dim]);
    }
    out
}

/// Packs online params, EMA params, optimizer moments, and the epoch counter
/// into one named-tensor store for checkpointing.
pub fn checkpoint_store<F: Real>(
    params: &ParamStore<F>,
    ema: &ParamStore<F>,
    opt: &AdamState<F>,
    epoch: usize,
) -> ParamStore<F> {
    let mut out = ParamStore::new();
    for (name, t) in params.iter() {
        out.insert(name, t.values.clone(), t.shape.clone());
    }
    for (name, t) in ema.iter() {
        out.insert(&format!("ema.{name}"), t.values.clone(), t.shape.clone());
    }
    for (name, v) in &opt.m {
        out.insert(&format!("opt.m.{name}"), v.clone(), vec![v.len()]);
    }
    for (name, v) in &opt.v {
        out.insert(&format!("opt.v.{name}"), v.clone(), vec![v.len()]);
    }
    out.insert(
        "meta",
        vec![F::from_usize(opt.step as usize), F::from_usize(epoch)],
        vec![2],
    );
    out
}

/// Splits a checkpoint back into training state.
pub fn load_train_checkpoint<F: Real>(path: &Path) -> Result<ResumeState<F>, TrainError> {
    let all = read_checkpoint::<F>(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut params = ParamStore::new();
    let mut ema = ParamStore::new();
    let mut opt = AdamState::new();
    let mut start_epoch = 0usize;
    for (name, t) in all.iter() {
        if let Some(rest) = name.strip_prefix("ema.") {
            ema.insert(rest, t.values.clone(), t.shape.clone());
        } else if let Some(rest) = name.strip_prefix("opt.m.") {
            opt.m.insert(rest.to_string(), t.values.clone());
        } else if let Some(rest) = name.strip_prefix("opt.v.") {
            opt.v.insert(rest.to_string(), t.values.clone());
        } else if name == "meta" {
            opt.step = t.values[0].to_f64() as u64;
            start_epoch = t.values[1].to_f64() as usize;
        } else {
            params.insert(name, t.values.clone(), t.shape.clone());
        }
    }
    Ok(ResumeState { params, ema: Some(ema), opt: Some(opt), start_epoch })
}

/// Loss history as CSV: `epoch,iter,loss,loss_local,loss_global`.
pub fn write_history_csv(history: &[IterStats], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("epoch,iter,loss,loss_local,loss_global\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{:.9e},{:.9e},{:.9e}\n",
            h.epoch, h.iter, h.loss, h.local, h.global
        ));
    }
    atomic_write(path, out.as_bytes())
}
