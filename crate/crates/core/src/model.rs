//! The nested feature extractor and the masked-token predictor.
//!
//! Each stage is an Encoder plus a LatentFormer. The Encoder consolidates the
//! tokens of every segment into one latent token: segment-wise self-attention
//! over the input stream (frames may attend only within their own segment),
//! then cross-attention with the latent token as query over its segment's
//! tokens; the latent is initialized by element-wise max-pooling. The
//! LatentFormer runs full self-attention over the latent tokens. Stage 1
//! consumes pose frames under the atom map; stage 2 consumes stage-1 atom
//! latents under the motif map. A 3-layer predictor fills masked positions
//! with a learnable per-stage mask token and predicts their latents.
//!
//! Rotary positions: frame indices in the stage-1 Encoder, atom ordinals in
//! the stage-2 Encoder, segment ordinals in LatentFormers and the predictor.
//! Cross-attention rotates keys only.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{attention, AttentionSpec, AutodiffError, NodeId, ParamStore, Real, Tape};
use crate::pose::PoseSequence;
use crate::segment::SegmentMap;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Pose feature dimension D.
    pub input_dim: usize,
    /// Token dimension.
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub lf_layers: usize,
    pub pred_layers: usize,
    /// FFN hidden multiple.
    pub ffn_mult: usize,
}

impl ModelConfig {
    /// Paper-scale configuration.
    pub fn full(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            dim: 256,
            heads: 4,
            enc_layers: 4,
            lf_layers: 4,
            pred_layers: 3,
            ffn_mult: 4,
        }
    }

    /// Desk-scale preset: same depths, narrow width.
    pub fn desk(input_dim: usize) -> Self {
        ModelConfig { dim: 32, heads: 2, ..Self::full(input_dim) }
    }
}

#[derive(Debug)]
pub enum ModelError {
    /// Motif boundaries do not align with atom boundaries.
    MapMismatch { detail: String },
    EmptyMaskSet,
    Autodiff(AutodiffError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::MapMismatch { detail } => write!(f, "segment map mismatch: {detail}"),
            ModelError::EmptyMaskSet => write!(f, "mask set is empty"),
            ModelError::Autodiff(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<AutodiffError> for ModelError {
    fn from(e: AutodiffError) -> Self {
        ModelError::Autodiff(e)
    }
}

/// Masked motif segments plus the atom segments they contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    /// Masked motif ordinals, sorted.
    pub motifs: Vec<usize>,
    /// Masked atom ordinals, sorted — exactly the atoms inside masked motifs.
    pub atoms: Vec<usize>,
}

impl MaskSpec {
    /// Derives the hierarchical atom mask from masked motifs.
    pub fn from_motifs(masked_motifs: &[usize], motif_atoms: &[(usize, usize)]) -> MaskSpec {
        let mut motifs = masked_motifs.to_vec();
        motifs.sort_unstable();
        motifs.dedup();
        let mut atoms = Vec::new();
        for &m in &motifs {
            let (a0, a1) = motif_atoms[m];
            atoms.extend(a0..a1);
        }
        MaskSpec { motifs, atoms }
    }

    pub fn masks_motif(&self, m: usize) -> bool {
        self.motifs.binary_search(&m).is_ok()
    }

    pub fn masks_atom(&self, a: usize) -> bool {
        self.atoms.binary_search(&a).is_ok()
    }
}

/// For each motif, the half-open range of atom ordinals it spans. Fails when
/// motif boundaries split an atom.
pub fn motif_atom_ranges(
    atom_map: &SegmentMap,
    motif_map: &SegmentMap,
) -> Result<Vec<(usize, usize)>, ModelError> {
    if atom_map.len != motif_map.len {
        return Err(ModelError::MapMismatch {
            detail: format!("frame counts differ: {} vs {}", atom_map.len, motif_map.len),
        });
    }
    let mut out = Vec::with_capacity(motif_map.count());
    let mut atom = 0usize;
    for &(ms, me) in &motif_map.segments {
        if atom >= atom_map.count() || atom_map.segments[atom].0 != ms {
            return Err(ModelError::MapMismatch {
                detail: format!("motif start {ms} is not an atom boundary"),
            });
        }
        let a0 = atom;
        while atom < atom_map.count() && atom_map.segments[atom].1 <= me {
            atom += 1;
        }
        if atom_map.segments[atom - 1].1 != me {
            return Err(ModelError::MapMismatch {
                detail: format!("motif end {me} is not an atom boundary"),
            });
        }
        out.push((a0, atom));
    }
    Ok(out)
}

/// Loads a stored tensor onto the tape, as a parameter leaf when `trainable`
/// or as a constant otherwise (frozen weights still pass gradients through).
fn fetch<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    name: &str,
    trainable: bool,
) -> NodeId {
    let t = store.get(name);
    let (rows, cols) = (t.rows(), t.cols());
    if trainable {
        tape.param(name, t.values.clone(), rows, cols)
    } else {
        tape.input(t.values.clone(), rows, cols)
    }
}

fn linear<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    prefix: &str,
    trainable: bool,
    x: NodeId,
) -> NodeId {
    let w = fetch(tape, store, &format!("{prefix}.w"), trainable);
    let b = fetch(tape, store, &format!("{prefix}.b"), trainable);
    let y = tape.matmul(x, w);
    tape.add_row_broadcast(y, b)
}

fn ffn<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    prefix: &str,
    trainable: bool,
    x: NodeId,
) -> NodeId {
    let h = linear(tape, store, &format!("{prefix}.in"), trainable, x);
    let h = tape.gelu(h);
    linear(tape, store, &format!("{prefix}.out"), trainable, h)
}

fn layer_norm_p<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    prefix: &str,
    trainable: bool,
    x: NodeId,
) -> NodeId {
    let g = fetch(tape, store, &format!("{prefix}.g"), trainable);
    let b = fetch(tape, store, &format!("{prefix}.b"), trainable);
    tape.layer_norm(x, g, b)
}

struct AttnParams {
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
}

fn attn_params<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    prefix: &str,
    trainable: bool,
) -> AttnParams {
    AttnParams {
        wq: fetch(tape, store, &format!("{prefix}.wq"), trainable),
        wk: fetch(tape, store, &format!("{prefix}.wk"), trainable),
        wv: fetch(tape, store, &format!("{prefix}.wv"), trainable),
    }
}

/// Pre-norm residual self-attention stack. `mask` is row-major n×n; `rope`
/// positions apply to both queries and keys.
#[allow(clippy::too_many_arguments)]
pub fn encoder_stack<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    prefix: &str,
    trainable: bool,
    layers: usize,
    heads: usize,
    mut x: NodeId,
    mask: &[bool],
    positions: &[usize],
    rope: bool,
) -> Result<NodeId, AutodiffError> {
    let pos = if rope { Some(positions) } else { None };
    for l in 0..layers {
        let lp = format!("{prefix}.l{l}");
        let normed = layer_norm_p(tape, store, &format!("{lp}.sa.ln"), trainable, x);
        let ap = attn_params(tape, store, &format!("{lp}.sa"), trainable);
        let att = attention(
            tape,
            &AttentionSpec {
                q: normed,
                k: normed,
                v: normed,
                wq: ap.wq,
                wk: ap.wk,
                wv: ap.wv,
                mask,
                heads,
                pos_q: pos,
                pos_k: pos,
            },
        )?;
        x = tape.add(x, att);
        let normed = layer_norm_p(tape, store, &format!("{lp}.ff.ln"), trainable, x);
        let f = ffn(tape, store, &format!("{lp}.ff"), trainable, normed);
        x = tape.add(x, f);
    }
    Ok(x)
}

/// Block-diagonal mask: row t may attend to row t' iff both are in the same
/// segment.
fn segment_self_mask(segments: &[(usize, usize)], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n * n];
    for &(s, e) in segments {
        for t in s..e {
            for t2 in s..e {
                mask[t * n + t2] = true;
            }
        }
    }
    mask
}

/// Cross mask: latent k attends to exactly its segment's rows.
fn segment_cross_mask(segments: &[(usize, usize)], n: usize) -> Vec<bool> {
    let k = segments.len();
    let mut mask = vec![false; k * n];
    for (i, &(s, e)) in segments.iter().enumerate() {
        for t in s..e {
            mask[i * n + t] = true;
        }
    }
    mask
}

/// One stage's Encoder: projects the input stream, initializes each segment's
/// latent by max-pooling, then alternates segment-wise self-attention (+FFN)
/// on the stream with cross-attention (+FFN) on the latent stream.
/// Returns the K×d latent tokens.
#[allow(clippy::too_many_arguments)]
pub fn encode_stage<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    stage: &str,
    trainable: bool,
    cfg: &ModelConfig,
    input: NodeId,
    segments: &[(usize, usize)],
    positions: &[usize],
    rope: bool,
) -> Result<NodeId, AutodiffError> {
    let n = tape.shape(input).0;
    assert_eq!(positions.len(), n, "one rotary position per input row");
    for &(s, e) in segments {
        assert!(s < e && e <= n, "empty or out-of-range segment ({s},{e})");
    }
    let mut x = linear(tape, store, &format!("{stage}.proj"), trainable, input);
    let mut z = tape.max_pool_segments(x, segments);

    let self_mask = segment_self_mask(segments, n);
    let cross_mask = segment_cross_mask(segments, n);
    let pos_k = if rope { Some(positions) } else { None };

    for l in 0..cfg.enc_layers {
        let lp = format!("{stage}.enc.l{l}");
        // (a) segment-wise self-attention + FFN on the input stream
        let normed = layer_norm_p(tape, store, &format!("{lp}.sa.ln"), trainable, x);
        let ap = attn_params(tape, store, &format!("{lp}.sa"), trainable);
        let att = attention(
            tape,
            &AttentionSpec {
                q: normed,
                k: normed,
                v: normed,
                wq: ap.wq,
                wk: ap.wk,
                wv: ap.wv,
                mask: &self_mask,
                heads: cfg.heads,
                pos_q: pos_k,
                pos_k,
            },
        )?;
        x = tape.add(x, att);
        let normed = layer_norm_p(tape, store, &format!("{lp}.xf.ln"), trainable, x);
        let f = ffn(tape, store, &format!("{lp}.xf"), trainable, normed);
        x = tape.add(x, f);

        // (b) cross-attention from the latent tokens + FFN on the latents
        let zq = layer_norm_p(tape, store, &format!("{lp}.ca.lnq"), trainable, z);
        let kv = layer_norm_p(tape, store, &format!("{lp}.ca.lnkv"), trainable, x);
        let ap = attn_params(tape, store, &format!("{lp}.ca"), trainable);
        let att = attention(
            tape,
            &AttentionSpec {
                q: zq,
                k: kv,
                v: kv,
                wq: ap.wq,
                wk: ap.wk,
                wv: ap.wv,
                mask: &cross_mask,
                heads: cfg.heads,
                pos_q: None,
                pos_k,
            },
        )?;
        z = tape.add(z, att);
        let normed = layer_norm_p(tape, store, &format!("{lp}.zf.ln"), trainable, z);
        let f = ffn(tape, store, &format!("{lp}.zf"), trainable, normed);
        z = tape.add(z, f);
    }
    Ok(z)
}

/// Full self-attention over latent tokens with segment-ordinal positions.
pub fn latentformer<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    stage: &str,
    trainable: bool,
    cfg: &ModelConfig,
    tokens: NodeId,
    positions: &[usize],
    rope: bool,
) -> Result<NodeId, AutodiffError> {
    let k = tape.shape(tokens).0;
    let mask = vec![true; k * k];
    encoder_stack(
        tape,
        store,
        &format!("{stage}.lf"),
        trainable,
        cfg.lf_layers,
        cfg.heads,
        tokens,
        &mask,
        positions,
        rope,
    )
}

/// Stage-1 output: atom latent tokens for the present (visible) atoms.
pub struct Stage1Out {
    pub tokens: NodeId,
    /// Original atom ordinals present, in row order.
    pub atom_ids: Vec<usize>,
}

/// Runs stage 1 only: pose frames of the non-masked atoms through the
/// Encoder and LatentFormer. Masked atoms' frames never reach the tape.
pub fn stage1_tokens<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    trainable: bool,
    cfg: &ModelConfig,
    poses: &PoseSequence,
    atom_map: &SegmentMap,
    masked_atoms: &[usize],
    rope: bool,
) -> Result<Stage1Out, ModelError> {
    assert_eq!(poses.dim, cfg.input_dim, "pose dim does not match model input dim");
    assert_eq!(poses.len, atom_map.len, "atom map does not cover the sequence");
    let atom_visible: Vec<usize> = (0..atom_map.count())
        .filter(|a| masked_atoms.binary_search(a).is_err())
        .collect();

    let mut frame_positions = Vec::new();
    let mut values: Vec<F> = Vec::new();
    let mut seg1: Vec<(usize, usize)> = Vec::with_capacity(atom_visible.len());
    for &a in &atom_visible {
        let (s, e) = atom_map.segments[a];
        let row0 = frame_positions.len();
        for t in s..e {
            frame_positions.push(t);
            values.extend(poses.frame(t).iter().map(|&v| F::from_f32(v)));
        }
        seg1.push((row0, frame_positions.len()));
    }
    let input = tape.input(values, frame_positions.len(), poses.dim);
    let enc1 = encode_stage(tape, store, "s1", trainable, cfg, input, &seg1, &frame_positions, rope)?;
    let tokens = latentformer(tape, store, "s1", trainable, cfg, enc1, &atom_visible, rope)?;
    Ok(Stage1Out { tokens, atom_ids: atom_visible })
}

/// Both stages' latent tokens for one sequence.
pub struct Extraction {
    /// Stage-1 atom tokens (post LatentFormer), one row per present atom.
    pub atom_tokens: NodeId,
    /// Stage-2 motif tokens (post LatentFormer), one row per present motif.
    pub motif_tokens: NodeId,
    /// Original atom ordinals present (all, or the visible ones).
    pub atom_ids: Vec<usize>,
    /// Original motif ordinals present.
    pub motif_ids: Vec<usize>,
}

/// Runs the two-stage extractor. With `visible_only`, every masked frame,
/// atom, and motif is dropped before encoding: masked content never reaches
/// the tape, so visible-path activations cannot depend on it.
#[allow(clippy::too_many_arguments)]
pub fn extract<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    trainable: bool,
    cfg: &ModelConfig,
    poses: &PoseSequence,
    atom_map: &SegmentMap,
    motif_map: &SegmentMap,
    visible_only: Option<&MaskSpec>,
    rope: bool,
) -> Result<Extraction, ModelError> {
    let motif_atoms = motif_atom_ranges(atom_map, motif_map)?;

    if let Some(spec) = visible_only {
        // Hierarchical consistency: an atom is masked iff its motif is.
        for (m, &(a0, a1)) in motif_atoms.iter().enumerate() {
            let want = spec.masks_motif(m);
            for a in a0..a1 {
                if spec.masks_atom(a) != want {
                    return Err(ModelError::MapMismatch {
                        detail: format!("atom {a} mask disagrees with motif {m}"),
                    });
                }
            }
        }
    }

    let masked_atoms: Vec<usize> =
        visible_only.map(|s| s.atoms.clone()).unwrap_or_default();
    let motif_visible: Vec<usize> = (0..motif_map.count())
        .filter(|&m| visible_only.map_or(true, |s| !s.masks_motif(m)))
        .collect();

    let s1 = stage1_tokens(tape, store, trainable, cfg, poses, atom_map, &masked_atoms, rope)?;
    let atom_tokens = s1.tokens;
    let atom_visible = s1.atom_ids;

    // Stage-2 segments: visible atoms grouped by their (visible) motif.
    let mut seg2: Vec<(usize, usize)> = Vec::with_capacity(motif_visible.len());
    let mut row = 0usize;
    for &m in &motif_visible {
        let (a0, a1) = motif_atoms[m];
        let span = (a0..a1)
            .filter(|a| atom_visible.binary_search(a).is_ok())
            .count();
        seg2.push((row, row + span));
        row += span;
    }
    debug_assert_eq!(row, atom_visible.len());

    let enc2 = encode_stage(tape, store, "s2", trainable, cfg, atom_tokens, &seg2, &atom_visible, rope)?;
    let motif_tokens = latentformer(tape, store, "s2", trainable, cfg, enc2, &motif_visible, rope)?;

    Ok(Extraction { atom_tokens, motif_tokens, atom_ids: atom_visible, motif_ids: motif_visible })
}

/// Fills masked positions with the stage's learnable mask token, runs the
/// predictor over all K positions, and applies the linear head at the masked
/// rows. Returns |masked|×d predictions in ordinal order.
#[allow(clippy::too_many_arguments)]
pub fn predict_masked<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    trainable: bool,
    cfg: &ModelConfig,
    visible_tokens: NodeId,
    visible_ids: &[usize],
    total: usize,
    masked_ids: &[usize],
    mask_param: &str,
    rope: bool,
) -> Result<NodeId, ModelError> {
    if masked_ids.is_empty() {
        return Err(ModelError::EmptyMaskSet);
    }
    assert_eq!(visible_ids.len() + masked_ids.len(), total, "ids must partition positions");
    let mask_tok = fetch(tape, store, mask_param, trainable);
    let replicas = tape.gather_rows(mask_tok, &vec![0; masked_ids.len()]);
    let stacked = tape.vstack(&[visible_tokens, replicas]);
    // Reorder rows back to ordinal positions.
    let mut perm = vec![0usize; total];
    for (row, &id) in visible_ids.iter().enumerate() {
        perm[id] = row;
    }
    for (row, &id) in masked_ids.iter().enumerate() {
        perm[id] = visible_ids.len() + row;
    }
    let ztilde = tape.gather_rows(stacked, &perm);

    let positions: Vec<usize> = (0..total).collect();
    let mask = vec![true; total * total];
    let out = encoder_stack(
        tape,
        store,
        "pred",
        trainable,
        cfg.pred_layers,
        cfg.heads,
        ztilde,
        &mask,
        &positions,
        rope,
    )?;
    let picked = tape.gather_rows(out, masked_ids);
    Ok(linear(tape, store, "pred.head", trainable, picked))
}

/// Target tokens from the EMA extractor on the full, unmasked input. Runs on
/// a private tape and returns raw values, so no gradient can reach them.
pub fn target_tokens<F: Real>(
    store: &ParamStore<F>,
    cfg: &ModelConfig,
    poses: &PoseSequence,
    atom_map: &SegmentMap,
    motif_map: &SegmentMap,
    stage2: bool,
) -> Result<Vec<F>, ModelError> {
    let mut tape = Tape::new();
    if stage2 {
        let ex = extract(&mut tape, store, false, cfg, poses, atom_map, motif_map, None, true)?;
        Ok(tape.values(ex.motif_tokens).to_vec())
    } else {
        let s1 = stage1_tokens(&mut tape, store, false, cfg, poses, atom_map, &[], true)?;
        Ok(tape.values(s1.tokens).to_vec())
    }
}

/// Materialized latent tokens for one sequence: K tokens of dimension d plus
/// per-token segment lengths summing to the frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub tokens: Vec<f32>,
    pub count: usize,
    pub dim: usize,
    pub lengths: Vec<usize>,
}

impl LatentSequence {
    pub fn token(&self, k: usize) -> &[f32] {
        &self.tokens[k * self.dim..(k + 1) * self.dim]
    }

    pub fn frames(&self) -> usize {
        self.lengths.iter().sum()
    }
}

const MLAT_MAGIC: &[u8; 4] = b"MLAT";
const MLAT_VERSION: u32 = 1;

/// Writes a latent file: magic "MLAT", u32 version, u32 K, u32 d, K u32
/// segment lengths, then K*d little-endian f32.
pub fn write_latents(seq: &LatentSequence, path: &std::path::Path) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 + seq.count * 4 + seq.tokens.len() * 4);
    buf.extend_from_slice(MLAT_MAGIC);
    buf.extend_from_slice(&MLAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.count as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    for &l in &seq.lengths {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for v in &seq.tokens {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    crate::pose::atomic_write(path, &buf)
}

pub fn read_latents(path: &std::path::Path) -> std::io::Result<LatentSequence> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    if bytes.len() < 16 || &bytes[0..4] != MLAT_MAGIC {
        return Err(bad("not a latent file"));
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != MLAT_VERSION {
        return Err(bad("unsupported latent file version"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expect = 16 + count * 4 + count * dim * 4;
    if bytes.len() != expect {
        return Err(bad("latent file truncated"));
    }
    let mut lengths = Vec::with_capacity(count);
    for i in 0..count {
        lengths.push(u32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap()) as usize);
    }
    let base = 16 + count * 4;
    let tokens: Vec<f32> = (0..count * dim)
        .map(|i| f32::from_le_bytes(bytes[base + 4 * i..base + 4 * i + 4].try_into().unwrap()))
        .collect();
    Ok(LatentSequence { tokens, count, dim, lengths })
}

/// Runs the full extractor and materializes both stages' latents.
pub fn encode_sequence<F: Real>(
    store: &ParamStore<F>,
    cfg: &ModelConfig,
    poses: &PoseSequence,
    atom_map: &SegmentMap,
    motif_map: &SegmentMap,
) -> Result<(LatentSequence, LatentSequence), ModelError> {
    let mut tape: Tape<F> = Tape::new();
    let ex = extract(&mut tape, store, false, cfg, poses, atom_map, motif_map, None, true)?;
    let to_latent = |tape: &Tape<F>, node: NodeId, lengths: Vec<usize>| {
        let (k, d) = tape.shape(node);
        LatentSequence {
            tokens: tape.values(node).iter().map(|v| v.to_f32()).collect(),
            count: k,
            dim: d,
            lengths,
        }
    };
    let atoms = to_latent(&tape, ex.atom_tokens, atom_map.lengths());
    let motifs = to_latent(&tape, ex.motif_tokens, motif_map.lengths());
    Ok((atoms, motifs))
}

/// Initializes every model parameter: both stages, the shared predictor, and
/// the per-stage mask tokens. Weight matrices use Xavier-scale normals
/// (`sigma = sqrt(2 / (fan_in + fan_out))`, appropriate for the narrow desk
/// widths); biases and LayerNorm shifts are zero; LayerNorm gains are one.
pub fn init_params<F: Real>(cfg: &ModelConfig, seed: u64) -> ParamStore<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = cfg.dim;
    let h = cfg.dim * cfg.ffn_mult;

    let mut weight = |store: &mut ParamStore<F>, name: &str, rows: usize, cols: usize| {
        let sigma = (2.0 / (rows + cols) as f64).sqrt();
        let normal = Normal::new(0.0f64, sigma).unwrap();
        let values: Vec<F> =
            (0..rows * cols).map(|_| F::from_f64(normal.sample(&mut rng))).collect();
        store.insert(name, values, vec![rows, cols]);
    };
    fn bias<F: Real>(store: &mut ParamStore<F>, name: &str, cols: usize) {
        store.insert(name, vec![F::ZERO; cols], vec![1, cols]);
    }
    fn norm<F: Real>(store: &mut ParamStore<F>, prefix: &str, cols: usize) {
        store.insert(&format!("{prefix}.g"), vec![F::ONE; cols], vec![1, cols]);
        store.insert(&format!("{prefix}.b"), vec![F::ZERO; cols], vec![1, cols]);
    }

    for stage in ["s1", "s2"] {
        let in_dim = if stage == "s1" { cfg.input_dim } else { d };
        weight(&mut store, &format!("{stage}.proj.w"), in_dim, d);
        bias(&mut store, &format!("{stage}.proj.b"), d);
        for l in 0..cfg.enc_layers {
            let lp = format!("{stage}.enc.l{l}");
            norm(&mut store, &format!("{lp}.sa.ln"), d);
            for w in ["wq", "wk", "wv"] {
                weight(&mut store, &format!("{lp}.sa.{w}"), d, d);
            }
            norm(&mut store, &format!("{lp}.xf.ln"), d);
            weight(&mut store, &format!("{lp}.xf.in.w"), d, h);
            bias(&mut store, &format!("{lp}.xf.in.b"), h);
            weight(&mut store, &format!("{lp}.xf.out.w"), h, d);
            bias(&mut store, &format!("{lp}.xf.out.b"), d);
            norm(&mut store, &format!("{lp}.ca.lnq"), d);
            norm(&mut store, &format!("{lp}.ca.lnkv"), d);
            for w in ["wq", "wk", "wv"] {
                weight(&mut store, &format!("{lp}.ca.{w}"), d, d);
            }
            norm(&mut store, &format!("{lp}.zf.ln"), d);
            weight(&mut store, &format!("{lp}.zf.in.w"), d, h);
            bias(&mut store, &format!("{lp}.zf.in.b"), h);
            weight(&mut store, &format!("{lp}.zf.out.w"), h, d);
            bias(&mut store, &format!("{lp}.zf.out.b"), d);
        }
        for l in 0..cfg.lf_layers {
            let lp = format!("{stage}.lf.l{l}");
            norm(&mut store, &format!("{lp}.sa.ln"), d);
            for w in ["wq", "wk", "wv"] {
                weight(&mut store, &format!("{lp}.sa.{w}"), d, d);
            }
            norm(&mut store, &format!("{lp}.ff.ln"), d);
            weight(&mut store, &format!("{lp}.ff.in.w"), d, h);
            bias(&mut store, &format!("{lp}.ff.in.b"), h);
            weight(&mut store, &format!("{lp}.ff.out.w"), h, d);
            bias(&mut store, &format!("{lp}.ff.out.b"), d);
        }
        // Per-stage learnable mask token.
        weight(&mut store, &format!("{stage}.mask"), 1, d);
    }
    for l in 0..cfg.pred_layers {
        let lp = format!("pred.l{l}");
        norm(&mut store, &format!("{lp}.sa.ln"), d);
        for w in ["wq", "wk", "wv"] {
            weight(&mut store, &format!("{lp}.sa.{w}"), d, d);
        }
        norm(&mut store, &format!("{lp}.ff.ln"), d);
        weight(&mut store, &format!("{lp}.ff.in.w"), d, h);
        bias(&mut store, &format!("{lp}.ff.in.b"), h);
        weight(&mut store, &format!("{lp}.ff.out.w"), h, d);
        bias(&mut store, &format!("{lp}.ff.out.b"), d);
    }
    weight(&mut store, "pred.head.w", d, d);
    bias(&mut store, "pred.head.b", d);
    store
}

/// Names of the feature-extractor parameters (the EMA target tracks these;
/// the predictor and mask tokens are excluded).
pub fn extractor_param_names<F: Real>(store: &ParamStore<F>) -> Vec<String> {
    store
        .names()
        .filter(|n| (n.starts_with("s1.") || n.starts_with("s2.")) && !n.ends_with(".mask"))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::feature_dim;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            input_dim: feature_dim(1),
            dim: 8,
            heads: 2,
            enc_layers: 2,
            lf_layers: 1,
            pred_layers: 1,
            ffn_mult: 2,
        }
    }

    fn toy_sequence(frames: usize) -> PoseSequence {
        let d = feature_dim(1);
        let values: Vec<f32> = (0..frames * d).map(|i| ((i as f32) * 0.13).sin()).collect();
        PoseSequence::new(values, frames, d, 5.0, "toy")
    }

    /// Zeroes every attention/FFN weight so residual paths become identity.
    fn zero_transform_weights(store: &mut ParamStore<f64>) {
        let names: Vec<String> = store.names().cloned().collect();
        for n in names {
            let zero = n.contains(".sa.w")
                || n.contains(".ca.w")
                || n.contains(".xf.")
                || n.contains(".zf.")
                || n.contains(".ff.")
                || n.contains("pred.head");
            let keep_norm = n.ends_with(".ln.g") || n.ends_with(".lnq.g") || n.ends_with(".lnkv.g");
            if zero && !keep_norm {
                let t = store.get_mut(&n);
                for v in &mut t.values {
                    *v = 0.0;
                }
            }
        }
    }

    #[test]
    fn zero_weights_make_encoder_an_identity_on_single_frame_segments() {
        let cfg = toy_cfg();
        let mut store: ParamStore<f64> = init_params(&cfg, 3);
        zero_transform_weights(&mut store);
        // Identity-like projection: D -> d takes the first d features.
        let t = store.get_mut("s1.proj.w");
        for v in t.values.iter_mut() {
            *v = 0.0;
        }
        for i in 0..cfg.dim {
            t.values[i * cfg.dim + i] = 1.0;
        }

        let frames = 3;
        let seq = toy_sequence(frames);
        let mut tape: Tape<f64> = Tape::new();
        let values: Vec<f64> = seq.values.iter().map(|&v| v as f64).collect();
        let input = tape.input(values, frames, seq.dim);
        let segments: Vec<(usize, usize)> = (0..frames).map(|t| (t, t + 1)).collect();
        let positions: Vec<usize> = (0..frames).collect();
        let z = encode_stage(&mut tape, &store, "s1", false, &cfg, input, &segments, &positions, true)
            .unwrap();
        for t in 0..frames {
            for j in 0..cfg.dim {
                let expect = seq.frame(t)[j] as f64;
                let got = tape.values(z)[t * cfg.dim + j];
                assert!((got - expect).abs() < 1e-12, "t={t} j={j}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn segment_isolation_under_permutation_of_other_segments() {
        // Permuting the frames of OTHER segments leaves segment k's latent
        // unchanged (encoder only; the LatentFormer mixes by design).
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 11);
        let frames = 9;
        let seq = toy_sequence(frames);
        let segments = vec![(0usize, 3usize), (3, 6), (6, 9)];
        let positions: Vec<usize> = (0..frames).collect();

        let run = |values: Vec<f64>| {
            let mut tape: Tape<f64> = Tape::new();
            let input = tape.input(values, frames, seq.dim);
            let z = encode_stage(&mut tape, &store, "s1", false, &cfg, input, &segments, &positions, true)
                .unwrap();
            tape.values(z).to_vec()
        };

        let base: Vec<f64> = seq.values.iter().map(|&v| v as f64).collect();
        let z1 = run(base.clone());

        // Swap frames 0 and 2 (inside segment 0) — segment 1 must not move.
        let mut swapped = base.clone();
        for c in 0..seq.dim {
            swapped.swap(c, 2 * seq.dim + c);
        }
        let z2 = run(swapped);
        for j in 0..cfg.dim {
            assert_eq!(z1[cfg.dim + j].to_bits(), z2[cfg.dim + j].to_bits(), "segment 1 leaked");
            assert_eq!(z1[2 * cfg.dim + j].to_bits(), z2[2 * cfg.dim + j].to_bits());
        }
    }

    #[test]
    fn latentformer_is_identity_at_zero_weights() {
        let cfg = toy_cfg();
        let mut store: ParamStore<f64> = init_params(&cfg, 5);
        zero_transform_weights(&mut store);
        let mut tape: Tape<f64> = Tape::new();
        let tokens: Vec<f64> = (0..3 * cfg.dim).map(|i| (i as f64 * 0.31).cos()).collect();
        let x = tape.input(tokens.clone(), 3, cfg.dim);
        let y = latentformer(&mut tape, &store, "s1", false, &cfg, x, &[0, 1, 2], true).unwrap();
        assert_eq!(tape.values(y), &tokens[..]);
    }

    #[test]
    fn latentformer_k1_depends_only_on_its_token() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 5);
        let mut tape: Tape<f64> = Tape::new();
        let tokens: Vec<f64> = (0..cfg.dim).map(|i| (i as f64 * 0.17).sin()).collect();
        let x = tape.input(tokens, 1, cfg.dim);
        let y = latentformer(&mut tape, &store, "s1", false, &cfg, x, &[0], true).unwrap();
        assert_eq!(tape.shape(y), (1, cfg.dim));
        assert!(tape.values(y).iter().all(|v| v.is_finite()));
    }

    fn toy_maps(frames: usize) -> (SegmentMap, SegmentMap) {
        // Atoms of 2 frames; motifs of 2 atoms.
        let atom = SegmentMap::fixed(frames, 2);
        let starts: Vec<usize> = (0..frames).step_by(4).collect();
        let motif = SegmentMap::from_boundaries(&starts, frames);
        (atom, motif)
    }

    #[test]
    fn extract_covers_all_frames() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 7);
        let seq = toy_sequence(12);
        let (atom_map, motif_map) = toy_maps(12);
        let mut tape: Tape<f64> = Tape::new();
        let ex = extract(&mut tape, &store, false, &cfg, &seq, &atom_map, &motif_map, None, true)
            .unwrap();
        assert_eq!(tape.shape(ex.atom_tokens).0, atom_map.count());
        assert_eq!(tape.shape(ex.motif_tokens).0, motif_map.count());
        // Sum of stage-2 lengths equals T.
        let total: usize = motif_map.lengths().iter().sum();
        assert_eq!(total, seq.len);
    }

    #[test]
    fn extract_every_atom_its_own_motif() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 7);
        let seq = toy_sequence(8);
        let atom_map = SegmentMap::fixed(8, 2);
        let motif_map = atom_map.clone();
        let mut tape: Tape<f64> = Tape::new();
        let ex = extract(&mut tape, &store, false, &cfg, &seq, &atom_map, &motif_map, None, true)
            .unwrap();
        assert_eq!(tape.shape(ex.motif_tokens).0, 4);
    }

    #[test]
    fn extract_rejects_misaligned_motifs() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 7);
        let seq = toy_sequence(8);
        let atom_map = SegmentMap::fixed(8, 2);
        let motif_map = SegmentMap::from_boundaries(&[0, 3], 8); // splits atom 1
        let mut tape: Tape<f64> = Tape::new();
        match extract(&mut tape, &store, false, &cfg, &seq, &atom_map, &motif_map, None, true) {
            Err(ModelError::MapMismatch { .. }) => {}
            _ => panic!("expected MapMismatch"),
        }
    }

    #[test]
    fn masked_content_cannot_leak_into_visible_path() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 13);
        let (atom_map, motif_map) = toy_maps(12);
        let motif_atoms = motif_atom_ranges(&atom_map, &motif_map).unwrap();
        let spec = MaskSpec::from_motifs(&[1], &motif_atoms);

        let run = |seq: &PoseSequence| {
            let mut tape: Tape<f64> = Tape::new();
            let ex = extract(&mut tape, &store, false, &cfg, seq, &atom_map, &motif_map, Some(&spec), true)
                .unwrap();
            (
                tape.values(ex.atom_tokens).to_vec(),
                tape.values(ex.motif_tokens).to_vec(),
                ex.atom_ids,
                ex.motif_ids,
            )
        };

        let base = toy_sequence(12);
        let (a1, m1, aid, mid) = run(&base);
        // Perturb every frame of masked motif 1 (frames 4..8).
        let mut perturbed = base.clone();
        for t in 4..8 {
            for c in 0..perturbed.dim {
                perturbed.values[t * perturbed.dim + c] += 3.7;
            }
        }
        let (a2, m2, _, _) = run(&perturbed);
        assert_eq!(aid, vec![0, 1, 4, 5]);
        assert_eq!(mid, vec![0, 2]);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a1), bits(&a2), "atom tokens changed");
        assert_eq!(bits(&m1), bits(&m2), "motif tokens changed");
    }

    #[test]
    fn predict_masked_all_positions_masked() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 17);
        let mut tape: Tape<f64> = Tape::new();
        let empty = tape.input(vec![], 0, cfg.dim);
        let out = predict_masked(&mut tape, &store, false, &cfg, empty, &[], 3, &[0, 1, 2], "s2.mask", true)
            .unwrap();
        assert_eq!(tape.shape(out), (3, cfg.dim));
        assert!(tape.values(out).iter().all(|v| v.is_finite()));
        // Without rotary positions every row is identical.
        let mut tape2: Tape<f64> = Tape::new();
        let empty2 = tape2.input(vec![], 0, cfg.dim);
        let out2 = predict_masked(&mut tape2, &store, false, &cfg, empty2, &[], 3, &[0, 1, 2], "s2.mask", false)
            .unwrap();
        let v = tape2.values(out2);
        for r in 1..3 {
            for j in 0..cfg.dim {
                assert_eq!(v[j].to_bits(), v[r * cfg.dim + j].to_bits());
            }
        }
    }

    #[test]
    fn predict_masked_single_target_shape() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 19);
        let mut tape: Tape<f64> = Tape::new();
        let visible: Vec<f64> = (0..2 * cfg.dim).map(|i| (i as f64) * 0.01).collect();
        let vis = tape.input(visible, 2, cfg.dim);
        let out = predict_masked(&mut tape, &store, false, &cfg, vis, &[0, 2], 3, &[1], "s2.mask", true)
            .unwrap();
        assert_eq!(tape.shape(out), (1, cfg.dim));
    }

    #[test]
    fn predict_masked_rejects_empty_mask() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 19);
        let mut tape: Tape<f64> = Tape::new();
        let vis = tape.input(vec![0.0; cfg.dim], 1, cfg.dim);
        match predict_masked(&mut tape, &store, false, &cfg, vis, &[0], 1, &[], "s1.mask", true) {
            Err(ModelError::EmptyMaskSet) => {}
            _ => panic!("expected EmptyMaskSet"),
        }
    }

    #[test]
    fn target_tokens_match_online_extractor_when_parameters_equal() {
        let cfg = toy_cfg();
        let store: ParamStore<f64> = init_params(&cfg, 23);
        let seq = toy_sequence(12);
        let (atom_map, motif_map) = toy_maps(12);
        let targets = target_tokens(&store, &cfg, &seq, &atom_map, &motif_map, true).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let ex = extract(&mut tape, &store, true, &cfg, &seq, &atom_map, &motif_map, None, true)
            .unwrap();
        let online = tape.values(ex.motif_tokens);
        assert_eq!(targets.len(), online.len());
        for (a, b) in targets.iter().zip(online) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ema_target_shift_is_lipschitz_bounded_on_linear_probe() {
        // One linear layer: after an EMA update the target output moves by at
        // most (1 - m) * ||theta - theta_bar|| * ||x|| in L2.
        use crate::autodiff::ema_update;
        let m = 0.996;
        let dim = 6;
        let mut online: ParamStore<f64> = ParamStore::new();
        let mut target: ParamStore<f64> = ParamStore::new();
        let w_online: Vec<f64> = (0..dim * dim).map(|i| (i as f64 * 0.7).sin()).collect();
        let w_target: Vec<f64> = (0..dim * dim).map(|i| (i as f64 * 0.3).cos()).collect();
        online.insert("w", w_online.clone(), vec![dim, dim]);
        target.insert("w", w_target.clone(), vec![dim, dim]);

        let x: Vec<f64> = (0..dim).map(|i| (i as f64) * 0.25 - 0.5).collect();
        let apply = |w: &[f64]| -> Vec<f64> {
            let mut y = vec![0.0; dim];
            for i in 0..dim {
                for j in 0..dim {
                    y[j] += x[i] * w[i * dim + j];
                }
            }
            y
        };
        let before = apply(&target.get("w").values);
        ema_update(&mut target, &online, m);
        let after = apply(&target.get("w").values);

        let dy: f64 = before.iter().zip(&after).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dw: f64 = w_online
            .iter()
            .zip(&w_target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dy <= (1.0 - m) * dw * xn + 1e-12, "{dy} > {}", (1.0 - m) * dw * xn);
    }
}

#[cfg(test)]
mod variable_k_tests {
    use super::*;
    use crate::pose::feature_dim;
    use crate::segment::SegmentMap;

    #[test]
    fn extract_supports_every_segment_granularity() {
        // K from 1 (whole sequence) to T (every frame its own atom).
        let cfg = ModelConfig {
            input_dim: feature_dim(1),
            dim: 8,
            heads: 2,
            enc_layers: 1,
            lf_layers: 1,
            pred_layers: 1,
            ffn_mult: 2,
        };
        let store: ParamStore<f32> = init_params(&cfg, 61);
        let frames = 6;
        let d = feature_dim(1);
        let values: Vec<f32> = (0..frames * d).map(|i| (i as f32 * 0.19).sin()).collect();
        let poses = crate::pose::PoseSequence::new(values, frames, d, 5.0, "vk");
        for seg_len in 1..=frames {
            let atom_map = SegmentMap::fixed(frames, seg_len);
            let motif_map = atom_map.clone();
            let mut tape: Tape<f32> = Tape::new();
            let ex = extract(&mut tape, &store, false, &cfg, &poses, &atom_map, &motif_map, None, true)
                .expect("extract");
            assert_eq!(tape.shape(ex.motif_tokens).0, atom_map.count());
            assert!(tape.values(ex.motif_tokens).iter().all(|v| v.is_finite()));
        }
    }
}
