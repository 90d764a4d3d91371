//! Shared fixture for the acceptance suite: the full desk-scale pipeline —
//! synthetic corpora, segmentation, stage-1 pretraining, codebook + motif
//! mining, end-to-end pretraining, downstream heads, and a fixed-length
//! ablation — trained once and reused by the criteria.

use std::time::Instant;

use motif_core::codebook::{fit_kmeans, Codebook};
use motif_core::heads::{train_decoder, train_predictor, HeadConfig};
use motif_core::mine::{mine_patterns, minimal_cover, motif_segment_map, MinerConfig, PatternSet};
use motif_core::model::{encode_sequence, LatentSequence, ModelConfig};
use motif_core::pose::{downsample, generate_synthetic_corpus, GeneratorSpec, PoseSequence};
use motif_core::segment::{segment_atoms, SegmentMap, SegmenterConfig};
use motif_core::train::{
    pretrain_end_to_end, pretrain_stage1, ResumeState, TrainConfig, TrainResult,
};
use motif_core::autodiff::ParamStore;

pub const CLASSES: usize = 5;
pub const JOINTS: usize = 4;
pub const TRAIN_SEQUENCES: usize = 200;
pub const TEST_SEQUENCES: usize = 40;
pub const SECONDS: f32 = 30.0;
pub const TOKEN_FPS: f64 = 5.0;
pub const CODEBOOK_K: usize = 32;
pub const PRETRAIN_EPOCHS: usize = 50;
pub const HEAD_EPOCHS: usize = 30;

pub fn generator_spec(sequences: usize) -> GeneratorSpec {
    GeneratorSpec {
        classes: CLASSES,
        joints: JOINTS,
        sequences,
        seconds: SECONDS,
        ..GeneratorSpec::default()
    }
}

pub fn model_config() -> ModelConfig {
    ModelConfig::desk(motif_core::pose::feature_dim(JOINTS))
}

pub fn head_config() -> HeadConfig {
    HeadConfig::desk(model_config().dim, CLASSES, motif_core::pose::feature_dim(JOINTS))
}

pub fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, ..TrainConfig::desk(seed) }
}

pub fn head_train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        total_iters: (epochs * TRAIN_SEQUENCES / 8) as u64,
        ..TrainConfig::desk(seed)
    }
}

/// One corpus with everything derived from it.
pub struct CorpusArtifacts {
    pub poses5: Vec<PoseSequence>,
    pub labels5: Vec<Vec<u16>>,
    pub atom_maps: Vec<SegmentMap>,
    pub motif_maps: Vec<SegmentMap>,
    pub motif_latents: Vec<LatentSequence>,
}

/// Generates a corpus at 30 fps, segments atoms, and downsamples to the
/// token rate. Motif maps and latents are filled in later stages.
pub fn prepare_corpus(sequences: usize, seed: u64) -> CorpusArtifacts {
    let spec = generator_spec(sequences);
    let corpus = generate_synthetic_corpus(&spec, seed).expect("corpus generation");
    let seg_cfg = SegmenterConfig::default();
    let stride = (seg_cfg.input_fps / seg_cfg.token_fps).round() as usize;

    let mut poses5 = Vec::with_capacity(corpus.len());
    let mut labels5 = Vec::with_capacity(corpus.len());
    let mut atom_maps = Vec::with_capacity(corpus.len());
    for ls in &corpus {
        let t_tokens = ls.sequence.len.div_ceil(stride);
        let map = segment_atoms(&ls.sequence, t_tokens, &seg_cfg).expect("segmentation");
        atom_maps.push(map);
        poses5.push(downsample(&ls.sequence, TOKEN_FPS as f32).expect("downsample"));
        labels5.push(ls.labels.iter().step_by(stride).copied().collect());
    }
    CorpusArtifacts { poses5, labels5, atom_maps, motif_maps: Vec::new(), motif_latents: Vec::new() }
}

/// Assigns codes with the codebook and covers each sequence with the mined
/// patterns, producing frame-level motif maps.
pub fn derive_motif_maps(
    arts: &CorpusArtifacts,
    stage1: &ParamStore<f32>,
    codebook: &Codebook,
    patterns: &PatternSet,
    miner_cfg: &MinerConfig,
) -> Vec<SegmentMap> {
    let cfg = model_config();
    arts.poses5
        .iter()
        .zip(&arts.atom_maps)
        .map(|(poses, atom_map)| {
            let mut tape = motif_core::autodiff::Tape::<f32>::new();
            let s1 = motif_core::model::stage1_tokens(
                &mut tape, stage1, false, &cfg, poses, atom_map, &[], true,
            )
            .expect("stage-1 encode");
            let tokens = tape.values(s1.tokens);
            let codes = codebook.assign_all(tokens, atom_map.count()).expect("assign");
            let cover = minimal_cover(&codes, patterns, miner_cfg);
            motif_segment_map(&cover, atom_map).expect("motif map")
        })
        .collect()
}

/// Everything criterion 8 and 9 need, trained once.
pub struct TrainedPipeline {
    pub train: CorpusArtifacts,
    pub test: CorpusArtifacts,
    pub stage1: TrainResult<f32>,
    pub e2e: TrainResult<f32>,
    pub codebook: Codebook,
    pub patterns: PatternSet,
    pub miner_cfg: MinerConfig,
    pub decoder: ParamStore<f32>,
    pub predictor: ParamStore<f32>,
    /// Fixed-length (clip) ablation counterparts.
    pub ablation_latents_test: Vec<LatentSequence>,
    pub ablation_decoder: ParamStore<f32>,
    pub ablation_predictor: ParamStore<f32>,
    /// Wall-clock seconds of the two pretraining steps only.
    pub pretrain_seconds: f64,
}

fn mean_len(maps: &[SegmentMap]) -> usize {
    let total: usize = maps.iter().map(|m| m.lengths().iter().sum::<usize>()).sum();
    let count: usize = maps.iter().map(|m| m.count()).sum();
    (total as f64 / count as f64).round().max(1.0) as usize
}

/// Uniform-length maps for the "segment → clip" ablation, aligned so motif
/// boundaries coincide with atom boundaries.
pub fn fixed_maps(frames: usize, atom_len: usize, motif_len: usize) -> (SegmentMap, SegmentMap) {
    let atom = SegmentMap::fixed(frames, atom_len);
    // Snap motif boundaries onto atom starts.
    let mut starts = Vec::new();
    let mut at = 0usize;
    while at < frames {
        starts.push(atom.segments[atom.seg_of(at)].0);
        at += motif_len;
    }
    let motif = SegmentMap::from_boundaries(&starts, frames);
    (atom, motif)
}

pub fn build_pipeline() -> TrainedPipeline {
    build_pipeline_scaled(TRAIN_SEQUENCES, TEST_SEQUENCES, PRETRAIN_EPOCHS, HEAD_EPOCHS)
}

/// Same pipeline at a reduced scale, for pilots and smoke tests.
pub fn build_pipeline_scaled(
    train_sequences: usize,
    test_sequences: usize,
    pretrain_epochs: usize,
    head_epochs: usize,
) -> TrainedPipeline {
    let model_cfg = model_config();
    let head_cfg = head_config();

    let mut train = prepare_corpus(train_sequences, 1);
    let mut test = prepare_corpus(test_sequences, 2);

    // Step 1: stage-1 pretraining on atom segments.
    let t0 = Instant::now();
    let stage1 = pretrain_stage1::<f32>(
        &train.poses5,
        &train.atom_maps,
        &model_cfg,
        &train_config(pretrain_epochs, 11),
        None,
        None,
    )
    .expect("stage-1 pretraining");
    let stage1_secs = t0.elapsed().as_secs_f64();

    // Codebook over stage-1 atom latents, then motif mining on the codes.
    let mut all_tokens: Vec<f32> = Vec::new();
    let mut train_codes: Vec<Vec<u16>> = Vec::new();
    for (poses, atom_map) in train.poses5.iter().zip(&train.atom_maps) {
        let mut tape = motif_core::autodiff::Tape::<f32>::new();
        let s1 = motif_core::model::stage1_tokens(
            &mut tape, &stage1.params, false, &model_cfg, poses, atom_map, &[], true,
        )
        .expect("stage-1 encode");
        all_tokens.extend_from_slice(tape.values(s1.tokens));
        train_codes.push(Vec::new()); // filled after the codebook exists
    }
    let n_tokens = all_tokens.len() / model_cfg.dim;
    let codebook =
        fit_kmeans(&all_tokens, n_tokens, model_cfg.dim, CODEBOOK_K, 7).expect("codebook");
    let mut at = 0usize;
    for (i, atom_map) in train.atom_maps.iter().enumerate() {
        let k = atom_map.count();
        let tokens = &all_tokens[at * model_cfg.dim..(at + k) * model_cfg.dim];
        train_codes[i] = codebook.assign_all(tokens, k).expect("assign");
        at += k;
    }
    let miner_cfg = MinerConfig { alphabet: CODEBOOK_K, ..MinerConfig::default() };
    let patterns = mine_patterns(&train_codes, &miner_cfg).expect("mining");

    train.motif_maps = train_codes
        .iter()
        .zip(&train.atom_maps)
        .map(|(codes, atom_map)| {
            let cover = minimal_cover(codes, &patterns, &miner_cfg);
            motif_segment_map(&cover, atom_map).expect("motif map")
        })
        .collect();
    test.motif_maps = derive_motif_maps(&test, &stage1.params, &codebook, &patterns, &miner_cfg);

    // Step 2: end-to-end pretraining on motif segments.
    let t1 = Instant::now();
    let e2e = pretrain_end_to_end::<f32>(
        &train.poses5,
        &train.atom_maps,
        &train.motif_maps,
        &model_cfg,
        &train_config(pretrain_epochs, 13),
        Some(ResumeState::from_params(stage1.params.clone())),
        None,
    )
    .expect("end-to-end pretraining");
    let pretrain_seconds = stage1_secs + t1.elapsed().as_secs_f64();

    // Motif latents for both corpora.
    let encode_all = |arts: &CorpusArtifacts, params: &ParamStore<f32>| -> Vec<LatentSequence> {
        arts.poses5
            .iter()
            .zip(&arts.atom_maps)
            .zip(&arts.motif_maps)
            .map(|((poses, am), mm)| {
                encode_sequence(params, &model_cfg, poses, am, mm).expect("encode").1
            })
            .collect()
    };
    train.motif_latents = encode_all(&train, &e2e.params);
    test.motif_latents = encode_all(&test, &e2e.params);

    // Downstream heads on the training corpus.
    let (decoder, _) = train_decoder(
        &train.motif_latents,
        &train.poses5,
        &head_cfg,
        &head_train_config(head_epochs, 21),
    )
    .expect("decoder head");
    let (predictor, _) = train_predictor(
        &train.motif_latents,
        &train.poses5,
        &decoder,
        &head_cfg,
        &head_train_config(head_epochs, 23),
    )
    .expect("prediction head");

    // Fixed-length ablation: clip-sized segments at the learned averages,
    // trained end to end from the same stage-1 parameters with the same
    // budget, then the same heads.
    let atom_len = mean_len(&train.atom_maps);
    let motif_len = mean_len(&train.motif_maps).max(atom_len);
    let fixed_for = |arts: &CorpusArtifacts| -> (Vec<SegmentMap>, Vec<SegmentMap>) {
        let mut atoms = Vec::new();
        let mut motifs = Vec::new();
        for poses in &arts.poses5 {
            let (a, m) = fixed_maps(poses.len, atom_len, motif_len);
            atoms.push(a);
            motifs.push(m);
        }
        (atoms, motifs)
    };
    let (ab_train_atoms, ab_train_motifs) = fixed_for(&train);
    let (ab_test_atoms, ab_test_motifs) = fixed_for(&test);

    let ab_e2e = pretrain_end_to_end::<f32>(
        &train.poses5,
        &ab_train_atoms,
        &ab_train_motifs,
        &model_cfg,
        &train_config(pretrain_epochs, 13),
        Some(ResumeState::from_params(stage1.params.clone())),
        None,
    )
    .expect("ablation pretraining");

    let encode_fixed = |poses: &[PoseSequence], atoms: &[SegmentMap], motifs: &[SegmentMap]| {
        poses
            .iter()
            .zip(atoms)
            .zip(motifs)
            .map(|((p, a), m)| {
                encode_sequence(&ab_e2e.params, &model_cfg, p, a, m).expect("encode").1
            })
            .collect::<Vec<_>>()
    };
    let ab_train_latents = encode_fixed(&train.poses5, &ab_train_atoms, &ab_train_motifs);
    let ablation_latents_test = encode_fixed(&test.poses5, &ab_test_atoms, &ab_test_motifs);

    let (ablation_decoder, _) = train_decoder(
        &ab_train_latents,
        &train.poses5,
        &head_cfg,
        &head_train_config(head_epochs, 21),
    )
    .expect("ablation decoder");
    let (ablation_predictor, _) = train_predictor(
        &ab_train_latents,
        &train.poses5,
        &ablation_decoder,
        &head_cfg,
        &head_train_config(head_epochs, 23),
    )
    .expect("ablation predictor");

    TrainedPipeline {
        train,
        test,
        stage1,
        e2e,
        codebook,
        patterns,
        miner_cfg,
        decoder,
        predictor,
        ablation_latents_test,
        ablation_decoder,
        ablation_predictor,
        pretrain_seconds,
    }
}
