//! Subcommand implementations.

use std::path::Path;

use motif_core::codebook::{fit_kmeans, read_codebook, write_codebook};
use motif_core::manifest::hash_hex;
use motif_core::mine::{
    mine_patterns, minimal_cover, motif_segment_map, read_patterns, write_cover, write_patterns,
};
use motif_core::model::{
    encode_sequence, read_latents, stage1_tokens, write_latents, LatentSequence,
};
use motif_core::pose::{
    downsample, generate_synthetic_corpus, read_sequence, write_labels, write_sequence,
    PoseSequence,
};
use motif_core::segment::{segment_atoms, SegmentMap};
use motif_core::train::{
    load_train_checkpoint, pretrain_end_to_end, pretrain_stage1, ResumeState, TrainError,
};
use motif_core::autodiff::{read_checkpoint, write_checkpoint, ParamStore, Tape};
use motif_core::heads::{
    decoder_forward, eval_recognition, in_top_n, interpolate_forward, knn_classify,
    majority_label, mpjpe, rollout, sample_gap, train_decoder, train_interpolator,
    train_predictor, train_recognition, LabeledToken,
};

use crate::artifacts::*;
use crate::config::PipelineConfig;
use crate::CmdError;

fn ensure_dir(dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CmdError::data(format!("cannot create {}: {e}", dir.display())))
}

fn map_train_err(e: TrainError) -> CmdError {
    match e {
        TrainError::NonFiniteLoss { epoch, iter } => {
            CmdError::numeric(format!("non-finite loss at epoch {epoch}, iteration {iter}"))
        }
        other => CmdError::data(other.to_string()),
    }
}

/// Combined hash over a directory's files of one extension, for provenance.
fn dir_hash(dir: &Path, ext: &str) -> Result<(String, String), CmdError> {
    let mut combined = String::new();
    for p in list_files(dir, ext)? {
        let bytes =
            std::fs::read(&p).map_err(|e| CmdError::data(format!("{}: {e}", p.display())))?;
        combined.push_str(&hash_hex(&bytes));
    }
    Ok((format!("{}|{ext}", dir.display()), hash_hex(combined.as_bytes())))
}

pub fn gen_synth(cfg: &PipelineConfig, out: &Path) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let corpus = generate_synthetic_corpus(&cfg.generator_spec(), cfg.seed)
        .map_err(|e| CmdError::data(e.to_string()))?;
    let mut written = Vec::new();
    for ls in &corpus {
        let base = &ls.sequence.source_id;
        let seq_path = out.join(format!("{base}.mseq"));
        write_sequence(&ls.sequence, &seq_path).map_err(|e| CmdError::data(e.to_string()))?;
        let lbl_path = out.join(format!("{base}.lbl"));
        write_labels(&ls.labels, &lbl_path).map_err(|e| CmdError::data(e.to_string()))?;
        written.push(seq_path);
        written.push(lbl_path);
    }
    record_artifacts(out, &written, &[], &cfg.canonical_text(), cfg.seed)?;
    println!("wrote {} sequences to {}", corpus.len(), out.display());
    Ok(())
}

pub fn segment_atoms_cmd(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let seg_cfg = cfg.segmenter();
    let stride = (seg_cfg.input_fps / seg_cfg.token_fps).round() as usize;
    let seqs = load_sequences(input)?;
    let mut written = Vec::new();
    for (name, seq) in &seqs {
        if (seq.fps as f64 - seg_cfg.input_fps).abs() > 1e-6 {
            return Err(CmdError::data(format!(
                "{name}: expected {} fps input, got {}",
                seg_cfg.input_fps, seq.fps
            )));
        }
        let t_tokens = seq.len.div_ceil(stride);
        let map = segment_atoms(seq, t_tokens, &seg_cfg)
            .map_err(|e| CmdError::data(format!("{name}: {e}")))?;
        let path = out.join(format!("{name}.seg"));
        write_seg_file(&map, &path)?;
        written.push(path);
    }
    let inputs = vec![dir_hash(input, "mseq")?];
    record_artifacts(out, &written, &inputs, &cfg.canonical_text(), cfg.seed)?;
    println!("segmented {} sequences", seqs.len());
    Ok(())
}

/// Poses downsampled to the token rate plus their atom maps, name-aligned.
fn load_training_inputs(
    cfg: &PipelineConfig,
    data: &Path,
    segs: &Path,
) -> Result<(Vec<String>, Vec<PoseSequence>, Vec<SegmentMap>), CmdError> {
    let seqs = load_sequences(data)?;
    let stems: Vec<String> = seqs.iter().map(|(n, _)| n.clone()).collect();
    let token_fps = cfg.seg_token_fps as f32;
    let poses5: Vec<PoseSequence> = seqs
        .iter()
        .map(|(n, s)| {
            downsample(s, token_fps).map_err(|e| CmdError::data(format!("{n}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let atom_maps = load_seg_files(segs, &stems)?;
    for ((n, _), (p, m)) in seqs.iter().zip(poses5.iter().zip(&atom_maps)) {
        if p.len != m.len {
            return Err(CmdError::data(format!(
                "{n}: atom map covers {} frames, sequence has {}",
                m.len, p.len
            )));
        }
    }
    Ok((stems, poses5, atom_maps))
}

fn load_motif_maps(
    covers_dir: &Path,
    stems: &[String],
    atom_maps: &[SegmentMap],
) -> Result<Vec<SegmentMap>, CmdError> {
    let covers = load_cover_files(covers_dir, stems)?;
    covers
        .iter()
        .zip(atom_maps)
        .zip(stems)
        .map(|((c, a), n)| {
            motif_segment_map(c, a).map_err(|e| CmdError::data(format!("{n}: {e}")))
        })
        .collect()
}

pub fn pretrain_stage1_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    segs: &Path,
    out: &Path,
) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let (_, poses5, atom_maps) = load_training_inputs(cfg, data, segs)?;
    let result = pretrain_stage1::<f32>(
        &poses5,
        &atom_maps,
        &cfg.model(),
        &cfg.trainer(),
        None,
        Some(out),
    )
    .map_err(map_train_err)?;
    let inputs = vec![dir_hash(data, "mseq")?, dir_hash(segs, "seg")?];
    record_artifacts(
        out,
        &[out.join("checkpoint.mckp"), out.join("loss_history.csv")],
        &inputs,
        &cfg.canonical_text(),
        cfg.seed,
    )?;
    let first = result.epoch_mean.first().copied().unwrap_or(f64::NAN);
    let last = result.epoch_mean.last().copied().unwrap_or(f64::NAN);
    println!("stage-1 pretraining done: epoch mean loss {first:.6} -> {last:.6}");
    Ok(())
}

pub fn pretrain_e2e_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    segs: &Path,
    covers: &Path,
    init: &Path,
    out: &Path,
) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let (stems, poses5, atom_maps) = load_training_inputs(cfg, data, segs)?;
    let motif_maps = load_motif_maps(covers, &stems, &atom_maps)?;
    let resume = load_train_checkpoint::<f32>(init).map_err(map_train_err)?;
    let result = pretrain_end_to_end::<f32>(
        &poses5,
        &atom_maps,
        &motif_maps,
        &cfg.model(),
        &cfg.trainer(),
        Some(ResumeState::from_params(resume.params)),
        Some(out),
    )
    .map_err(map_train_err)?;
    let inputs = vec![
        dir_hash(data, "mseq")?,
        dir_hash(segs, "seg")?,
        dir_hash(covers, "cover")?,
        (init.display().to_string(), hash_hex(&std::fs::read(init).map_err(|e| CmdError::data(e.to_string()))?)),
    ];
    record_artifacts(
        out,
        &[out.join("checkpoint.mckp"), out.join("loss_history.csv")],
        &inputs,
        &cfg.canonical_text(),
        cfg.seed,
    )?;
    let first = result.epoch_mean.first().copied().unwrap_or(f64::NAN);
    let last = result.epoch_mean.last().copied().unwrap_or(f64::NAN);
    println!("end-to-end pretraining done: epoch mean loss {first:.6} -> {last:.6}");
    Ok(())
}

fn load_model_params(path: &Path) -> Result<ParamStore<f32>, CmdError> {
    let resume = load_train_checkpoint::<f32>(path).map_err(map_train_err)?;
    Ok(resume.params)
}

pub fn encode_atoms_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    segs: &Path,
    ckpt: &Path,
    out: &Path,
) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let (stems, poses5, atom_maps) = load_training_inputs(cfg, data, segs)?;
    let params = load_model_params(ckpt)?;
    let model_cfg = cfg.model();
    let mut written = Vec::new();
    for ((name, poses), atom_map) in stems.iter().zip(&poses5).zip(&atom_maps) {
        let mut tape: Tape<f32> = Tape::new();
        let s1 = stage1_tokens(&mut tape, &params, false, &model_cfg, poses, atom_map, &[], true)
            .map_err(|e| CmdError::data(format!("{name}: {e}")))?;
        let latents = LatentSequence {
            tokens: tape.values(s1.tokens).to_vec(),
            count: atom_map.count(),
            dim: model_cfg.dim,
            lengths: atom_map.lengths(),
        };
        let path = out.join(format!("{name}.mlat"));
        write_latents(&latents, &path).map_err(|e| CmdError::data(e.to_string()))?;
        written.push(path);
    }
    let inputs = vec![
        dir_hash(data, "mseq")?,
        dir_hash(segs, "seg")?,
        (ckpt.display().to_string(), hash_hex(&std::fs::read(ckpt).map_err(|e| CmdError::data(e.to_string()))?)),
    ];
    record_artifacts(out, &written, &inputs, &cfg.canonical_text(), cfg.seed)?;
    println!("encoded {} atom latent files", stems.len());
    Ok(())
}

pub fn fit_codebook_cmd(
    cfg: &PipelineConfig,
    latents_dir: &Path,
    out_file: &Path,
    codes_out: Option<&Path>,
) -> Result<(), CmdError> {
    let files = list_files(latents_dir, "mlat")?;
    let mut all = Vec::new();
    let mut per_seq: Vec<(String, LatentSequence)> = Vec::new();
    let mut dim = 0usize;
    for p in &files {
        let ls = read_latents(p).map_err(|e| CmdError::data(format!("{}: {e}", p.display())))?;
        dim = ls.dim;
        all.extend_from_slice(&ls.tokens);
        per_seq.push((stem(p), ls));
    }
    let n = all.len() / dim;
    let cb = fit_kmeans(&all, n, dim, cfg.codebook_k, cfg.seed)
        .map_err(|e| CmdError::data(e.to_string()))?;
    if let Some(parent) = out_file.parent() {
        ensure_dir(parent)?;
    }
    write_codebook(&cb, out_file).map_err(|e| CmdError::data(e.to_string()))?;
    let inputs = vec![dir_hash(latents_dir, "mlat")?];
    if let Some(parent) = out_file.parent() {
        record_artifacts(parent, &[out_file.to_path_buf()], &inputs, &cfg.canonical_text(), cfg.seed)?;
    }

    if let Some(codes_dir) = codes_out {
        ensure_dir(codes_dir)?;
        let mut written = Vec::new();
        for (name, ls) in &per_seq {
            let codes = cb
                .assign_all(&ls.tokens, ls.count)
                .map_err(|e| CmdError::data(e.to_string()))?;
            let text: Vec<String> = codes.iter().map(|c| c.to_string()).collect();
            let path = codes_dir.join(format!("{name}.codes"));
            motif_core::pose::atomic_write(&path, (text.join(" ") + "\n").as_bytes())
                .map_err(|e| CmdError::data(e.to_string()))?;
            written.push(path);
        }
        record_artifacts(codes_dir, &written, &inputs, &cfg.canonical_text(), cfg.seed)?;
    }
    println!("fitted codebook with k={} over {n} tokens", cfg.codebook_k);
    Ok(())
}

pub fn mine_motifs_cmd(cfg: &PipelineConfig, codes_dir: &Path, out: &Path) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let codes = load_codes(codes_dir)?;
    let corpus: Vec<Vec<u16>> = codes.iter().map(|(_, c)| c.clone()).collect();
    let miner_cfg = cfg.miner();
    let patterns = mine_patterns(&corpus, &miner_cfg).map_err(|e| CmdError::data(e.to_string()))?;
    let pat_path = out.join("patterns.txt");
    write_patterns(&patterns, &pat_path).map_err(|e| CmdError::data(e.to_string()))?;
    let mut written = vec![pat_path];
    let mut total_pieces = 0usize;
    for (name, seq) in &codes {
        let cover = minimal_cover(seq, &patterns, &miner_cfg);
        total_pieces += cover.cover_size;
        let path = out.join(format!("{name}.cover"));
        write_cover(&cover, &path).map_err(|e| CmdError::data(e.to_string()))?;
        written.push(path);
    }
    let inputs = vec![dir_hash(codes_dir, "codes")?];
    record_artifacts(out, &written, &inputs, &cfg.canonical_text(), cfg.seed)?;
    println!(
        "mined {} patterns; covered {} sequences with {total_pieces} pieces",
        patterns.patterns.len(),
        codes.len()
    );
    Ok(())
}

pub fn encode_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    segs: &Path,
    covers: &Path,
    ckpt: &Path,
    out: &Path,
) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let (stems, poses5, atom_maps) = load_training_inputs(cfg, data, segs)?;
    let motif_maps = load_motif_maps(covers, &stems, &atom_maps)?;
    let params = load_model_params(ckpt)?;
    let model_cfg = cfg.model();
    let mut written = Vec::new();
    for i in 0..stems.len() {
        let (_, motifs) =
            encode_sequence(&params, &model_cfg, &poses5[i], &atom_maps[i], &motif_maps[i])
                .map_err(|e| CmdError::data(format!("{}: {e}", stems[i])))?;
        let path = out.join(format!("{}.mlat", stems[i]));
        write_latents(&motifs, &path).map_err(|e| CmdError::data(e.to_string()))?;
        written.push(path);
    }
    let inputs = vec![
        dir_hash(data, "mseq")?,
        dir_hash(segs, "seg")?,
        dir_hash(covers, "cover")?,
        (ckpt.display().to_string(), hash_hex(&std::fs::read(ckpt).map_err(|e| CmdError::data(e.to_string()))?)),
    ];
    record_artifacts(out, &written, &inputs, &cfg.canonical_text(), cfg.seed)?;
    println!("encoded {} motif latent files", stems.len());
    Ok(())
}

/// Labels at the token rate: every `stride`-th frame label.
fn labels_at_token_rate(labels: &[u16], stride: usize) -> Vec<u16> {
    labels.iter().step_by(stride).copied().collect()
}

pub fn train_head_cmd(
    cfg: &PipelineConfig,
    task: &str,
    latents_dir: &Path,
    data: &Path,
    decoder: Option<&Path>,
    out: &Path,
) -> Result<(), CmdError> {
    ensure_dir(out)?;
    let seqs = load_sequences(data)?;
    let stems: Vec<String> = seqs.iter().map(|(n, _)| n.clone()).collect();
    let latents = load_latent_files(latents_dir, &stems)?;
    let head_cfg = cfg.head();
    let tcfg = cfg.head_trainer();
    let token_fps = cfg.seg_token_fps as f32;
    let stride = (cfg.seg_input_fps / cfg.seg_token_fps).round() as usize;

    let (params, name) = match task {
        "recog" => {
            let labels30 = load_label_files(data, &stems)?;
            let labels5: Vec<Vec<u16>> =
                labels30.iter().map(|l| labels_at_token_rate(l, stride)).collect();
            let (p, _) = train_recognition(&latents, &labels5, &head_cfg, &tcfg)
                .map_err(|e| CmdError::data(e.to_string()))?;
            (p, "recog.mckp")
        }
        "decode" => {
            let poses5: Vec<PoseSequence> = seqs
                .iter()
                .map(|(n, s)| downsample(s, token_fps).map_err(|e| CmdError::data(format!("{n}: {e}"))))
                .collect::<Result<_, _>>()?;
            let (p, _) = train_decoder(&latents, &poses5, &head_cfg, &tcfg)
                .map_err(|e| CmdError::data(e.to_string()))?;
            (p, "decoder.mckp")
        }
        "predict" | "interp" => {
            let dec_path = decoder.ok_or_else(|| {
                CmdError::usage(format!("--decoder is required for task {task}"))
            })?;
            let dec = read_checkpoint::<f32>(dec_path)
                .map_err(|e| CmdError::data(e.to_string()))?;
            let poses5: Vec<PoseSequence> = seqs
                .iter()
                .map(|(n, s)| downsample(s, token_fps).map_err(|e| CmdError::data(format!("{n}: {e}"))))
                .collect::<Result<_, _>>()?;
            if task == "predict" {
                let (p, _) = train_predictor(&latents, &poses5, &dec, &head_cfg, &tcfg)
                    .map_err(|e| CmdError::data(e.to_string()))?;
                (p, "predictor.mckp")
            } else {
                let (p, _) = train_interpolator(
                    &latents,
                    &poses5,
                    &dec,
                    &head_cfg,
                    &tcfg,
                    (4.0, 8.0),
                    cfg.seg_token_fps,
                )
                .map_err(|e| CmdError::data(e.to_string()))?;
                (p, "interp.mckp")
            }
        }
        other => return Err(CmdError::usage(format!("unknown head task {other:?}"))),
    };
    let path = out.join(name);
    write_checkpoint(&params, &path).map_err(|e| CmdError::data(e.to_string()))?;
    let inputs = vec![dir_hash(latents_dir, "mlat")?, dir_hash(data, "mseq")?];
    record_artifacts(out, &[path], &inputs, &cfg.canonical_text(), cfg.seed)?;
    println!("trained {task} head");
    Ok(())
}

/// Bank of labeled motif tokens: one entry per motif, labeled by majority
/// vote over its frames' labels at the token rate.
pub fn build_token_bank(
    latents: &[LatentSequence],
    labels5: &[Vec<u16>],
) -> Result<Vec<LabeledToken>, CmdError> {
    let mut bank = Vec::new();
    for (ls, labels) in latents.iter().zip(labels5) {
        if ls.frames() != labels.len() {
            return Err(CmdError::data(format!(
                "latents cover {} frames, labels {}",
                ls.frames(),
                labels.len()
            )));
        }
        let mut at = 0usize;
        for k in 0..ls.count {
            let len = ls.lengths[k];
            let label = majority_label(&labels[at..at + len]);
            bank.push(LabeledToken { token: ls.token(k).to_vec(), label, segment_len: len });
            at += len;
        }
    }
    Ok(bank)
}

#[allow(clippy::too_many_arguments)]
pub fn eval_cmd(
    cfg: &PipelineConfig,
    task: &str,
    latents_dir: &Path,
    data: &Path,
    train_latents: Option<&Path>,
    train_data: Option<&Path>,
    head: Option<&Path>,
    decoder: Option<&Path>,
    out: &Path,
) -> Result<(), CmdError> {
    ensure_dir(out)?;
    // The DAG gate: refuse inputs whose recorded hashes no longer match.
    verify_dir(latents_dir, "mlat")?;
    verify_dir(data, "mseq")?;

    let seqs = load_sequences(data)?;
    let stems: Vec<String> = seqs.iter().map(|(n, _)| n.clone()).collect();
    let latents = load_latent_files(latents_dir, &stems)?;
    let stride = (cfg.seg_input_fps / cfg.seg_token_fps).round() as usize;
    let token_fps = cfg.seg_token_fps as f32;
    let head_cfg = cfg.head();

    let mut report = String::new();
    let mut csv = String::from("sequence,score\n");

    match task {
        "knn" => {
            let tr_lat_dir = train_latents
                .ok_or_else(|| CmdError::usage("--train-latents required for knn".into()))?;
            let tr_data = train_data
                .ok_or_else(|| CmdError::usage("--train-data required for knn".into()))?;
            verify_dir(tr_lat_dir, "mlat")?;
            let train_seqs = load_sequences(tr_data)?;
            let train_stems: Vec<String> = train_seqs.iter().map(|(n, _)| n.clone()).collect();
            let train_latents = load_latent_files(tr_lat_dir, &train_stems)?;
            let train_labels30 = load_label_files(tr_data, &train_stems)?;
            let train_labels5: Vec<Vec<u16>> =
                train_labels30.iter().map(|l| labels_at_token_rate(l, stride)).collect();
            let bank = build_token_bank(&train_latents, &train_labels5)?;

            let test_labels30 = load_label_files(data, &stems)?;
            let test_labels5: Vec<Vec<u16>> =
                test_labels30.iter().map(|l| labels_at_token_rate(l, stride)).collect();

            let mut top1 = 0usize;
            let mut top3 = 0usize;
            let mut total = 0usize;
            for ((ls, labels), name) in latents.iter().zip(&test_labels5).zip(&stems) {
                let mut seq_hits = 0usize;
                let mut at = 0usize;
                for k in 0..ls.count {
                    let len = ls.lengths[k];
                    let truth = majority_label(&labels[at..at + len]);
                    let (_, scores) =
                        knn_classify(ls.token(k), &bank, cfg.knn_k, cfg.knn_tau, cfg.data_classes)
                            .map_err(|e| CmdError::data(e.to_string()))?;
                    if in_top_n(&scores, truth, 1) {
                        top1 += 1;
                        seq_hits += 1;
                    }
                    if in_top_n(&scores, truth, 3) {
                        top3 += 1;
                    }
                    total += 1;
                    at += len;
                }
                csv.push_str(&format!("{name},{:.6}\n", seq_hits as f64 / ls.count as f64));
            }
            report.push_str(&format!("task: knn\ntokens: {total}\n"));
            report.push_str(&format!("top1: {:.4}\n", top1 as f64 / total as f64));
            report.push_str(&format!("top3: {:.4}\n", top3 as f64 / total as f64));
        }
        "recog" => {
            let head_path =
                head.ok_or_else(|| CmdError::usage("--head required for recog".into()))?;
            let params = read_checkpoint::<f32>(head_path)
                .map_err(|e| CmdError::data(e.to_string()))?;
            let labels30 = load_label_files(data, &stems)?;
            let labels5: Vec<Vec<u16>> =
                labels30.iter().map(|l| labels_at_token_rate(l, stride)).collect();
            let (top1, top3) = eval_recognition(&latents, &labels5, &params, &head_cfg)
                .map_err(|e| CmdError::data(e.to_string()))?;
            for name in &stems {
                csv.push_str(&format!("{name},{top1:.6}\n"));
            }
            report.push_str(&format!("task: recog\ntop1: {top1:.4}\ntop3: {top3:.4}\n"));
        }
        "predict" => {
            let head_path =
                head.ok_or_else(|| CmdError::usage("--head required for predict".into()))?;
            let dec_path =
                decoder.ok_or_else(|| CmdError::usage("--decoder required for predict".into()))?;
            let predictor = read_checkpoint::<f32>(head_path)
                .map_err(|e| CmdError::data(e.to_string()))?;
            let dec =
                read_checkpoint::<f32>(dec_path).map_err(|e| CmdError::data(e.to_string()))?;
            let horizon = (3.0 * cfg.seg_token_fps).round() as usize;
            let mut errors = Vec::new();
            for ((name, seq), ls) in seqs.iter().zip(&latents) {
                let poses5 =
                    downsample(seq, token_fps).map_err(|e| CmdError::data(e.to_string()))?;
                if let Some(err) =
                    prediction_mpjpe(ls, &poses5, &predictor, &dec, &head_cfg, horizon)?
                {
                    csv.push_str(&format!("{name},{err:.4}\n"));
                    errors.push(err);
                }
            }
            let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
            report.push_str(&format!(
                "task: predict\nsequences: {}\nmpjpe_mm: {mean:.3}\n",
                errors.len()
            ));
        }
        "interp" => {
            let head_path =
                head.ok_or_else(|| CmdError::usage("--head required for interp".into()))?;
            let dec_path =
                decoder.ok_or_else(|| CmdError::usage("--decoder required for interp".into()))?;
            let interp = read_checkpoint::<f32>(head_path)
                .map_err(|e| CmdError::data(e.to_string()))?;
            let dec =
                read_checkpoint::<f32>(dec_path).map_err(|e| CmdError::data(e.to_string()))?;
            let mut errors = Vec::new();
            let mut rng = rand_chacha_seeded(cfg.seed);
            for ((name, seq), ls) in seqs.iter().zip(&latents) {
                let poses5 =
                    downsample(seq, token_fps).map_err(|e| CmdError::data(e.to_string()))?;
                let gap = sample_gap(&ls.lengths, (4.0, 8.0), cfg.seg_token_fps, &mut rng);
                if gap.is_empty() {
                    continue;
                }
                let err = interpolation_mpjpe(ls, &poses5, &interp, &dec, &head_cfg, &gap)?;
                csv.push_str(&format!("{name},{err:.4}\n"));
                errors.push(err);
            }
            let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
            report.push_str(&format!(
                "task: interp\nsequences: {}\nmpjpe_mm: {mean:.3}\n",
                errors.len()
            ));
        }
        other => return Err(CmdError::usage(format!("unknown eval task {other:?}"))),
    }

    motif_core::pose::atomic_write(&out.join("metrics.txt"), report.as_bytes())
        .map_err(|e| CmdError::data(e.to_string()))?;
    motif_core::pose::atomic_write(&out.join("per_sequence.csv"), csv.as_bytes())
        .map_err(|e| CmdError::data(e.to_string()))?;
    print!("{report}");
    Ok(())
}

fn rand_chacha_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Rollout MPJPE over the final `horizon` frames; `None` when the sequence
/// has no room for a history/target split.
pub fn prediction_mpjpe(
    ls: &LatentSequence,
    poses5: &PoseSequence,
    predictor: &ParamStore<f32>,
    decoder: &ParamStore<f32>,
    head_cfg: &motif_core::heads::HeadConfig,
    horizon: usize,
) -> Result<Option<f64>, CmdError> {
    let total = poses5.len;
    if total <= horizon {
        return Ok(None);
    }
    let cut = total - horizon;
    let mut hist_count = 0usize;
    let mut hist_frames = 0usize;
    for (k, &len) in ls.lengths.iter().enumerate() {
        if hist_frames + len > cut {
            break;
        }
        hist_frames += len;
        hist_count = k + 1;
    }
    if hist_count == 0 || hist_frames + horizon > total {
        return Ok(None);
    }
    let history = LatentSequence {
        tokens: ls.tokens[..hist_count * ls.dim].to_vec(),
        count: hist_count,
        dim: ls.dim,
        lengths: ls.lengths[..hist_count].to_vec(),
    };
    let pred = rollout(&history, predictor, decoder, head_cfg, horizon)
        .map_err(|e| CmdError::data(e.to_string()))?;
    let gt = poses5.slice_frames(hist_frames, hist_frames + horizon);
    let frames: Vec<usize> = (0..horizon).collect();
    let err = mpjpe(&pred, &gt, &frames).map_err(|e| CmdError::data(e.to_string()))?;
    Ok(Some(err))
}

/// Interpolation MPJPE over the frames of the gap motifs.
pub fn interpolation_mpjpe(
    ls: &LatentSequence,
    poses5: &PoseSequence,
    interp: &ParamStore<f32>,
    decoder: &ParamStore<f32>,
    head_cfg: &motif_core::heads::HeadConfig,
    gap: &[usize],
) -> Result<f64, CmdError> {
    let observed_ids: Vec<usize> =
        (0..ls.count).filter(|i| gap.binary_search(i).is_err()).collect();
    let mut tape: Tape<f32> = Tape::new();
    let values: Vec<f32> = ls.tokens.clone();
    let full = tape.input(values, ls.count, ls.dim);
    let observed = tape.gather_rows(full, &observed_ids);
    let out = interpolate_forward(&mut tape, interp, head_cfg, false, observed, &observed_ids, ls.count, true)
        .map_err(|e| CmdError::data(e.to_string()))?;
    let decoded = decoder_forward(&mut tape, decoder, head_cfg, false, out, &ls.lengths, true)
        .map_err(|e| CmdError::data(e.to_string()))?;
    let vals = tape.values(decoded).to_vec();
    let pred = PoseSequence::new(vals, poses5.len, poses5.dim, poses5.fps, "interp");
    // Frames belonging to the gap motifs.
    let mut frames = Vec::new();
    let mut at = 0usize;
    for (k, &len) in ls.lengths.iter().enumerate() {
        if gap.binary_search(&k).is_ok() {
            frames.extend(at..at + len);
        }
        at += len;
    }
    mpjpe(&pred, poses5, &frames).map_err(|e| CmdError::data(e.to_string()))
}

pub fn inspect_cmd(file: &Path) -> Result<(), CmdError> {
    let name = file.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = file.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match ext.as_str() {
        "seg" => {
            let map = read_seg_file(file)?;
            println!("{name}: {} segments over {} frames", map.count(), map.len);
            let lengths = map.lengths();
            let mean = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
            println!(
                "lengths: min {} max {} mean {mean:.2}",
                lengths.iter().min().unwrap(),
                lengths.iter().max().unwrap()
            );
        }
        "mcbk" => {
            let cb = read_codebook(file).map_err(|e| CmdError::data(e.to_string()))?;
            println!("{name}: codebook k={} dim={}", cb.k, cb.dim);
            for c in 0..cb.k.min(8) {
                let row = &cb.centroids[c * cb.dim..(c + 1) * cb.dim];
                let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
                println!("  centroid {c}: |c| = {norm:.4}");
            }
        }
        "cover" => {
            let cover = motif_core::mine::read_cover(file)
                .map_err(|e| CmdError::data(e.to_string()))?;
            println!("{name}: {} pieces", cover.cover_size);
            let singletons = cover
                .assignments
                .iter()
                .filter(|(_, _, p)| matches!(p, motif_core::mine::Piece::Singleton))
                .count();
            println!("  singleton pieces: {singletons}");
            for &(start, len, piece) in cover.assignments.iter().take(10) {
                println!("  at {start} len {len}: {piece:?}");
            }
        }
        "txt" => {
            let set = read_patterns(file).map_err(|e| CmdError::data(e.to_string()))?;
            println!("{name}: {} patterns", set.patterns.len());
            for p in set.patterns.iter().take(10) {
                println!("  id {} support {} len {} {:?}", p.id, p.support, p.canonical.len(), p.canonical);
            }
        }
        "mseq" => {
            let seq = read_sequence(file).map_err(|e| CmdError::data(e.to_string()))?;
            println!("{name}: {} frames x {} features @ {} fps", seq.len, seq.dim, seq.fps);
        }
        "lbl" => {
            let labels =
                motif_core::pose::read_labels(file).map_err(|e| CmdError::data(e.to_string()))?;
            let mut counts: std::collections::BTreeMap<u16, usize> = Default::default();
            for &l in &labels {
                *counts.entry(l).or_insert(0) += 1;
            }
            println!("{name}: {} frame labels, histogram {counts:?}", labels.len());
        }
        "mlat" => {
            let ls = read_latents(file).map_err(|e| CmdError::data(e.to_string()))?;
            println!("{name}: {} tokens x {} dims over {} frames", ls.count, ls.dim, ls.frames());
        }
        "mckp" => {
            let store =
                read_checkpoint::<f32>(file).map_err(|e| CmdError::data(e.to_string()))?;
            println!("{name}: {} tensors", store.len());
            for (i, (tname, t)) in store.iter().enumerate() {
                if i >= 12 {
                    println!("  ...");
                    break;
                }
                println!("  {tname}: {:?}", t.shape);
            }
        }
        other => {
            return Err(CmdError::usage(format!("don't know how to inspect .{other} files")))
        }
    }
    Ok(())
}
