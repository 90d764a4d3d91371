//! Pipeline CLI: synthetic corpus generation, atom segmentation, latent
//! encoding, codebook fitting, motif mining, the two pretraining steps,
//! head training, evaluation, and artifact inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifacts;
mod commands;
mod config;

use config::PipelineConfig;

/// A failed command with its process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

impl CmdError {
    pub fn usage(message: String) -> Self {
        CmdError { code: 1, message }
    }
    pub fn data(message: String) -> Self {
        CmdError { code: 2, message }
    }
    pub fn numeric(message: String) -> Self {
        CmdError { code: 3, message }
    }
}

impl From<String> for CmdError {
    fn from(message: String) -> Self {
        CmdError::data(message)
    }
}

#[derive(Parser)]
#[command(name = "motif", version, about = "Hierarchical motion-segment representation pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled motion corpus at 30 fps.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        joints: Option<usize>,
        #[arg(long)]
        seconds: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Detect action-atom boundaries and write token-rate segment files.
    SegmentAtoms {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau1: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        refractory: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stage-1 pretraining over atom segments.
    PretrainStage1 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        segs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Materialize stage-1 atom latents.
    EncodeAtoms {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        segs: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the k-means codebook over atom latents; optionally emit codes.
    FitCodebook {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        codes_out: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mine frequent code patterns and compute per-sequence minimal covers.
    MineMotifs {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pmax: Option<usize>,
        #[arg(long)]
        omax: Option<u32>,
        #[arg(long)]
        omin: Option<u32>,
        #[arg(long)]
        hmin: Option<usize>,
        #[arg(long)]
        hmax: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// End-to-end pretraining over motif segments from a stage-1 checkpoint.
    PretrainE2e {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        segs: PathBuf,
        #[arg(long)]
        covers: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Materialize stage-2 motif latents.
    Encode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        segs: PathBuf,
        #[arg(long)]
        covers: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a downstream head: recog, decode, predict, or interp.
    TrainHead {
        #[arg(long)]
        task: String,
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        decoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a task: knn, recog, predict, or interp.
    Eval {
        #[arg(long)]
        task: String,
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        train_latents: Option<PathBuf>,
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long)]
        decoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        knn_k: Option<usize>,
        #[arg(long)]
        knn_tau: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a human-readable summary of a pipeline artifact.
    Inspect {
        file: PathBuf,
    },
}

/// Base config, then the config file, then explicit flags.
fn build_config(
    file: &Option<PathBuf>,
    overrides: &[(&str, Option<String>)],
) -> Result<PipelineConfig, CmdError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = file {
        cfg.load_file(path).map_err(|e| CmdError::usage(e.to_string()))?;
    }
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| CmdError::usage(e.to_string()))?;
        }
    }
    Ok(cfg)
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|x| x.to_string())
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.cmd {
        Cmd::GenSynth { out, classes, sequences, joints, seconds, noise, seed, config } => {
            let cfg = build_config(
                &config,
                &[
                    ("data.classes", opt(&classes)),
                    ("data.sequences", opt(&sequences)),
                    ("data.joints", opt(&joints)),
                    ("data.seconds", opt(&seconds)),
                    ("data.noise", opt(&noise)),
                    ("seed", opt(&seed)),
                ],
            )?;
            commands::gen_synth(&cfg, &out)
        }
        Cmd::SegmentAtoms { input, out, tau1, window, refractory, config } => {
            let cfg = build_config(
                &config,
                &[
                    ("segmenter.tau1", opt(&tau1)),
                    ("segmenter.window", opt(&window)),
                    ("segmenter.refractory", opt(&refractory)),
                ],
            )?;
            commands::segment_atoms_cmd(&cfg, &input, &out)
        }
        Cmd::PretrainStage1 { data, segs, out, epochs, seed, config } => {
            let cfg = build_config(
                &config,
                &[("train.epochs", opt(&epochs)), ("seed", opt(&seed))],
            )?;
            commands::pretrain_stage1_cmd(&cfg, &data, &segs, &out)
        }
        Cmd::EncodeAtoms { data, segs, ckpt, out, config } => {
            let cfg = build_config(&config, &[])?;
            commands::encode_atoms_cmd(&cfg, &data, &segs, &ckpt, &out)
        }
        Cmd::FitCodebook { latents, out, codes_out, k, seed, config } => {
            let cfg = build_config(
                &config,
                &[("codebook.k", opt(&k)), ("seed", opt(&seed))],
            )?;
            commands::fit_codebook_cmd(&cfg, &latents, &out, codes_out.as_deref())
        }
        Cmd::MineMotifs { codes, out, pmax, omax, omin, hmin, hmax, config } => {
            let cfg = build_config(
                &config,
                &[
                    ("miner.pmax", opt(&pmax)),
                    ("miner.omax", opt(&omax)),
                    ("miner.omin", opt(&omin)),
                    ("miner.hmin", opt(&hmin)),
                    ("miner.hmax", opt(&hmax)),
                ],
            )?;
            commands::mine_motifs_cmd(&cfg, &codes, &out)
        }
        Cmd::PretrainE2e { data, segs, covers, init, out, epochs, seed, config } => {
            let cfg = build_config(
                &config,
                &[("train.epochs", opt(&epochs)), ("seed", opt(&seed))],
            )?;
            commands::pretrain_e2e_cmd(&cfg, &data, &segs, &covers, &init, &out)
        }
        Cmd::Encode { data, segs, covers, ckpt, out, config } => {
            let cfg = build_config(&config, &[])?;
            commands::encode_cmd(&cfg, &data, &segs, &covers, &ckpt, &out)
        }
        Cmd::TrainHead { task, latents, data, decoder, out, epochs, seed, config } => {
            let cfg = build_config(
                &config,
                &[("head.epochs", opt(&epochs)), ("seed", opt(&seed))],
            )?;
            commands::train_head_cmd(&cfg, &task, &latents, &data, decoder.as_deref(), &out)
        }
        Cmd::Eval {
            task,
            latents,
            data,
            train_latents,
            train_data,
            head,
            decoder,
            out,
            knn_k,
            knn_tau,
            seed,
            config,
        } => {
            let cfg = build_config(
                &config,
                &[("knn.k", opt(&knn_k)), ("knn.tau", opt(&knn_tau)), ("seed", opt(&seed))],
            )?;
            commands::eval_cmd(
                &cfg,
                &task,
                &latents,
                &data,
                train_latents.as_deref(),
                train_data.as_deref(),
                head.as_deref(),
                decoder.as_deref(),
                &out,
            )
        }
        Cmd::Inspect { file } => commands::inspect_cmd(&file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems (unknown flags, missing args) exit 1; help and
            // version requests exit 0.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
