//! Flat key=value pipeline configuration.
//!
//! One schema covers every stage; a config file supplies defaults and
//! explicit CLI flags override individual keys. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use motif_core::heads::HeadConfig;
use motif_core::mine::MinerConfig;
use motif_core::model::ModelConfig;
use motif_core::pose::{feature_dim, GeneratorSpec};
use motif_core::segment::SegmenterConfig;
use motif_core::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub deterministic: bool,

    pub data_classes: usize,
    pub data_joints: usize,
    pub data_sequences: usize,
    pub data_seconds: f64,
    pub data_noise: f64,

    pub seg_window: usize,
    pub seg_tau1: f64,
    pub seg_refractory: f64,
    pub seg_input_fps: f64,
    pub seg_token_fps: f64,

    pub codebook_k: usize,

    pub miner_pmax: usize,
    pub miner_omax: u32,
    pub miner_omin: u32,
    pub miner_hmin: usize,
    pub miner_hmax: usize,

    pub model_dim: usize,
    pub model_heads: usize,
    pub model_enc_layers: usize,
    pub model_lf_layers: usize,
    pub model_pred_layers: usize,

    pub train_mask_ratio: f64,
    pub train_ema_decay: f64,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr_peak: f64,
    pub train_lr_floor: f64,
    pub train_warmup: u64,
    pub train_total_iters: u64,
    pub train_weight_decay: f64,
    pub train_alpha: f64,

    pub head_pred_dim: usize,
    pub head_epochs: usize,

    pub knn_k: usize,
    pub knn_tau: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        // Desk-scale defaults; paper-scale values are reachable through the
        // same keys.
        PipelineConfig {
            seed: 0,
            deterministic: true,
            data_classes: 5,
            data_joints: 4,
            data_sequences: 200,
            data_seconds: 30.0,
            data_noise: 0.01,
            seg_window: 5,
            seg_tau1: 0.005,
            seg_refractory: 0.5,
            seg_input_fps: 30.0,
            seg_token_fps: 5.0,
            codebook_k: 32,
            miner_pmax: 20,
            miner_omax: 15,
            miner_omin: 5,
            miner_hmin: 0,
            miner_hmax: 4,
            model_dim: 32,
            model_heads: 2,
            model_enc_layers: 4,
            model_lf_layers: 4,
            model_pred_layers: 3,
            train_mask_ratio: 0.5,
            train_ema_decay: 0.996,
            train_epochs: 50,
            train_batch: 8,
            train_lr_peak: 1e-3,
            train_lr_floor: 1e-6,
            train_warmup: 100,
            train_total_iters: 1250,
            train_weight_decay: 0.1,
            train_alpha: 0.05,
            head_pred_dim: 8,
            head_epochs: 30,
            knn_k: 20,
            knn_tau: 0.07,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl PipelineConfig {
    /// Applies `key=value` lines; `#` starts a comment. Unknown keys and
    /// malformed values are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "seed" => self.seed = p(key, value)?,
            "deterministic" => self.deterministic = p(key, value)?,
            "data.classes" => self.data_classes = p(key, value)?,
            "data.joints" => self.data_joints = p(key, value)?,
            "data.sequences" => self.data_sequences = p(key, value)?,
            "data.seconds" => self.data_seconds = p(key, value)?,
            "data.noise" => self.data_noise = p(key, value)?,
            "segmenter.window" => self.seg_window = p(key, value)?,
            "segmenter.tau1" => self.seg_tau1 = p(key, value)?,
            "segmenter.refractory" => self.seg_refractory = p(key, value)?,
            "segmenter.input_fps" => self.seg_input_fps = p(key, value)?,
            "segmenter.token_fps" => self.seg_token_fps = p(key, value)?,
            "codebook.k" => self.codebook_k = p(key, value)?,
            "miner.pmax" => self.miner_pmax = p(key, value)?,
            "miner.omax" => self.miner_omax = p(key, value)?,
            "miner.omin" => self.miner_omin = p(key, value)?,
            "miner.hmin" => self.miner_hmin = p(key, value)?,
            "miner.hmax" => self.miner_hmax = p(key, value)?,
            "model.dim" => self.model_dim = p(key, value)?,
            "model.heads" => self.model_heads = p(key, value)?,
            "model.enc_layers" => self.model_enc_layers = p(key, value)?,
            "model.lf_layers" => self.model_lf_layers = p(key, value)?,
            "model.pred_layers" => self.model_pred_layers = p(key, value)?,
            "train.mask_ratio" => self.train_mask_ratio = p(key, value)?,
            "train.ema_decay" => self.train_ema_decay = p(key, value)?,
            "train.epochs" => self.train_epochs = p(key, value)?,
            "train.batch" => self.train_batch = p(key, value)?,
            "train.lr_peak" => self.train_lr_peak = p(key, value)?,
            "train.lr_floor" => self.train_lr_floor = p(key, value)?,
            "train.warmup" => self.train_warmup = p(key, value)?,
            "train.total_iters" => self.train_total_iters = p(key, value)?,
            "train.weight_decay" => self.train_weight_decay = p(key, value)?,
            "train.alpha" => self.train_alpha = p(key, value)?,
            "head.pred_dim" => self.head_pred_dim = p(key, value)?,
            "head.epochs" => self.head_epochs = p(key, value)?,
            "knn.k" => self.knn_k = p(key, value)?,
            "knn.tau" => self.knn_tau = p(key, value)?,
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text rendering (sorted keys); its hash identifies the
    /// configuration in manifests.
    pub fn canonical_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("seed", self.seed.to_string());
        kv.insert("deterministic", self.deterministic.to_string());
        kv.insert("data.classes", self.data_classes.to_string());
        kv.insert("data.joints", self.data_joints.to_string());
        kv.insert("data.sequences", self.data_sequences.to_string());
        kv.insert("data.seconds", self.data_seconds.to_string());
        kv.insert("data.noise", self.data_noise.to_string());
        kv.insert("segmenter.window", self.seg_window.to_string());
        kv.insert("segmenter.tau1", self.seg_tau1.to_string());
        kv.insert("segmenter.refractory", self.seg_refractory.to_string());
        kv.insert("segmenter.input_fps", self.seg_input_fps.to_string());
        kv.insert("segmenter.token_fps", self.seg_token_fps.to_string());
        kv.insert("codebook.k", self.codebook_k.to_string());
        kv.insert("miner.pmax", self.miner_pmax.to_string());
        kv.insert("miner.omax", self.miner_omax.to_string());
        kv.insert("miner.omin", self.miner_omin.to_string());
        kv.insert("miner.hmin", self.miner_hmin.to_string());
        kv.insert("miner.hmax", self.miner_hmax.to_string());
        kv.insert("model.dim", self.model_dim.to_string());
        kv.insert("model.heads", self.model_heads.to_string());
        kv.insert("model.enc_layers", self.model_enc_layers.to_string());
        kv.insert("model.lf_layers", self.model_lf_layers.to_string());
        kv.insert("model.pred_layers", self.model_pred_layers.to_string());
        kv.insert("train.mask_ratio", self.train_mask_ratio.to_string());
        kv.insert("train.ema_decay", self.train_ema_decay.to_string());
        kv.insert("train.epochs", self.train_epochs.to_string());
        kv.insert("train.batch", self.train_batch.to_string());
        kv.insert("train.lr_peak", self.train_lr_peak.to_string());
        kv.insert("train.lr_floor", self.train_lr_floor.to_string());
        kv.insert("train.warmup", self.train_warmup.to_string());
        kv.insert("train.total_iters", self.train_total_iters.to_string());
        kv.insert("train.weight_decay", self.train_weight_decay.to_string());
        kv.insert("train.alpha", self.train_alpha.to_string());
        kv.insert("head.pred_dim", self.head_pred_dim.to_string());
        kv.insert("head.epochs", self.head_epochs.to_string());
        kv.insert("knn.k", self.knn_k.to_string());
        kv.insert("knn.tau", self.knn_tau.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            classes: self.data_classes,
            joints: self.data_joints,
            sequences: self.data_sequences,
            seconds: self.data_seconds as f32,
            noise_sigma: self.data_noise as f32,
            ..GeneratorSpec::default()
        }
    }

    pub fn segmenter(&self) -> SegmenterConfig {
        SegmenterConfig {
            window: self.seg_window,
            tau1: self.seg_tau1,
            refractory: self.seg_refractory,
            input_fps: self.seg_input_fps,
            token_fps: self.seg_token_fps,
        }
    }

    pub fn miner(&self) -> MinerConfig {
        MinerConfig {
            p_max: self.miner_pmax,
            o_max: self.miner_omax,
            o_min: self.miner_omin,
            h_min: self.miner_hmin,
            h_max: self.miner_hmax,
            alphabet: self.codebook_k,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            input_dim: feature_dim(self.data_joints),
            dim: self.model_dim,
            heads: self.model_heads,
            enc_layers: self.model_enc_layers,
            lf_layers: self.model_lf_layers,
            pred_layers: self.model_pred_layers,
            ffn_mult: 4,
        }
    }

    pub fn trainer(&self) -> TrainConfig {
        TrainConfig {
            mask_ratio: self.train_mask_ratio,
            ema_decay: self.train_ema_decay,
            epochs: self.train_epochs,
            batch: self.train_batch,
            lr_peak: self.train_lr_peak,
            lr_floor: self.train_lr_floor,
            warmup: self.train_warmup,
            total_iters: self.train_total_iters,
            weight_decay: self.train_weight_decay,
            alpha: self.train_alpha,
            seed: self.seed,
        }
    }

    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            token_dim: self.model_dim,
            heads: self.model_heads,
            recog_layers: 1,
            dec_layers: 4,
            pred_layers: 4,
            pred_dim: self.head_pred_dim,
            interp_layers: 4,
            ffn_mult: 4,
            num_classes: self.data_classes,
            pose_dim: feature_dim(self.data_joints),
            max_segment_len: 150,
        }
    }

    pub fn head_trainer(&self) -> TrainConfig {
        TrainConfig { epochs: self.head_epochs, ..self.trainer() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply_text("bogus.key=1\n").is_err());
    }

    #[test]
    fn values_and_comments_parse() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("# comment\ncodebook.k=64\ntrain.epochs=7 # trailing\n").unwrap();
        assert_eq!(cfg.codebook_k, 64);
        assert_eq!(cfg.train_epochs, 7);
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.set("model.dim", "16").unwrap();
        let text = cfg.canonical_text();
        let mut other = PipelineConfig::default();
        other.apply_text(&text).unwrap();
        assert_eq!(other.canonical_text(), text);
    }
}
