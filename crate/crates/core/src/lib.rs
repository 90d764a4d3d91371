//! Unsupervised discovery of hierarchical motion segments from pose-feature
//! sequences, with JEPA-style masked latent-token pretraining and downstream
//! heads for recognition, prediction, and interpolation.
//!
//! The pipeline, bottom to top:
//!
//! 1. [`pose`] — pose-feature sequences, binary I/O, downsampling, and a
//!    synthetic motion-primitive corpus generator.
//! 2. [`segment`] — action-atom boundary detection from nonlinear changes in
//!    joint trajectories at 30 fps, mapped to 5 fps token segments.
//! 3. [`codebook`] — k-means discretization of atom latents into codes.
//! 4. [`mine`] — frequent code-pattern mining and minimal non-overlapping
//!    covers that define action-motif segments.
//! 5. [`autodiff`] — dense-tensor reverse-mode differentiation, attention
//!    primitives, losses, AdamW, and LR scheduling.
//! 6. [`model`] — the nested Encoder/LatentFormer feature extractor, the
//!    masked-token predictor, and the EMA target extractor.
//! 7. [`train`] — the two-step pretraining procedure with hierarchical
//!    masking and the global/local loss decomposition.
//! 8. [`heads`] — k-NN classification, per-frame recognition, pose decoding,
//!    autoregressive prediction, and latent interpolation.
//! 9. [`manifest`] — artifact hashing and pipeline manifests.

pub mod autodiff;
pub mod codebook;
pub mod heads;
pub mod manifest;
pub mod mine;
pub mod model;
pub mod pose;
pub mod segment;
pub mod train;
