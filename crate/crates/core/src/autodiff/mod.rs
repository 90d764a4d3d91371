//! Dense-tensor reverse-mode differentiation and the optimizer stack.
//!
//! The engine is a define-by-run tape over 2-D value buffers. A forward pass
//! appends nodes to a [`Tape`]; [`Tape::backward`] walks the tape in reverse
//! and accumulates gradients for every parameter leaf. Math is generic over
//! [`Real`] so training runs in `f32` while gradient verification runs the
//! identical code in `f64`.

mod attention;
mod optim;
mod params;
mod tape;

pub use attention::{attention, AttentionSpec};
pub use optim::{adamw_step, ema_update, lr_at, AdamConfig, AdamState};
pub use params::{read_checkpoint, write_checkpoint, ParamStore};
pub use tape::{GradMap, NodeId, Tape};

use std::fmt;

/// Scalar type the engine is generic over. `f32` for training, `f64` for
/// finite-difference verification.
pub trait Real:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn to_f32(self) -> f32;
    fn from_usize(x: usize) -> Self;

    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn tanh(self) -> Self;
    fn cos(self) -> Self;
    fn sin(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn from_f32(x: f32) -> Self {
                x as $t
            }
            fn to_f32(self) -> f32 {
                self as f32
            }
            fn from_usize(x: usize) -> Self {
                x as $t
            }

            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn ln_1p(self) -> Self {
                <$t>::ln_1p(self)
            }
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            fn powf(self, e: Self) -> Self {
                <$t>::powf(self, e)
            }
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Errors surfaced by the differentiable-op layer.
#[derive(Debug, Clone, PartialEq)]
pub enum AutodiffError {
    /// An attention row has no allowed key.
    AllMaskedRow { row: usize },
    /// Rotary encoding needs an even feature dimension.
    OddDimension { dim: usize },
    /// Parameter/gradient shapes disagree.
    ShapeMismatch { name: String, expected: usize, got: usize },
}

impl fmt::Display for AutodiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AutodiffError::AllMaskedRow { row } => {
                write!(f, "attention row {row} has every key masked out")
            }
            AutodiffError::OddDimension { dim } => {
                write!(f, "rotary encoding requires an even dimension, got {dim}")
            }
            AutodiffError::ShapeMismatch { name, expected, got } => {
                write!(f, "shape mismatch for {name}: expected {expected} values, got {got}")
            }
        }
    }
}

impl std::error::Error for AutodiffError {}
