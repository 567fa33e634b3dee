//! Multiparametric residual vision-transformer generator for MR image
//! translation (structural T1w/FLAIR slices to ADC maps), with everything
//! needed to train and evaluate it on a CPU:
//!
//! - [`tensor`]: dense tensors and a reverse-mode tape
//! - [`attention`]: exact attention, naive and tiled with online softmax
//! - [`model`]: residual encoder/decoder around a transformer bottleneck
//! - [`train`]: AdamW on L1 with flip augmentation, early stopping, checkpoints
//! - [`metrics`]: MSE, PSNR, SSIM and paired t-tests
//! - [`data`]: NIfTI-1 I/O, normalization, splits, slices, synthetic phantoms
//! - [`complexity`]: parameter/FLOP sweeps over residual depth
//! - [`cli`]: run configuration and the subcommands behind the `mprvit` binary

pub mod attention;
pub mod cli;
pub mod complexity;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
