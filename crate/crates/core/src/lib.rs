//! U-Net image denoiser whose pooling layers are replaced by a fused
//! Haar-wavelet + PCA downsampling and whose unpooling is the inverse
//! wavelet transform.
//!
//! The crate is organised bottom-up:
//!
//! - [`imagecore`]: image tensors, PNG/PNM I/O, reflection padding, patches, noise synthesis
//! - [`transforms`]: orthonormal Haar DWT/IDWT, PCA patch projection, fused downsampling
//! - [`neuralnet`]: tape-based reverse-mode autodiff with the operators the model needs
//! - [`model`]: the encoder/decoder network predicting a residual noise map
//! - [`training`]: residual MSE loss, Adam, warmup/cosine schedule, checkpoints
//! - [`metrics`]: MSE, PSNR, SSIM and report tables
//! - [`pipeline`]: dataset ingestion, splits, the wavelet soft-threshold baseline, experiments
//! - [`cli`]: the `wavunet` command line

pub mod cli;
pub mod error;
pub mod imagecore;
pub mod metrics;
pub mod model;
pub mod neuralnet;
pub mod pipeline;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
pub use imagecore::{ImageTensor, NoiseKind, NoiseSpec};



pub use metrics::{MetricsConfig, MetricsReport, Psnr};
pub use model::{BasisPolicy, Model, ModelConfig};
pub use training::{Checkpoint, TrainConfig};
pub use transforms::{FusionConfig, PcaBasis, SubbandStack};
