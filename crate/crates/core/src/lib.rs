//! Label-free detection of noisy single-lead ECG windows.
//!
//! A 1-D convolutional autoencoder is trained on clean windows only. Its
//! encoder maps each window to a pooled latent vector, the training latents
//! are partitioned with a Gaussian mixture, and a test window is scored by
//! the negated minimum Mahalanobis distance to the cluster statistics.
//! Scores from several cluster counts are averaged into an ensemble.
//!
//! Module map:
//!
//! * [`signal`]: dataset container, `ECGW` binary and CSV formats, windowing,
//!   normalization and splitting.
//! * [`nn`]: the small differentiable kernel (conv / transposed conv, ReLU,
//!   MSE, AdamW, finite-difference checks).
//! * [`cae`]: the autoencoder, its training loop and checkpoints.
//! * [`detect`]: GMM fitting, cluster detectors and the ensemble.
//! * [`eval`]: AUROC / AUPRC, PCA and report tables.
//! * [`synth`]: seeded synthetic ECG and noise corpora.
//! * [`pipeline`]: end-to-end runs shared by the CLI and the acceptance suite.

pub mod cae;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
