//! # ppghr — wrist PPG heart-rate estimation toolkit
//!
//! End-to-end pipeline for estimating heart rate from wrist
//! photoplethysmography fused with tri-axial accelerometer data:
//!
//! ```text
//! vendor archives (.pkl)
//!   │
//!   ├─ ingest     native pickle reader → resample to 32 Hz → 8 s / 2 s windows
//!   │             → per-channel z-score → neutral .ppgw container
//!   ├─ augment    frequency-scaling transforms (divide / multiply grid, 11×)
//!   ├─ pretrain   conv + cross-attention model restructured as a U-Net-style
//!   │             autoencoder, trained on multimodal reconstruction MSE
//!   ├─ finetune   encoder weights transferred into the HR estimator,
//!   │             LOSO cross-validation, MAE objective in BPM
//!   └─ evaluate   rolling-mean clipping post-processor, per-subject MAE
//!                 report, comparison table + chart
//! ```
//!
//! Every stage is exposed both as a library module and as a subcommand of the
//! `ppghr` binary; see the README for CLI usage. All randomness derives from a
//! single run seed, so pipelines re-run reproducibly.

pub mod augment;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod signal;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use ingest::{NormStats, Provenance, SignalWindow, Source, SubjectRecording, WindowedDataset};
pub use model::{ModelConfig, Variant};
