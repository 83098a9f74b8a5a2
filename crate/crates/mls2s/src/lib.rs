//! Multilevel sequence-to-sequence forecasting on road-network graphs.
//!
//! The model is a stack of graph-convolutional GRU cells arranged as L
//! parallel encoders of increasing depth reading the same input window;
//! each encoder's final hidden state initializes the matching decoder
//! layer, and the decoder rolls the forecast out one step at a time.
//!
//! The crate ships the full desk-scale toolchain around that model:
//!
//! * [`numeric`] -- dense f64 tensors, a reverse-mode autodiff tape, Adam;
//! * [`graph`] -- road graphs, adjacency construction, the normalized
//!   propagation operator;
//! * [`cell`] -- the GC-GRU cell;
//! * [`seq2seq`] -- the multilevel encoder/decoder network and checkpoints;
//! * [`trainer`] -- windowing, chronological splits, z-scoring, the MAE
//!   objective and the training loop;
//! * [`baselines`] -- historical-average and vector-autoregression
//!   reference forecasters;
//! * [`metrics`] -- masked MAE / RMSE / MAPE evaluation reports;
//! * [`pipeline`] -- the raw-trip-records-to-speed-matrix preparation
//!   pipeline;
//! * [`synth`] -- seeded synthetic datasets with real spatial signal;
//! * [`cli`] -- the command implementations behind the `mls2s` binary.
//!
//! See the `examples/` directory for one runnable walkthrough per
//! capability.

pub mod baselines;
pub mod cell;
pub mod cli;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod seq2seq;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
