//! Training and analysis toolkit for deep evidential regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: scalar reverse-mode tape used to differentiate losses;
//! - [`network`]: shallow MLP and the evidential / Gaussian output heads;
//! - [`losses`]: Student-t NLL, evidence regularizers, Gaussian alternative;
//! - [`uncertainty`]: aleatoric/epistemic proxies under each convention;
//! - [`optim`]: Adam and heavy-ball momentum;
//! - [`data`]: seeded synthetic generators and dataset files;
//! - [`experiment`]: training loop, traces, multi-seed aggregation;
//! - [`analysis`]: calibration, cutoff, entropy and asymmetry metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod network;
pub mod optim;
pub mod uncertainty;

pub use error::{Error, Result};
