// index-based loops mirror the filter/NN arithmetic they implement
#![allow(clippy::needless_range_loop, clippy::manual_is_multiple_of)]

//! ECG biometric verification and identification pipeline.
//!
//! The crate covers the full chain from raw multi-lead ECG records to
//! evaluation reports: deterministic pre-processing (`signal`), r-peak
//! detection and heartbeat segmentation (`segmentation`), a minimal
//! reverse-mode neural-network engine (`nn`), the autoencoder / Siamese /
//! identification architectures (`models`), seeded comparison-pair protocols
//! (`protocol`), EER and accuracy evaluation (`metrics`), and dataset
//! ingestion, synthesis, and persistence (`dataset`).

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod protocol;
pub mod segmentation;
pub mod signal;

pub use error::{Error, Result};
