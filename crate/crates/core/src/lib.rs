//! Outage restoration-time prediction: ingest and feature engineering,
//! sparse dictionary spectral clustering, per-cluster Levenberg–Marquardt
//! regressors with similarity-weighted transfer, t-SNE routing of unseen
//! outages, evaluation, and a calibrated synthetic generator.

pub mod artifact;
pub mod classify;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod kv;
pub mod manifest;
pub mod neural;
pub mod pipeline;
pub mod sdesc;
pub mod seed;
pub mod synth;
pub mod transfer;

pub use error::{Error, ErrorKind, Result};
pub use features::{FeatureMatrix, FeatureSpec, FeatureTransform};
pub use ingest::{CleanOutage, OutageRecord, RawOutageRow, WeatherRow};
pub use sdesc::{SdescConfig, SdescModel};
