//! Core of a browser-style federated averaging system with local
//! differential privacy.
//!
//! - [`nn`]: the `lenet-mnist-v1` model, trained with plain SGD.
//! - [`ldp`]: clipping and the per-coordinate Laplace mechanism.
//! - [`proto`]: the `webfed/1` JSON wire format.
//! - [`data`]: IDX datasets, partitioning and synthetic data.
//! - [`fedavg`]: client selection and sample-weighted aggregation.
//! - [`client`]: client round logic, independent of transport.
//! - [`simulate`]: sequential in-process federation.

pub mod client;
pub mod data;
pub mod fedavg;
pub mod ldp;
pub mod nn;
pub mod proto;
pub mod seed;
pub mod simulate;
