//! Server-side federated averaging: client selection, sample-weighted
//! aggregation and per-round records.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NnError, WeightsBundle};
use crate::seed::{self, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("aggregation error: no updates to aggregate")]
    NoUpdates,
    #[error("aggregation error: update {0} declares zero samples")]
    ZeroSamples(usize),
    #[error("no connected client is eligible for selection")]
    NoEligibleClients,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// What selection needs to know about a registered client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryEntry {
    pub client_index: u32,
    pub num_samples: u64,
    pub connected: bool,
}

impl RegistryEntry {
    pub fn eligible(&self) -> bool {
        self.connected && self.num_samples >= 1
    }
}

/// Uniform sample without replacement of `min(m, eligible)` clients.
///
/// Deterministic in `(seed, round, attempt)`; `attempt` distinguishes the
/// fresh selection made when a round is retried. Result is sorted by index.
pub fn select_clients(
    registry: &[RegistryEntry],
    m: u32,
    seed: u64,
    round: u32,
    attempt: u32,
) -> Result<Vec<u32>, FedError> {
    let mut eligible: Vec<u32> = registry
        .iter()
        .filter(|e| e.eligible())
        .map(|e| e.client_index)
        .collect();
    eligible.sort_unstable();
    eligible.dedup();
    if eligible.is_empty() {
        return Err(FedError::NoEligibleClients);
    }
    let m = m as usize;
    if m >= eligible.len() {
        return Ok(eligible);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
        seed,
        Stream::Select,
        &[round as u64, attempt as u64],
    ));
    let mut chosen: Vec<u32> = index::sample(&mut rng, eligible.len(), m)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub num_samples: u64,
    pub weights: WeightsBundle,
}

fn content_order(a: &Update, b: &Update) -> Ordering {
    a.num_samples.cmp(&b.num_samples).then_with(|| {
        a.weights
            .values()
            .map(f32::to_bits)
            .cmp(b.weights.values().map(f32::to_bits))
    })
}

/// `Σ |D_i| w_i / Σ |D_i|`, accumulated in `f64` and rounded to `f32`.
///
/// Updates are summed in a canonical order (by sample count, then by weight
/// bits) so the result does not depend on arrival order.
pub fn aggregate(updates: &[Update]) -> Result<WeightsBundle, FedError> {
    let first = updates.first().ok_or(FedError::NoUpdates)?;
    for (i, u) in updates.iter().enumerate() {
        first.weights.check_same_structure(&u.weights)?;
        if u.num_samples == 0 {
            return Err(FedError::ZeroSamples(i));
        }
    }
    let mut ordered: Vec<&Update> = updates.iter().collect();
    ordered.sort_by(|a, b| content_order(a, b));

    let total: f64 = ordered.iter().map(|u| u.num_samples as f64).sum();
    let mut acc = vec![0.0f64; first.weights.num_params()];
    for u in ordered {
        let n = u.num_samples as f64;
        for (a, v) in acc.iter_mut().zip(u.weights.values()) {
            *a += n * v as f64;
        }
    }
    let mean: Vec<f32> = acc.iter().map(|&a| (a / total) as f32).collect();
    Ok(first.weights.with_values(&mean)?)
}

/// Metrics of one completed round, as plotted per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub accuracy: f64,
    pub loss: f64,
    pub wall_time_seconds: f64,
    pub num_updates_received: u32,
}

pub const METRICS_CSV_HEADER: &str = "round,accuracy,loss,wall_time_seconds,num_updates_received";

/// Renders records as the metrics CSV (header line included).
pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{}",
            r.round, r.accuracy, r.loss, r.wall_time_seconds, r.num_updates_received
        );
    }
    out
}
