use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClientDataset, DataError};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Seeded shuffle, then contiguous equal split.
    #[default]
    Iid,
    /// Stable sort by label, then contiguous split. Non-IID stress mode.
    LabelSorted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionPlan {
    pub num_clients: u32,
    pub seed: u64,
    pub strategy: Strategy,
}

impl PartitionPlan {
    /// Equal split of `n` samples; the remainder goes to the lowest-index shards.
    pub fn shard_sizes(&self, n: usize) -> Vec<usize> {
        let k = self.num_clients as usize;
        let (base, extra) = (n / k, n % k);
        (0..k).map(|i| base + usize::from(i < extra)).collect()
    }
}

pub fn partition(ds: &ClientDataset, plan: &PartitionPlan) -> Result<Vec<ClientDataset>, DataError> {
    let n = ds.len();
    let k = plan.num_clients as usize;
    if k == 0 || k > n {
        return Err(DataError::Config(format!(
            "cannot split {n} samples across {k} clients"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match plan.strategy {
        Strategy::Iid => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(plan.seed, Stream::Partition, &[]));
            order.shuffle(&mut rng);
        }
        Strategy::LabelSorted => order.sort_by_key(|&i| ds.labels()[i]),
    }
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for size in plan.shard_sizes(n) {
        shards.push(ds.select(&order[start..start + size])?);
        start += size;
    }
    Ok(shards)
}
