use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Subcommand, ValueEnum};
use flate2::read::GzDecoder;
use serde_json::json;
use tracing::info;
use webfed_core::data::{load_idx, partition, save_idx, PartitionPlan, Strategy};

/// The four MNIST files and their published uncompressed sizes.
const MNIST_FILES: [(&str, usize); 4] = [
    ("train-images-idx3-ubyte", 47_040_016),
    ("train-labels-idx1-ubyte", 60_008),
    ("t10k-images-idx3-ubyte", 7_840_016),
    ("t10k-labels-idx1-ubyte", 10_008),
];

#[derive(Subcommand)]
pub enum DataCommand {
    /// Download MNIST and check the published file sizes.
    Fetch {
        #[arg(long, default_value = "data/mnist")]
        out: PathBuf,
        #[arg(long, default_value = "https://storage.googleapis.com/cvdf-datasets/mnist/")]
        base_url: String,
    },
    /// Split an IDX dataset into per-client shards plus manifest.json.
    Partition {
        /// IDX prefix, e.g. data/mnist/train
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clients: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = StrategyArg::Iid)]
        strategy: StrategyArg,
        /// Only use the first N samples.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, default_value = "shards")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Iid,
    LabelSorted,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Iid => Strategy::Iid,
            StrategyArg::LabelSorted => Strategy::LabelSorted,
        }
    }
}

pub async fn run(cmd: DataCommand) -> Result<()> {
    match cmd {
        DataCommand::Fetch { out, base_url } => fetch(&out, &base_url).await,
        DataCommand::Partition {
            data,
            clients,
            seed,
            strategy,
            subset,
            out,
        } => partition_cmd(&data, clients, seed, strategy.into(), subset, &out),
    }
}

async fn fetch(out: &Path, base_url: &str) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let http = reqwest::Client::new();
    let base = base_url.trim_end_matches('/');
    for (name, size) in MNIST_FILES {
        let url = format!("{base}/{name}.gz");
        info!(%url, "downloading");
        let body = http
            .get(&url)
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .with_context(|| format!("fetching {url}"))?
            .bytes()
            .await?;
        let mut raw = Vec::with_capacity(size);
        GzDecoder::new(&body[..])
            .read_to_end(&mut raw)
            .with_context(|| format!("decompressing {url}"))?;
        if raw.len() != size {
            bail!("{name}: expected {size} bytes, got {}", raw.len());
        }
        let path = out.join(name);
        std::fs::write(&path, &raw).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("MNIST written to {}", out.display());
    Ok(())
}

fn partition_cmd(
    data: &Path,
    clients: u32,
    seed: u64,
    strategy: Strategy,
    subset: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut ds = load_idx(data).with_context(|| format!("loading {}", data.display()))?;
    if let Some(n) = subset {
        ds = ds.take(n.min(ds.len()))?;
    }
    let shards = partition(
        &ds,
        &PartitionPlan {
            num_clients: clients,
            seed,
            strategy,
        },
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::new();
    for (i, shard) in shards.iter().enumerate() {
        let name = format!("shard-{i:03}");
        save_idx(shard, out.join(&name))?;
        entries.push(json!({ "path": name, "n": shard.len() }));
    }
    let manifest = json!({ "seed": seed, "strategy": strategy, "shards": entries });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("{} shards written to {}", shards.len(), out.display());
    Ok(())
}
