use std::fs;
use std::path::{Path, PathBuf};

use tokio::sync::oneshot;
use tracing::info;
use webfed_core::client::ClientState;
use webfed_core::data::{load_idx, partition, synth_dataset, ClientDataset, PartitionPlan};
use webfed_core::fedavg::{metrics_csv, RoundRecord};
use webfed_core::ldp::PrivacyParams;
use webfed_core::nn::WeightsBundle;
use webfed_core::proto::{HyperParams, TaskConfig};
use webfed_core::simulate::client_uuid;
use webfed_net::{run_client, serve_ws, ClientOptions, Connector, MemoryHub, Server, ServerConfig};

use crate::chart::render_chart;
use crate::config::{DatasetSpec, Epsilon, ExperimentConfig, Transport};
use crate::SimError;

const SYNTH_TRAIN_SEED: u64 = 0x5eed_0001;
const SYNTH_TEST_SEED: u64 = 0x5eed_0002;

/// One (ε, seed) arm of a sweep.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub epsilon: Epsilon,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub final_model: WeightsBundle,
}

/// Loads the training and test subsets named by `cfg`.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(ClientDataset, ClientDataset), SimError> {
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Mnist(dir) => (load_idx(dir.join("train"))?, load_idx(dir.join("t10k"))?),
        DatasetSpec::Synth(n) => (
            synth_dataset(*n, 10, SYNTH_TRAIN_SEED)?,
            synth_dataset(cfg.test_subset.max(10), 10, SYNTH_TEST_SEED)?,
        ),
    };
    let take = |ds: ClientDataset, n: usize, what: &str| {
        if ds.len() < n && matches!(cfg.dataset, DatasetSpec::Mnist(_)) {
            return Err(SimError::Config(format!(
                "{what} subset of {n} exceeds the {} images available",
                ds.len()
            )));
        }
        Ok(ds.take(n.min(ds.len()))?)
    };
    Ok((
        take(train, cfg.train_subset, "train")?,
        take(test, cfg.test_subset, "test")?,
    ))
}

pub fn task_for(cfg: &ExperimentConfig, epsilon: Epsilon) -> TaskConfig {
    TaskConfig {
        hyper: HyperParams {
            eta: cfg.eta,
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
        },
        privacy: PrivacyParams {
            epsilon: epsilon.0,
            clip: cfg.clip,
        },
        rounds_total: cfg.rounds,
        clients_per_round: cfg.clients,
        ..TaskConfig::default()
    }
}

/// Runs a full federation through the networked server and client runtime.
/// Client `i` gets `shards[i]` and registers as index `i`.
pub async fn run_federation(
    transport: Transport,
    task: TaskConfig,
    seed: u64,
    shards: &[ClientDataset],
    test_set: ClientDataset,
) -> Result<(Vec<RoundRecord>, WeightsBundle), SimError> {
    let mut config = ServerConfig::new(task, seed);
    config.min_clients = shards.len() as u32;
    let server = Server::new(config, test_set)?;
    let (connector, listener) = match transport {
        Transport::Memory => (Connector::Memory(MemoryHub::new(server.events())), None),
        Transport::Ws => {
            let ws = serve_ws("127.0.0.1:0", server.events(), server.records()).await?;
            (Connector::Ws(format!("ws://{}/ws", ws.local_addr)), Some(ws))
        }
    };
    let running = tokio::spawn(server.run());

    let mut clients = Vec::with_capacity(shards.len());
    for (i, shard) in shards.iter().enumerate() {
        let (tx, rx) = oneshot::channel();
        let state = ClientState::new(client_uuid(seed, i as u32), shard.clone(), seed);
        let connector = connector.clone();
        clients.push(tokio::spawn(async move {
            let opts = ClientOptions {
                registered: Some(tx),
                ..ClientOptions::default()
            };
            run_client(&connector, state, opts).await
        }));
        // Registration order fixes client indices, hence selection and noise.
        if rx.await.is_err() {
            break;
        }
    }

    let outcome = running.await.map_err(|e| SimError::Internal(e.to_string()))?;
    for c in clients {
        c.await.map_err(|e| SimError::Internal(e.to_string()))??;
    }
    if let Some(ws) = listener {
        ws.stop().await;
    }
    let outcome = outcome?;
    Ok((outcome.records, outcome.final_model))
}

/// Metrics CSV plus `epsilon,seed` columns.
pub fn run_csv(run: &RunResult) -> String {
    let label = run.epsilon.label();
    metrics_csv(&run.records)
        .lines()
        .enumerate()
        .map(|(i, line)| match i {
            0 => format!("{line},epsilon,seed\n"),
            _ => format!("{line},{label},{}\n", run.seed),
        })
        .collect()
}

pub fn run_file_name(epsilon: Epsilon, seed: u64) -> String {
    format!("run-eps-{}-seed-{seed}.csv", epsilon.label())
}

/// Seed-averaged accuracy and loss per ε and round.
pub fn summary_csv(results: &[RunResult]) -> String {
    let mut out = String::from("epsilon,round,mean_accuracy,mean_loss,seeds\n");
    for (eps, runs) in group_by_epsilon(results) {
        let rounds = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
        for i in 0..rounds {
            let n = runs.len() as f64;
            let acc = runs.iter().map(|r| r.records[i].accuracy).sum::<f64>() / n;
            let loss = runs.iter().map(|r| r.records[i].loss).sum::<f64>() / n;
            out.push_str(&format!(
                "{},{},{acc},{loss},{}\n",
                eps.label(),
                runs[0].records[i].round,
                runs.len()
            ));
        }
    }
    out
}

/// Runs grouped by ε, in first-seen order.
pub fn group_by_epsilon(results: &[RunResult]) -> Vec<(Epsilon, Vec<&RunResult>)> {
    let mut groups: Vec<(Epsilon, Vec<&RunResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|(e, _)| *e == r.epsilon) {
            Some((_, runs)) => runs.push(r),
            None => groups.push((r.epsilon, vec![r])),
        }
    }
    groups
}

/// Final-round accuracy averaged over seeds, per ε.
pub fn final_accuracy(results: &[RunResult]) -> Vec<(Epsilon, f64)> {
    group_by_epsilon(results)
        .into_iter()
        .map(|(e, runs)| {
            let sum: f64 = runs
                .iter()
                .map(|r| r.records.last().map_or(0.0, |rec| rec.accuracy))
                .sum();
            (e, sum / runs.len() as f64)
        })
        .collect()
}

fn write(path: &Path, body: &str) -> Result<(), SimError> {
    fs::write(path, body).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Runs every (ε, seed) pair. With `out_dir` set, each run's CSV is written
/// as soon as it finishes, then `summary.csv` and `accuracy.svg`.
pub async fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>, SimError> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(|source| SimError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }

    let mut results = Vec::new();
    let mut csv_paths: Vec<PathBuf> = Vec::new();
    for &seed in &cfg.seeds {
        let plan = PartitionPlan {
            num_clients: cfg.clients,
            seed,
            strategy: cfg.strategy,
        };
        let shards = partition(&train, &plan)?;
        for &epsilon in &cfg.epsilons {
            let started = std::time::Instant::now();
            let task = task_for(cfg, epsilon);
            let (records, final_model) =
                run_federation(cfg.transport, task, seed, &shards, test.clone()).await?;
            let run = RunResult {
                epsilon,
                seed,
                records,
                final_model,
            };
            info!(
                epsilon = %epsilon,
                seed,
                accuracy = run.records.last().map(|r| r.accuracy),
                secs = started.elapsed().as_secs_f64(),
                "run finished"
            );
            if let Some(dir) = &cfg.out_dir {
                let path = dir.join(run_file_name(epsilon, seed));
                write(&path, &run_csv(&run))?;
                csv_paths.push(path);
            }
            results.push(run);
        }
    }

    if let Some(dir) = &cfg.out_dir {
        write(&dir.join("summary.csv"), &summary_csv(&results))?;
        write(&dir.join("accuracy.svg"), &render_chart(&csv_paths)?)?;
    }
    Ok(results)
}
