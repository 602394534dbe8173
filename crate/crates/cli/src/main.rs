mod data;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::info;
use uuid::Uuid;
use webfed_core::client::ClientState;
use webfed_core::data::load_idx;
use webfed_core::ldp::PrivacyParams;
use webfed_core::proto::{HyperParams, TaskConfig};
use webfed_net::{run_client, serve_ws, ClientOptions, Connector, Server, ServerConfig};
use webfed_sim::{parse_list, run_experiment, DatasetSpec, Epsilon, ExperimentConfig, Transport};

#[derive(Parser)]
#[command(name = "webfed", version, about = "Federated averaging with local differential privacy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the parameter server.
    Server(ServerArgs),
    /// Run one headless client against a server.
    Client(ClientArgs),
    /// Run an in-process experiment sweep.
    Sim(SimArgs),
    /// Download or partition datasets.
    Data {
        #[command(subcommand)]
        command: data::DataCommand,
    },
}

#[derive(Args)]
struct ServerArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
    /// Total rounds T.
    #[arg(long, default_value_t = 50)]
    rounds: u32,
    /// Clients selected per round, m.
    #[arg(long, default_value_t = 5)]
    clients_per_round: u32,
    /// Registered clients needed before round 1 (defaults to m).
    #[arg(long)]
    min_clients: Option<u32>,
    #[arg(long, required_unless_present = "noise_free", conflicts_with = "noise_free")]
    epsilon: Option<f64>,
    #[arg(long)]
    noise_free: bool,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f32,
    #[arg(long, default_value_t = 1)]
    local_epochs: u32,
    #[arg(long, default_value_t = 32)]
    batch_size: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// IDX prefix of the test set, e.g. data/mnist/t10k.
    #[arg(long)]
    test_data: PathBuf,
    /// Keep only the first N test images.
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    round_timeout: u64,
}

#[derive(Args)]
struct ClientArgs {
    /// e.g. ws://127.0.0.1:8080/ws
    #[arg(long)]
    server: String,
    /// IDX prefix of this client's shard, e.g. shards/shard-000.
    #[arg(long)]
    data: PathBuf,
    /// Defaults to a random id.
    #[arg(long)]
    client_id: Option<Uuid>,
    /// Master seed shared with the server.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_parser = ["paper-fig4"])]
    preset: Option<String>,
    #[arg(long)]
    clients: Option<u32>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Comma-separated budgets; `inf` is noise-free.
    #[arg(long)]
    epsilon: Option<String>,
    /// mnist:DIR or synth:N
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    /// Comma-separated master seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// memory or ws
    #[arg(long)]
    transport: Option<String>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    eta: Option<f32>,
    #[arg(long)]
    local_epochs: Option<u32>,
    #[arg(long)]
    batch_size: Option<u32>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

async fn server(args: ServerArgs) -> Result<()> {
    let epsilon = if args.noise_free { None } else { args.epsilon };
    let task = TaskConfig {
        hyper: HyperParams {
            eta: args.eta,
            local_epochs: args.local_epochs,
            batch_size: args.batch_size,
        },
        privacy: PrivacyParams::new(epsilon, args.clip)?,
        rounds_total: args.rounds,
        clients_per_round: args.clients_per_round,
        ..TaskConfig::default()
    };
    let mut test_set = load_idx(&args.test_data)
        .with_context(|| format!("loading test set {}", args.test_data.display()))?;
    if let Some(n) = args.test_subset {
        test_set = test_set.take(n.min(test_set.len()))?;
    }
    let mut config = ServerConfig::new(task, args.seed);
    config.min_clients = args.min_clients.unwrap_or(args.clients_per_round);
    config.round_timeout = Duration::from_secs(args.round_timeout);
    config.metrics_out = args.metrics_out;
    let server = Server::new(config, test_set)?;

    let addr = format!("{}:{}", args.bind, args.port);
    let ws = serve_ws(&addr, server.events(), server.records()).await?;
    info!(addr = %ws.local_addr, "listening on ws://{}/ws", ws.local_addr);
    let result = server.run().await;
    ws.stop().await;
    let outcome = result?;
    if let Some(last) = outcome.records.last() {
        info!(round = last.round, accuracy = last.accuracy, "training finished");
    }
    Ok(())
}

async fn client(args: ClientArgs) -> Result<()> {
    let shard = load_idx(&args.data).with_context(|| format!("loading shard {}", args.data.display()))?;
    let id = args.client_id.unwrap_or_else(Uuid::new_v4);
    info!(client_id = %id, samples = shard.len(), "starting client");
    let state = ClientState::new(id, shard, args.seed);
    let report = run_client(&Connector::Ws(args.server), state, ClientOptions::default()).await?;
    info!(
        rounds = report.rounds_trained.len(),
        reconnects = report.reconnects,
        "client finished"
    );
    Ok(())
}

fn sim_config(args: SimArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.preset {
        Some(name) => ExperimentConfig::preset(name)?,
        None => ExperimentConfig::default(),
    };
    if args.preset.is_none() && args.dataset.is_none() {
        bail!("give --preset or --dataset");
    }
    if let Some(v) = args.clients {
        cfg.clients = v;
    }
    if let Some(v) = args.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = &args.epsilon {
        cfg.epsilons = parse_list::<Epsilon>(v)?;
    }
    if let Some(v) = &args.dataset {
        cfg.dataset = v.parse::<DatasetSpec>()?;
    }
    if let Some(v) = args.train_subset {
        cfg.train_subset = v;
    } else if let DatasetSpec::Synth(n) = cfg.dataset {
        cfg.train_subset = n;
    }
    if let Some(v) = args.test_subset {
        cfg.test_subset = v;
    }
    if let Some(v) = &args.seeds {
        cfg.seeds = parse_list(v)?;
    }
    if let Some(v) = &args.transport {
        cfg.transport = v.parse::<Transport>()?;
    }
    if let Some(v) = args.clip {
        cfg.clip = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.local_epochs {
        cfg.local_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    cfg.out_dir = Some(args.out);
    cfg.validate()?;
    Ok(cfg)
}

async fn sim(args: SimArgs) -> Result<()> {
    let cfg = sim_config(args)?;
    let results = run_experiment(&cfg).await?;
    for (eps, acc) in webfed_sim::final_accuracy(&results) {
        println!("epsilon {eps}: final accuracy {acc:.4} (mean over {} seeds)", cfg.seeds.len());
    }
    if let Some(dir) = &cfg.out_dir {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Server(args) => server(args).await,
        Command::Client(args) => client(args).await,
        Command::Sim(args) => sim(args).await,
        Command::Data { command } => data::run(command).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
