use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use webfed_core::data::Strategy;

use crate::SimError;

/// Where the training and test images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Directory holding `train-*-idx?-ubyte[.gz]` and `t10k-*-idx?-ubyte[.gz]`.
    Mnist(PathBuf),
    /// `n` synthetic training images; the test set is drawn from a separate seed.
    Synth(usize),
}

impl FromStr for DatasetSpec {
    type Err = SimError;

    /// `mnist:PATH` or `synth:N`.
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s.split_once(':') {
            Some(("mnist", path)) if !path.is_empty() => Ok(Self::Mnist(path.into())),
            Some(("synth", n)) => n
                .parse()
                .map(Self::Synth)
                .map_err(|_| SimError::Config(format!("bad synth size {n:?}"))),
            _ => Err(SimError::Config(format!(
                "dataset must be mnist:PATH or synth:N, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// Server and clients joined by in-process channels.
    #[default]
    Memory,
    /// A real WebSocket listener on 127.0.0.1.
    Ws,
}

impl FromStr for Transport {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "memory" => Ok(Self::Memory),
            "ws" => Ok(Self::Ws),
            _ => Err(SimError::Config(format!("transport must be memory or ws, got {s:?}"))),
        }
    }
}

/// Privacy setting of one sweep arm. `None` is noise-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon(pub Option<f64>);

impl Epsilon {
    pub const NOISE_FREE: Epsilon = Epsilon(None);

    /// Label used in CSVs and file names: `3`, `6`, `noise-free`.
    pub fn label(&self) -> String {
        match self.0 {
            Some(e) => e.to_string(),
            None => "noise-free".into(),
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Epsilon {
    type Err = SimError;

    /// Accepts a positive number, `inf` or `noise-free`.
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s.trim() {
            "inf" | "noise-free" => Ok(Self::NOISE_FREE),
            v => match v.parse::<f64>() {
                Ok(e) if e.is_finite() && e > 0.0 => Ok(Self(Some(e))),
                Ok(e) if e == f64::INFINITY => Ok(Self::NOISE_FREE),
                _ => Err(SimError::Config(format!("epsilon must be > 0 or inf, got {v:?}"))),
            },
        }
    }
}

/// Parses a comma-separated list with `T::from_str`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, SimError> {
    s.split(',')
        .map(|item| {
            item.trim()
                .parse()
                .map_err(|_| SimError::Config(format!("bad list item {item:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub clients: u32,
    pub rounds: u32,
    pub epsilons: Vec<Epsilon>,
    pub clip: f64,
    pub eta: f32,
    pub local_epochs: u32,
    pub batch_size: u32,
    pub dataset: DatasetSpec,
    pub train_subset: usize,
    pub test_subset: usize,
    pub seeds: Vec<u64>,
    pub strategy: Strategy,
    pub transport: Transport,
    /// Run CSVs, the summary and the chart are written here when set.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            clients: 5,
            rounds: 50,
            epsilons: vec![Epsilon(Some(3.0)), Epsilon(Some(6.0)), Epsilon::NOISE_FREE],
            clip: 1.0,
            eta: 0.05,
            local_epochs: 1,
            batch_size: 32,
            dataset: DatasetSpec::Mnist("data/mnist-10k".into()),
            train_subset: 5000,
            test_subset: 1000,
            seeds: vec![1, 2, 3],
            strategy: Strategy::Iid,
            transport: Transport::Memory,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub const PRESETS: &'static [&'static str] = &["paper-fig4"];

    /// Named presets. `paper-fig4` is the ε sweep over the MNIST subset.
    pub fn preset(name: &str) -> Result<Self, SimError> {
        match name {
            "paper-fig4" => Ok(Self::default()),
            _ => Err(SimError::Config(format!(
                "unknown preset {name:?} (known: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.clients == 0 {
            return bad("clients must be >= 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.epsilons.is_empty() || self.seeds.is_empty() {
            return bad("need at least one epsilon and one seed".into());
        }
        if let Some(e) = self.epsilons.iter().find_map(|e| e.0.filter(|v| !(*v > 0.0 && v.is_finite()))) {
            return bad(format!("epsilon must be > 0, got {e}"));
        }
        if self.train_subset < self.clients as usize {
            return bad(format!(
                "train subset of {} cannot feed {} clients",
                self.train_subset, self.clients
            ));
        }
        if self.test_subset == 0 {
            return bad("test subset must be >= 1".into());
        }
        Ok(())
    }
}
