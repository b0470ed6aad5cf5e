//! Run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analyst::AnalystMode;
use crate::backend::protocol::EndpointConfig;
use crate::backend::SimConfig;
use crate::corpus::synthetic::SyntheticConfig;
use crate::corpus::DatasetFormat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    File { path: PathBuf, format: DatasetFormat },
    Synthetic(SyntheticConfig),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Sim,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(BackendKind::Sim),
            "remote" => Ok(BackendKind::Remote),
            other => Err(Error::InvalidArgument(format!("unknown backend '{other}' (expected sim or remote)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hashing,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Sample,
    Population,
}

/// Pipeline components to switch off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Treat every sample as easy; train on simple instructions only.
    pub no_hard_split: bool,
    pub no_positive: bool,
    pub no_negative: bool,
    /// Drop the relation-difference clause from positive blocks.
    pub no_p_r: bool,
    /// Drop error reasons and answer analyses from negative blocks.
    pub no_n_r: bool,
    /// Skip the memory replay phase.
    pub no_replay: bool,
}

impl AblationFlags {
    /// The standard comparison matrix: the full pipeline and one variant per
    /// component.
    pub fn matrix() -> Vec<(&'static str, AblationFlags)> {
        let none = AblationFlags::default();
        vec![
            ("full", none),
            ("w/o I_p", AblationFlags { no_positive: true, ..none }),
            ("w/o I_n", AblationFlags { no_negative: true, ..none }),
            ("w/o D_hard", AblationFlags { no_hard_split: true, ..none }),
            ("w/o p_r", AblationFlags { no_p_r: true, ..none }),
            ("w/o n_r", AblationFlags { no_n_r: true, ..none }),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub train_cap: usize,
    pub test_cap: usize,
    pub num_tasks: usize,
    pub num_sequences: usize,
    pub memory_size: usize,
    pub k_p: usize,
    pub k_n: usize,
    pub epochs_per_phase: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub seed: u64,
    pub backend: BackendKind,
    pub sim: SimConfig,
    pub remote: EndpointConfig,
    pub analyst: AnalystMode,
    pub embedder: EmbedderKind,
    pub embed_dim: usize,
    pub ablation: AblationFlags,
    pub std_kind: StdKind,
    /// Run sequences on separate threads.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::default(),
            train_cap: 320,
            test_cap: 40,
            num_tasks: 10,
            num_sequences: 5,
            memory_size: 5,
            k_p: 3,
            k_n: 3,
            epochs_per_phase: 2,
            learning_rate: 3e-5,
            batch_size: 32,
            seed: 2024,
            backend: BackendKind::Sim,
            sim: SimConfig::default(),
            remote: EndpointConfig {
                auth_env: Some("CRE_SERVICE_TOKEN".into()),
                ..EndpointConfig::new("http://127.0.0.1:8000")
            },
            analyst: AnalystMode::Fallback,
            embedder: EmbedderKind::Hashing,
            embed_dim: 512,
            ablation: AblationFlags::default(),
            std_kind: StdKind::Sample,
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("memory_size", self.memory_size),
            ("k_p", self.k_p),
            ("k_n", self.k_n),
            ("num_tasks", self.num_tasks),
            ("num_sequences", self.num_sequences),
            ("train_cap", self.train_cap),
            ("test_cap", self.test_cap),
            ("embed_dim", self.embed_dim),
            ("epochs_per_phase", self.epochs_per_phase as usize),
            ("batch_size", self.batch_size as usize),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::InvalidArgument(format!("config field '{field}' must be at least 1")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("config field 'learning_rate' must be positive".into()));
        }
        let sim = &self.sim;
        if sim.dim == 0 || ![sim.pull_rate, sim.push_rate, sim.strength_decay].iter().all(|r| (0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument(
                "config field 'sim' needs dim >= 1 and rates within [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Set one field by dotted path, e.g. `ablation.no_positive=true` or
    /// `sim.pull_rate=0.2`. The value is read as JSON when it parses, else as
    /// a string. Unknown fields are rejected by name.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|obj| obj.get_mut(part))
                .ok_or_else(|| Error::InvalidArgument(format!("unknown config field '{key}'")))?;
        }
        *node = value;
        *self = serde_json::from_value(tree)
            .map_err(|e| Error::InvalidArgument(format!("config field '{key}': {e}")))?;
        Ok(())
    }
}
