//! Building pipeline components from a config and running or replaying
//! sequences against a run directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use cre_engine::analyst::{AnalystCache, AnalystClient, AnalystMode};
use cre_engine::backend::protocol::{Endpoint, HttpTransport, Transport};
use cre_engine::backend::{BackendCall, ModelBackend, RecordingBackend, RemoteBackend, ReplayBackend, SimBackend};
use cre_engine::config::{BackendKind, DatasetSource, EmbedderKind, RunConfig};
use cre_engine::corpus::synthetic::generate;
use cre_engine::corpus::{load_dataset, Sample, TaskSequence};
use cre_engine::embed::{CachedEmbedder, Embedder, HashingEmbedder, RemoteEmbedder};
use cre_engine::evaluation::RunReport;
use cre_engine::orchestrator::{run_all, run_sequence};

use crate::rundir::{read_json, write_json, VariantDir};

pub fn load_samples(config: &RunConfig) -> Result<Vec<Sample>> {
    Ok(match &config.dataset {
        DatasetSource::File { path, format } => {
            load_dataset(path, *format).with_context(|| format!("loading dataset {}", path.display()))?
        }
        DatasetSource::Synthetic(synthetic) => generate(synthetic),
    })
}

fn http(config: &RunConfig) -> Result<Arc<dyn Transport>> {
    let transport = HttpTransport::new(config.remote.clone())
        .with_context(|| format!("connecting to {}", config.remote.base_url))?;
    Ok(Arc::new(transport))
}

/// Answers nothing; replays must be served from caches alone.
struct Offline;

impl Transport for Offline {
    fn post(&self, endpoint: Endpoint, _: &serde_json::Value) -> cre_engine::Result<serde_json::Value> {
        Err(cre_engine::Error::ReplayMiss(format!("{} is not available during replay", endpoint.path())))
    }
}

fn embedder(config: &RunConfig, transport: Option<Arc<dyn Transport>>, cache: &Path) -> Result<Box<dyn Embedder>> {
    Ok(match config.embedder {
        EmbedderKind::Hashing => Box::new(CachedEmbedder::in_memory(HashingEmbedder::new(config.embed_dim))),
        EmbedderKind::Remote => {
            let transport = match transport {
                Some(t) => t,
                None => http(config)?,
            };
            Box::new(CachedEmbedder::open(RemoteEmbedder::new(transport, config.embed_dim, "remote"), cache)?)
        }
    })
}

fn live_backend(config: &RunConfig) -> Result<Box<dyn ModelBackend>> {
    Ok(match config.backend {
        BackendKind::Sim => Box::new(SimBackend::new(config.sim.clone())),
        BackendKind::Remote => Box::new(RemoteBackend::new(http(config)?, config.remote.base_url.clone())),
    })
}

/// Run one variant over every sequence, writing reports, backend call logs
/// and analyst caches into `dir` as each sequence finishes.
pub fn run_variant(config: &RunConfig, variant: &str, sequences: &[TaskSequence], dir: &VariantDir) -> Result<Vec<RunReport>> {
    dir.create()?;
    // A remote service holds one model: sequences run in turn, each from the
    // checkpoint the service started with.
    let mut config = config.clone();
    let base_checkpoint = match config.backend {
        BackendKind::Remote => {
            config.parallel = false;
            Some(live_backend(&config)?.checkpoint().context("taking the base checkpoint")?)
        }
        BackendKind::Sim => None,
    };
    let config = &config;
    let reports = run_all(config, sequences, |seq| {
        run_one(config, variant, seq, dir, base_checkpoint.as_deref())
            .map_err(|e| cre_engine::Error::Backend(format!("{e:#}")))
    })?;
    Ok(reports)
}

fn run_one(config: &RunConfig, variant: &str, seq: &TaskSequence, dir: &VariantDir, base: Option<&str>) -> Result<RunReport> {
    let i = seq.sequence_index;
    let mut backend = RecordingBackend::new(live_backend(config)?);
    if let Some(checkpoint) = base {
        backend.restore(checkpoint)?;
        let path = dir.base_checkpoint(i);
        std::fs::write(&path, checkpoint).with_context(|| format!("writing {}", path.display()))?;
    }
    let analyst = match config.analyst {
        AnalystMode::Fallback => AnalystClient::fallback(),
        AnalystMode::Remote => AnalystClient::remote(http(config)?),
        AnalystMode::Replay => bail!("analyst mode 'replay' is only available through `cre replay`"),
    }
    .with_cache_file(dir.analyst(i))?;
    let embedder = embedder(config, None, &dir.embeddings(i))?;
    let result = run_sequence(config, variant, seq, &mut backend, &analyst, embedder.as_ref());
    let (_, calls) = backend.into_parts();
    write_json(&dir.calls(i), &calls)?;
    let report = result.with_context(|| format!("variant '{variant}' sequence {i}"))?;
    std::fs::write(dir.report(i), report.to_json()?).with_context(|| format!("writing {}", dir.report(i).display()))?;
    log::info!("variant '{variant}' sequence {i}: final accuracy {:.4}", report.accuracies.last().copied().unwrap_or(0.0));
    Ok(report)
}

/// Re-run a recorded sequence from its backend log and analyst cache and
/// return `(recorded hash, replayed hash)`.
pub fn replay_one(report_path: &Path, dir: &VariantDir, sequence: &TaskSequence) -> Result<(String, String)> {
    let text = std::fs::read_to_string(report_path).with_context(|| format!("reading {}", report_path.display()))?;
    let recorded = RunReport::from_json(&text)?;
    let i = recorded.sequence_index;
    let calls: Vec<BackendCall> = read_json(&dir.calls(i))?;
    let cache = AnalystCache::load(dir.analyst(i))?;
    let config = &recorded.config;
    let mut backend = ReplayBackend::new(recorded.backend.clone(), calls);
    let base = dir.base_checkpoint(i);
    if base.exists() {
        let checkpoint = std::fs::read_to_string(&base).with_context(|| format!("reading {}", base.display()))?;
        backend.restore(checkpoint.trim())?;
    }
    let analyst = AnalystClient::replay(cache);
    let embedder = embedder(config, Some(Arc::new(Offline)), &dir.embeddings(i))?;
    let replayed = run_sequence(config, &recorded.variant, sequence, &mut backend, &analyst, embedder.as_ref())
        .with_context(|| format!("replaying {}", report_path.display()))?;
    if backend.remaining() != 0 {
        bail!("{}: {} recorded backend calls were not replayed", report_path.display(), backend.remaining());
    }
    Ok((recorded.sha256()?, replayed.sha256()?))
}

pub fn report_paths(dir: &VariantDir, count: usize) -> Vec<PathBuf> {
    (0..count).map(|i| dir.report(i)).filter(|p| p.exists()).collect()
}
