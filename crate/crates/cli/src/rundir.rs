//! On-disk layout of a run directory.
//!
//! ```text
//! <run>/run.json                      command, variants, creation time
//! <run>/config.json                   resolved configuration
//! <run>/manifests/sequence-<i>.json   task partition and sample ids
//! <run>/<variant>/report-seq<i>.json
//! <run>/<variant>/calls-seq<i>.json   recorded backend traffic
//! <run>/<variant>/analyst-seq<i>.json analyst cache
//! <run>/<variant>/embeddings-seq<i>.jsonl        remote embedder only
//! <run>/<variant>/base-checkpoint-seq<i>.txt     remote backend only
//! <run>/aggregate.json, accuracy.csv, table.md
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunIndex {
    pub command: String,
    pub created: String,
    pub num_sequences: usize,
    /// `(variant name, directory name)` pairs in run order.
    pub variants: Vec<(String, String)>,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A filesystem-safe directory name for a variant, e.g. `w/o I_p` -> `wo-I_p`.
pub fn slug(variant: &str) -> String {
    let cleaned: String = variant
        .replace("w/o", "wo")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '-' })
        .collect();
    cleaned.trim_matches('-').to_string()
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Create `<parent>/<timestamp>-<command>`.
    pub fn create(parent: &Path, command: &str) -> Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S%.3f");
        let root = parent.join(format!("{stamp}-{command}"));
        fs::create_dir_all(root.join("manifests")).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir { root })
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.join("run.json").exists() {
            anyhow::bail!("{} is not a run directory (no run.json)", root.display());
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self, sequence: usize) -> PathBuf {
        self.root.join("manifests").join(format!("sequence-{sequence}.json"))
    }

    pub fn variant(&self, dir_name: &str) -> VariantDir {
        VariantDir {
            root: self.root.join(dir_name),
        }
    }
}

pub struct VariantDir {
    pub root: PathBuf,
}

impl VariantDir {
    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))
    }

    pub fn report(&self, i: usize) -> PathBuf {
        self.root.join(format!("report-seq{i}.json"))
    }

    pub fn calls(&self, i: usize) -> PathBuf {
        self.root.join(format!("calls-seq{i}.json"))
    }

    pub fn analyst(&self, i: usize) -> PathBuf {
        self.root.join(format!("analyst-seq{i}.json"))
    }

    pub fn embeddings(&self, i: usize) -> PathBuf {
        self.root.join(format!("embeddings-seq{i}.jsonl"))
    }

    pub fn base_checkpoint(&self, i: usize) -> PathBuf {
        self.root.join(format!("base-checkpoint-seq{i}.txt"))
    }
}
