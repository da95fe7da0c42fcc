//! Working-directory layout, locking and config provenance.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use typeforge::checkpoint::write_atomic;

pub const CORPUS: &str = "corpus.bin";
pub const EMBEDDINGS: &str = "embeddings.bin";
pub const PIVOTS: &str = "pivots.tsv";
pub const EDGES: &str = "graph.edges";
pub const GRAPH_META: &str = "graph.meta";
pub const ADJACENCY: &str = "adjacency.coo";
pub const GCN_CKPT: &str = "gcn.ckpt";
pub const LABELS_CKPT: &str = "labels.ckpt";
pub const ENCODER_CKPT: &str = "encoder.ckpt";
pub const TRAIN_LOG: &str = "train.log";
pub const PHASE1: &str = "phase1.bin";
pub const REFINED: &str = "refined.bin";
pub const PREDICTIONS: &str = "predictions.tsv";
pub const REPORT: &str = "report.txt";
const LOCK: &str = ".typeforge.lock";

pub const WORKDIR_ENV: &str = "TYPEFORGE_WORKDIR";

/// Bad input or a missing artifact; exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// The environment variable wins over the flag.
pub fn resolve(flag: PathBuf) -> PathBuf {
    match std::env::var_os(WORKDIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag,
    }
}

pub fn config_name(command: &str) -> String {
    format!("{command}.config.json")
}

/// Contents of `<command>.config.json`.
#[derive(Serialize, Deserialize)]
pub struct Provenance<A> {
    pub command: String,
    pub version: String,
    pub args: A,
}

/// A locked working directory. The lock is released on drop.
pub struct Workdir {
    root: PathBuf,
    lock: PathBuf,
}

impl Workdir {
    /// Creates the directory if needed, takes the lock and writes the
    /// command's config before any other output.
    pub fn open<A: Serialize>(root: &Path, command: &str, args: &A) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(Invalid(format!(
                    "{} is in use by another process (remove {} if it is stale)",
                    root.display(),
                    lock.display()
                ))
                .into());
            }
            Err(e) => return Err(e).with_context(|| format!("locking {}", root.display())),
        }
        let wd = Self {
            root: root.to_path_buf(),
            lock,
        };
        let provenance = Provenance {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args,
        };
        wd.write(
            &config_name(command),
            serde_json::to_string_pretty(&provenance)?.as_bytes(),
        )?;
        Ok(wd)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn remove(&self, name: &str) -> Result<()> {
        match fs::remove_file(self.path(name)) {
            Err(e) if e.kind() != ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Path of an artifact that an earlier command must have produced.
    pub fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(Invalid(format!(
                "{} is missing; run `typeforge {producer}` first",
                path.display()
            ))
            .into())
        }
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
