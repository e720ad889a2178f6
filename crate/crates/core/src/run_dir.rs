//! On-disk layout of a training run:
//!
//! ```text
//! config.toml               resolved configuration
//! meta.toml                 thread count, format versions
//! metrics.csv               one row per finished round
//! run.log                   warnings
//! checkpoints/round_####.ckpt
//! pseudo_labels/round_####.csv
//! final_model.ckpt
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{self, save_checkpoint, Checkpoint};
use crate::clustering::{write_pseudo_labels, PseudoLabeledSet};
use crate::config::TrainConfig;
use crate::data::{metrics_csv, METRICS_VERSION};
use crate::error::Result;
use crate::pipeline::RunSink;

#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    pub crate_version: String,
    pub checkpoint_version: u32,
    pub metrics_version: u32,
    /// Value of UFLST_THREADS, if set.
    pub threads: Option<usize>,
    pub reset_optimizer: bool,
}

impl RunMeta {
    pub fn new(config: &TrainConfig, threads: Option<usize>) -> Self {
        RunMeta {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_version: checkpoint::VERSION,
            metrics_version: METRICS_VERSION,
            threads,
            reset_optimizer: config.reset_optimizer,
        }
    }
}

pub struct RunDir {
    root: PathBuf,
    log: File,
    /// Echo warnings to stderr.
    pub echo: bool,
}

impl RunDir {
    /// Create the layout and write the config snapshot before any work.
    pub fn create(root: &Path, config: &TrainConfig, meta: &RunMeta) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints"))?;
        fs::create_dir_all(root.join("pseudo_labels"))?;
        fs::write(root.join("config.toml"), config.to_toml_string())?;
        fs::write(
            root.join("meta.toml"),
            toml::to_string(meta).expect("meta serializes"),
        )?;
        let log = File::create(root.join("run.log"))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            log,
            echo: false,
        })
    }

    /// Reopen an existing run directory for a resumed run.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints"))?;
        fs::create_dir_all(root.join("pseudo_labels"))?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(root.join("run.log"))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            log,
            echo: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_path(&self, round: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("round_{round:04}.ckpt"))
    }

    pub fn pseudo_label_path(&self, round: usize) -> PathBuf {
        self.root.join("pseudo_labels").join(format!("round_{round:04}.csv"))
    }

    pub fn final_model_path(&self) -> PathBuf {
        self.root.join("final_model.ckpt")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn write_final(&self, state: &Checkpoint) -> Result<()> {
        save_checkpoint(&self.final_model_path(), state)
    }

    pub fn log(&mut self, line: &str) {
        let _ = writeln!(self.log, "{line}");
        if self.echo {
            eprintln!("{line}");
        }
    }
}

impl RunSink for RunDir {
    fn warn(&mut self, round: usize, message: &str) {
        self.log(&format!("round {round}: warning: {message}"));
    }

    fn pseudo_labels(&mut self, round: usize, n: usize, pl: Option<&PseudoLabeledSet>) -> Result<()> {
        write_pseudo_labels(&self.pseudo_label_path(round), n, pl, round)
    }

    fn round_end(&mut self, state: &Checkpoint) -> Result<()> {
        checkpoint::write_atomic(&self.metrics_path(), metrics_csv(&state.history).as_bytes())?;
        save_checkpoint(&self.checkpoint_path(state.round), state)
    }
}
