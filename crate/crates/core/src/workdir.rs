//! On-disk layout of a prepared experiment directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{DataError, DatasetSplit, IdMaps, SessionStore};
use crate::model::{read_checkpoint, Checkpoint, CheckpointError};
use crate::trainer::TrainReport;

pub const USERS: &str = "users.tsv";
pub const ITEMS: &str = "items.tsv";
pub const SESSIONS: &str = "sessions.tsv";
pub const EDGES: &str = "edges.tsv";
pub const SPLIT: &str = "split.tsv";
pub const STATS: &str = "stats.txt";
pub const MODEL: &str = "model.ckpt";
pub const LAST: &str = "last.ckpt";
pub const REPORT: &str = "report.jsonl";
pub const GRID_DIR: &str = "grid";

#[derive(Debug, Error)]
pub enum WorkdirError {
    #[error("{}: file not found", path.display())]
    Missing { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: DataError },
    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("{}: {message}", path.display())]
    Report { path: PathBuf, message: String },
}

pub fn read(path: &Path) -> Result<String, WorkdirError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            WorkdirError::Missing {
                path: path.to_path_buf(),
            }
        } else {
            WorkdirError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

pub fn write(path: &Path, text: &str) -> Result<(), WorkdirError> {
    let io_err = |source| WorkdirError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    // write-then-rename so an interrupted run never leaves a torn file
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(|source| WorkdirError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reindexed store, id maps and split loaded from a prepared directory.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub store: SessionStore,
    pub maps: IdMaps,
    pub split: DatasetSplit,
}

impl Prepared {
    pub fn write_to(&self, dir: &Path) -> Result<(), WorkdirError> {
        let (users, items) = self.maps.to_tsv();
        write(&dir.join(USERS), &users)?;
        write(&dir.join(ITEMS), &items)?;
        write(&dir.join(SESSIONS), &self.store.sessions_tsv())?;
        write(&dir.join(EDGES), &self.store.edges_tsv())?;
        write(&dir.join(SPLIT), &self.split.manifest_tsv())
    }

    pub fn load(dir: &Path) -> Result<Self, WorkdirError> {
        let data_err = |name: &str| {
            let path = dir.join(name);
            move |source| WorkdirError::Data { path, source }
        };
        let maps = IdMaps::from_tsv(&read(&dir.join(USERS))?, &read(&dir.join(ITEMS))?).map_err(data_err(USERS))?;
        let store = SessionStore::from_tsv(&read(&dir.join(SESSIONS))?, &read(&dir.join(EDGES))?)
            .map_err(data_err(SESSIONS))?;
        let split = DatasetSplit::from_manifest(&store, &read(&dir.join(SPLIT))?).map_err(data_err(SPLIT))?;
        Ok(Self { store, maps, split })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, WorkdirError> {
    read_checkpoint(&read(path)?).map_err(|source| WorkdirError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_report(path: &Path) -> Result<TrainReport, WorkdirError> {
    TrainReport::from_jsonl(&read(path)?).map_err(|message| WorkdirError::Report {
        path: path.to_path_buf(),
        message,
    })
}
