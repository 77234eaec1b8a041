//! Index files, point files and configuration files.

mod config;
mod index_file;
mod points;

pub use config::{AppConfig, EvalDefaults};
pub use index_file::{decode_index, encode_bin, encode_index, load_index, save_index, FORMAT_VERSION, MAGIC};
pub use points::{read_points, read_points_from, write_points, write_points_to, IngestReport, PointFormat};

use thiserror::Error;

use crate::index::IndexError;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("index file is truncated")]
    Truncated,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Index(#[from] IndexError),
}
