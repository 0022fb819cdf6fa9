//! Raw little-endian `f64` blobs with JSON sidecars.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: blob length {len} is not a multiple of 8 bytes")]
    Truncated { path: PathBuf, len: usize },
    #[error("{0}")]
    Format(String),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_f64_blob(path: &Path, values: &[f64]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(fs_err(path))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(fs_err(path))?;
    }
    w.flush().map_err(fs_err(path))
}

pub fn read_f64_blob(path: &Path) -> Result<Vec<f64>, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    if bytes.len() % 8 != 0 {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(fs_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(fs_err(path))
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(fs_err(path))
}

/// `base.f64` and `base.json` for a given stem.
pub fn blob_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("f64"), base.with_extension("json"))
}
