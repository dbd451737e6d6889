use std::path::{Path, PathBuf};

use kgc_core::graph::Split;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DATA_ROOT_ENV: &str = "KGC_DATA_ROOT";

fn normalized(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// A dataset argument is either a directory holding `train.txt` or a name
/// looked up under the data root (`--data-root`, else `$KGC_DATA_ROOT`).
/// Names match ignoring case and punctuation, so `fb15k237` finds
/// `FB15k-237/`.
pub fn resolve(dataset: &str, root: Option<&str>) -> Result<PathBuf, CliError> {
    if dataset.is_empty() {
        return Err(CliError::Usage("no dataset given (use --dataset)".into()));
    }
    let direct = Path::new(dataset);
    if direct.join("train.txt").is_file() {
        return Ok(direct.to_path_buf());
    }
    let root = root
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from));
    let Some(root) = root else {
        return Err(CliError::Data(format!(
            "dataset `{dataset}` is not a directory with train.txt and ${DATA_ROOT_ENV} is not set"
        )));
    };
    let exact = root.join(dataset);
    if exact.join("train.txt").is_file() {
        return Ok(exact);
    }
    let want = normalized(dataset);
    if let Ok(entries) = std::fs::read_dir(&root) {
        for entry in entries.flatten() {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if normalized(&name) == want && path.join("train.txt").is_file() {
                return Ok(path);
            }
        }
    }
    Err(CliError::Data(format!(
        "dataset `{dataset}` not found under {}",
        root.display()
    )))
}

pub fn display_name(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .as_deref()
        .and_then(Path::file_name)
        .or_else(|| dir.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

#[derive(Clone, Debug, Serialize)]
pub struct FileFingerprint {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fingerprint {
    pub name: String,
    pub path: String,
    pub files: Vec<FileFingerprint>,
    /// SHA-256 over the per-file digests, in split order.
    pub sha256: String,
}

pub fn fingerprint(dir: &Path) -> Result<Fingerprint, CliError> {
    let mut files = Vec::new();
    let mut combined = Sha256::new();
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let bytes =
            std::fs::read(&path).map_err(CliError::io(format!("reading {}", path.display())))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        combined.update(digest.as_bytes());
        files.push(FileFingerprint {
            file: split.file_name().to_owned(),
            bytes: bytes.len() as u64,
            sha256: digest,
        });
    }
    Ok(Fingerprint {
        name: display_name(dir),
        path: dir.display().to_string(),
        files,
        sha256: hex::encode(combined.finalize()),
    })
}
