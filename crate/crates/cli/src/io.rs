//! File helpers shared by the commands. Every failure names the path involved.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{CmdResult, Failure};

pub fn read_bytes(path: &Path) -> CmdResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::at(path, e))
}

pub fn open(path: &Path) -> CmdResult<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::at(path, e))
}

pub fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| Failure::at(path, e))
}

/// Write a file through `fill`, reporting I/O trouble as a data error.
pub fn write_with<F>(path: &Path, fill: F) -> CmdResult
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<(), String>,
{
    let file = fs::File::create(path).map_err(|e| Failure::at(path, e))?;
    let mut out = BufWriter::new(file);
    fill(&mut out).map_err(|e| Failure::at(path, e))?;
    out.flush().map_err(|e| Failure::at(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CmdResult {
    write_with(path, |out| {
        out.write_all(text.as_bytes()).map_err(|e| e.to_string())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::at(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(role: &str, path: &Path) -> CmdResult<InputDigest> {
    let bytes = read_bytes(path)?;
    Ok(InputDigest {
        role: role.to_string(),
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Format a float so the CSV round-trips exactly.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
