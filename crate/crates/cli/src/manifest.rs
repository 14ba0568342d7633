use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::failure::CmdResult;
use crate::io::{write_json, InputDigest};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a run, written before the run starts.
///
/// `config` is the fully resolved configuration. For `train` it can be fed
/// back through `--config manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config: &'a C,
    pub inputs: Vec<InputDigest>,
    pub outputs: BTreeMap<&'static str, PathBuf>,
}

impl<'a, C: Serialize> RunManifest<'a, C> {
    pub fn new(command: &'static str, seed: Option<u64>, config: &'a C) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn output(&mut self, role: &'static str, dir: &Path, file: &str) -> PathBuf {
        let path = dir.join(file);
        self.outputs.insert(role, path.clone());
        path
    }

    pub fn write(&mut self, dir: &Path) -> CmdResult<PathBuf> {
        let path = self.output("manifest", dir, MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}
