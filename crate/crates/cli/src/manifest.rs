//! Per-run manifest: command, resolved configuration, seed, artifacts and
//! a content hash of the inputs.
//!
//! The input hash follows git's object model: every input file is hashed
//! as `sha256("blob <len>\0" + bytes)`, and the run hash is the sha256 of
//! the sorted `"<hex> <name>\n"` lines, like a tree object.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliResult, IoContext};

pub const RUN_MANIFEST: &str = "run_manifest.txt";

#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Fully resolved configuration as `key=value` lines.
    pub config: String,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// Input files: directories expand to their sorted regular files.
fn expand(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .ctx(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file() && e.file_name().is_some_and(|n| n != RUN_MANIFEST))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

pub fn inputs_hash(inputs: &[PathBuf]) -> CliResult<String> {
    let mut lines: Vec<String> = Vec::new();
    for f in expand(inputs)? {
        let bytes = std::fs::read(&f).ctx(|| format!("reading {}", f.display()))?;
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        lines.push(format!("{} {name}\n", blob_hash(&bytes)));
    }
    lines.sort();
    let mut h = Sha256::new();
    for l in &lines {
        h.update(l.as_bytes());
    }
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn render(&self) -> CliResult<String> {
        let mut out = String::from("# hlnet run manifest\n");
        writeln!(out, "command={}", self.command).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        writeln!(out, "inputs_hash=sha256:{}", inputs_hash(&self.inputs)?).unwrap();
        for p in &self.inputs {
            writeln!(out, "input={}", p.display()).unwrap();
        }
        for p in &self.artifacts {
            writeln!(out, "artifact={}", p.display()).unwrap();
        }
        for line in self.config.lines().filter(|l| !l.is_empty()) {
            writeln!(out, "config.{line}").unwrap();
        }
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(RUN_MANIFEST);
        std::fs::write(&path, self.render()?).ctx(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
