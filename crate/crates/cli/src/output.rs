//! Run directories: every file a command writes is listed, with its hash,
//! in `manifest.json` once the command finishes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use strictfair::io::write_atomic;

/// Significant digits kept for floating-point numbers in JSON and CSV.
pub const SIGNIFICANT_DIGITS: usize = 9;

pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().unwrap_or(v)
}

/// A float as written in CSV cells.
pub fn num(v: f64) -> String {
    round_sig(v).to_string()
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with rounded floats and a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn json_line<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut bytes = serde_json::to_vec(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Serialize)]
struct OutputEntry {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    threads: usize,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<OutputEntry>,
}

pub struct RunDir {
    dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    started: u64,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(dir: PathBuf, command: &str, config_hash: String, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(RunDir {
            dir,
            command: command.to_string(),
            config_hash,
            seed,
            started: unix_now(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file written by other code under this directory.
    pub fn register(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)?;
        self.register(name);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let bytes = json_bytes(value)?;
        self.bytes(name, &bytes)
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, values: &[T]) -> Result<()> {
        let mut bytes = Vec::new();
        for v in values {
            bytes.extend(json_line(v)?);
        }
        self.bytes(name, &bytes)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().context("flushing csv")?;
        self.bytes(name, &bytes)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let mut outputs = Vec::with_capacity(self.files.len());
        let mut names = self.files.clone();
        names.sort();
        for name in names {
            let bytes = std::fs::read(self.path(&name)).with_context(|| format!("reading back {name}"))?;
            outputs.push(OutputEntry {
                name,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = RunManifest {
            tool: "strictfair",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            threads: rayon::current_num_threads(),
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs,
        };
        let path = self.path("manifest.json");
        write_atomic(&path, &json_bytes(&manifest)?)?;
        Ok(path)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
