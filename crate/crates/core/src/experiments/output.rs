//! Result files: `results/<experiment>/<config-hash>.csv` plus a JSON sidecar
//! holding the resolved configuration. Failed runs leave a `.failed` marker.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const CSV_HEADER: &str = "run,x,method,metric,value";

/// One measurement. `x` is the dataset size or epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run: usize,
    pub x: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn new(run: usize, x: usize, method: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        Self { run, x, method: method.into(), metric: metric.into(), value }
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(32 * rows.len() + 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.run, r.x, r.method, r.metric, r.value);
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(crate::error::ImmError::Parse { line: 1, msg: "missing result header".into() }),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = |msg: &str| crate::error::ImmError::Parse { line: i + 1, msg: msg.into() };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            Ok(ResultRow {
                run: f[0].parse().map_err(|_| bad("bad run id"))?,
                x: f[1].parse().map_err(|_| bad("bad x"))?,
                method: f[2].to_string(),
                metric: f[3].to_string(),
                value: f[4].parse().map_err(|_| bad("bad value"))?,
            })
        })
        .collect()
}

/// First 16 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(&Sha256::digest(&json)[..8]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
}

pub fn output_paths<C: Serialize>(root: &Path, experiment: &str, config: &C) -> Result<OutputPaths> {
    let hash = config_hash(config)?;
    let dir = root.join(experiment);
    Ok(OutputPaths { csv: dir.join(format!("{hash}.csv")), json: dir.join(format!("{hash}.json")) })
}

pub fn failed_marker(paths: &OutputPaths) -> PathBuf {
    paths.csv.with_extension("failed")
}

/// Writes the CSV and config sidecar via temporary files and renames.
pub fn write_results<C: Serialize>(root: &Path, experiment: &str, config: &C, rows: &[ResultRow]) -> Result<OutputPaths> {
    write_results_with_sidecar(root, experiment, config, config, rows)
}

/// Like [`write_results`], but the JSON sidecar holds `sidecar` while the
/// file name still hashes `config`.
pub fn write_results_with_sidecar<C: Serialize, S: Serialize>(
    root: &Path,
    experiment: &str,
    config: &C,
    sidecar: &S,
    rows: &[ResultRow],
) -> Result<OutputPaths> {
    let paths = output_paths(root, experiment, config)?;
    let res = (|| -> Result<()> {
        fs::create_dir_all(paths.csv.parent().expect("results dir"))?;
        write_atomic(&paths.json, serde_json::to_string_pretty(sidecar)?.as_bytes())?;
        write_atomic(&paths.csv, to_csv(rows).as_bytes())?;
        Ok(())
    })();
    match res {
        Ok(()) => {
            let _ = fs::remove_file(failed_marker(&paths));
            Ok(paths)
        }
        Err(e) => {
            mark_failed(&paths, &e.to_string());
            Err(e)
        }
    }
}

pub fn mark_failed(paths: &OutputPaths, reason: &str) {
    if let Some(dir) = paths.csv.parent() {
        let _ = fs::create_dir_all(dir);
    }
    let _ = fs::write(failed_marker(paths), reason);
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
