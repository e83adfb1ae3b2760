use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use crw::mtp::{self, TestRecord};
use crw::simharness::ExternalWeights;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn column(headers: &csv::StringRecord, name: &str) -> CliResult<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::config(anyhow!("column '{name}' not found in header")))
}

fn parse_number(field: Option<&str>, name: &str, line: u64) -> CliResult<f64> {
    let raw = field.unwrap_or("").trim();
    raw.parse::<f64>()
        .map_err(|_| CliError::data(anyhow!("line {line}: {name} value '{raw}' is not a number")))
}

/// Reads tests from a headered CSV and assigns covariate ranks.
pub fn ingest_csv(path: &Path, cfg: &RunConfig) -> CliResult<Vec<TestRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(anyhow!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::data(anyhow!("cannot read header of {}: {e}", path.display())))?
        .clone();
    if headers.is_empty() {
        return Err(CliError::data(anyhow!("{} is empty", path.display())));
    }
    let p_col = column(&headers, &cfg.pvalue_column)?;
    let c_col = column(&headers, &cfg.covariate_column)?;
    let id_col = match &cfg.id_column {
        Some(name) => Some(column(&headers, name)?),
        None => headers.iter().position(|h| h.trim() == "id"),
    };

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::data(anyhow!("line {line}: malformed row: {e}"))
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let p = parse_number(row.get(p_col), &cfg.pvalue_column, line)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::data(anyhow!("line {line}: p-value {p} is outside [0, 1]")));
        }
        let c = parse_number(row.get(c_col), &cfg.covariate_column, line)?;
        if !c.is_finite() {
            return Err(CliError::data(anyhow!("line {line}: covariate {c} is not finite")));
        }
        let id = match id_col {
            Some(i) => row.get(i).unwrap_or("").to_string(),
            None => records.len().saturating_add(1).to_string(),
        };
        records.push(TestRecord::new(id, p, c));
    }
    if records.is_empty() {
        return Err(CliError::data(anyhow!("{} has no data rows", path.display())));
    }
    mtp::rank_by_covariate(&mut records);
    Ok(records)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(anyhow!("cannot read {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Files staged in the output directory and renamed into place together.
/// Nothing is left behind if the set is dropped before `commit`.
pub struct OutputSet {
    dir: PathBuf,
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::config(anyhow!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(OutputSet { dir: dir.to_path_buf(), staged: Vec::new() })
    }

    pub fn stage(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let write = || -> anyhow::Result<NamedTempFile> {
            let mut tmp = NamedTempFile::new_in(&self.dir).context("creating temporary file")?;
            tmp.write_all(contents.as_bytes()).context("writing temporary file")?;
            tmp.as_file().sync_all().context("flushing temporary file")?;
            Ok(tmp)
        };
        let tmp = write().map_err(CliError::data)?;
        self.staged.push((tmp, self.dir.join(name)));
        Ok(())
    }

    /// Renames every staged file; on failure removes those already placed.
    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        let mut placed = Vec::new();
        for (tmp, target) in self.staged {
            if let Err(e) = tmp.persist(&target) {
                for p in &placed {
                    let _ = fs::remove_file(p);
                }
                return Err(CliError::data(anyhow!("cannot write {}: {}", target.display(), e.error)));
            }
            placed.push(target);
        }
        Ok(placed)
    }
}

/// Columns `cell,replicate,test,weight`.
pub fn read_external_weights(path: &Path) -> CliResult<ExternalWeights> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::config(anyhow!("cannot open external weights {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::data(anyhow!("{e}")))?.clone();
    let cols = ["cell", "replicate", "test", "weight"]
        .iter()
        .map(|n| column(&headers, n))
        .collect::<CliResult<Vec<usize>>>()?;
    let mut out = ExternalWeights::default();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::data(anyhow!("external weights: {e}")))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let index = |k: usize, name: &str| -> CliResult<usize> {
            let raw = row.get(cols[k]).unwrap_or("");
            raw.parse::<usize>()
                .map_err(|_| CliError::data(anyhow!("line {line}: {name} '{raw}' is not a non-negative integer")))
        };
        let weight = parse_number(row.get(cols[3]), "weight", line)?;
        out.insert(index(0, "cell")?, index(1, "replicate")?, index(2, "test")?, weight);
    }
    Ok(out)
}
