//! File writers. Every file starts with the config digest: a `#` comment for
//! text formats, a leading metadata record for JSONL, a field for JSON.

use crate::error::{CliError, CliResult};
use altruist_marl::MetricsReport;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::artifact(format!("cannot create {}", dir.display()), e))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::artifact(format!("cannot write {}", path.display()), e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).and_then(|_| f.flush()).map_err(|e| CliError::artifact(path.display(), e))
}

/// CSV file whose first line is `# config_sha256=<digest>`.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, digest: &str) -> CliResult<Self> {
        let mut f = create(path)?;
        writeln!(f, "# config_sha256={digest}").map_err(|e| CliError::artifact(path.display(), e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(f),
        })
    }

    pub fn row(&mut self, record: &impl Serialize) -> CliResult<()> {
        self.writer.serialize(record).map_err(|e| CliError::artifact(self.path.display(), e))
    }

    pub fn flush(&mut self) -> CliResult<()> {
        self.writer.flush().map_err(|e| CliError::artifact(self.path.display(), e))
    }
}

#[derive(Serialize)]
pub struct MetricsFile<'a> {
    pub config_sha256: &'a str,
    pub policy: &'a str,
    pub seed: u64,
    pub metrics: &'a MetricsReport,
}

pub fn write_metrics(dir: &Path, stem: &str, file: &MetricsFile<'_>) -> CliResult<()> {
    let json = serde_json::to_string_pretty(file).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(&dir.join(format!("{stem}.json")), &(json + "\n"))?;
    let table = format!(
        "# config_sha256={}\n# policy={} seed={}\n{}",
        file.config_sha256,
        file.policy,
        file.seed,
        file.metrics.to_table()
    );
    write_text(&dir.join(format!("{stem}.txt")), &table)
}
