use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", path.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// One CSV line of results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub dataset: String,
    pub algorithm: String,
    pub update_step: usize,
    pub avg_latency_ms: f64,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "experiment,dataset,algorithm,update_step,avg_latency_ms,seed";

pub fn csv_bytes(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing CSV")
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.context("malformed CSV row")).collect()
}

/// Line-per-record JSON log, owned by one writer.
pub struct JsonLog {
    file: std::io::BufWriter<std::fs::File>,
}

impl JsonLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(JsonLog {
            file: std::io::BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.file, record)?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            ResultRow {
                experiment: "e".into(),
                dataset: "rate8.5".into(),
                algorithm: "mrlco".into(),
                update_step: 3,
                avg_latency_ms: 123.25,
                seed: 7,
            },
            ResultRow {
                experiment: "e".into(),
                dataset: "rate8.5".into(),
                algorithm: "heft".into(),
                update_step: 0,
                avg_latency_ms: 0.1 + 0.2,
                seed: 7,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("{CSV_HEADER}\n")));
        assert!(!text.contains('\r'));
        assert_eq!(read_csv(&path).unwrap(), rows);
        assert_eq!(csv_bytes(&[]).unwrap(), format!("{CSV_HEADER}\n").into_bytes());
    }
}
