use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

/// Metrics of one finished epoch; `epoch` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

impl EpochRecord {
    /// CSV row. Values use the shortest representation that parses back to
    /// the same `f64`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc, self.lr
        )
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        s += &r.csv_row();
        s.push('\n');
    }
    s
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HISTORY_HEADER => {}
        other => {
            return Err(Error::Validation(format!(
                "history header {other:?}, expected {HISTORY_HEADER:?}"
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Validation(format!("history line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].trim().parse().map_err(|_| bad())?,
                train_loss: num(1)?,
                train_acc: num(2)?,
                val_loss: num(3)?,
                val_acc: num(4)?,
                lr: num(5)?,
            })
        })
        .collect()
}

/// Append-only history file, flushed after every row.
pub(crate) struct HistoryWriter {
    file: std::fs::File,
    path: std::path::PathBuf,
}

impl HistoryWriter {
    /// Creates the file with a header and any already completed rows.
    pub fn create(path: &Path, existing: &[EpochRecord]) -> Result<Self> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(history_csv(existing).as_bytes())
            .map_err(|e| Error::io(path, e))?;
        file.flush().map_err(|e| Error::io(path, e))?;
        Ok(HistoryWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.file, "{}", r.csv_row())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
