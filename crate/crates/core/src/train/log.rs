use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Column order of the run log CSV. Never reorder; append only.
pub const RUNLOG_COLUMNS: [&str; 11] = [
    "epoch", "l_sed", "l_fc", "l_sc", "lambda1", "lambda2", "total", "lr", "fc_clips", "sc_clips", "train_f1",
];

/// Per-epoch aggregates. Losses are means over the epoch's batches.
/// `fc_clips`/`sc_clips` count clips that entered the respective term, so an
/// inactive term shows as 0 in every row.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_sed: f64,
    pub l_fc: f64,
    pub l_sc: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub total: f64,
    pub lr: f64,
    pub fc_clips: usize,
    pub sc_clips: usize,
    /// Macro frame F1 of the final metrics; only set on the last row.
    pub train_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    /// Floats use shortest round-trip formatting so the file determines the values exactly.
    pub fn to_csv(&self) -> String {
        let mut s = RUNLOG_COLUMNS.join(",");
        s.push('\n');
        for r in &self.records {
            let f1 = r.train_f1.map_or("na".to_string(), |v| v.to_string());
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch, r.l_sed, r.l_fc, r.l_sc, r.lambda1, r.lambda2, r.total, r.lr, r.fc_clips, r.sc_clips, f1
            )
            .expect("string write");
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(path, "empty run log"))?;
        if header != RUNLOG_COLUMNS.join(",") {
            return Err(Error::format(path, format!("unexpected header `{header}`")));
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = |d: String| Error::format(path, format!("line {}: {d}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != RUNLOG_COLUMNS.len() {
                return Err(bad(format!("{} fields, expected {}", f.len(), RUNLOG_COLUMNS.len())));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].parse().map_err(|_| bad(format!("`{}` is not a number in column {}", f[i], RUNLOG_COLUMNS[i])))
            };
            let int = |i: usize| -> Result<usize> {
                f[i].parse().map_err(|_| bad(format!("`{}` is not an integer in column {}", f[i], RUNLOG_COLUMNS[i])))
            };
            let record = EpochRecord {
                epoch: int(0)?,
                l_sed: num(1)?,
                l_fc: num(2)?,
                l_sc: num(3)?,
                lambda1: num(4)?,
                lambda2: num(5)?,
                total: num(6)?,
                lr: num(7)?,
                fc_clips: int(8)?,
                sc_clips: int(9)?,
                train_f1: if f[10] == "na" { None } else { Some(num(10)?) },
            };
            if records.last().is_some_and(|p: &EpochRecord| p.epoch >= record.epoch) {
                return Err(bad("epochs not strictly increasing".into()));
            }
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}
