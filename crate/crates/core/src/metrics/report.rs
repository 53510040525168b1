use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SubScores;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyUsed {
    Generalist,
    Specialist,
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub clip_id: String,
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
    pub f_ent: f64,
    pub f_per: f64,
    pub f_x: f64,
    pub policy_used: PolicyUsed,
}

impl ReportRow {
    pub fn scores(&self) -> SubScores {
        SubScores {
            nc: self.nc,
            dac: self.dac,
            ttc: self.ttc,
            comfort: self.comfort,
            ep: self.ep,
            pdms: self.pdms,
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    }
}

/// Serializes rows as CSV with a header line.
pub fn report_to_bytes(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Input(format!("report row {}: {e}", row.clip_id)))?;
    }
    w.into_inner()
        .map_err(|e| Error::Input(format!("report buffer: {e}")))
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let bytes = report_to_bytes(rows)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let row = ReportRow {
            clip_id: "test-00001".into(),
            nc: 1.0,
            dac: 1.0,
            ttc: 0.0,
            comfort: 1.0,
            ep: 0.123456789,
            pdms: 0.3,
            f_ent: 1.5,
            f_per: 0.25,
            f_x: 0.7,
            policy_used: PolicyUsed::Specialist,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&path, std::slice::from_ref(&row)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("clip_id,nc,dac,ttc,comfort,ep,pdms,f_ent,f_per,f_x,policy_used\n"));
        assert_eq!(read_report(&path).unwrap(), vec![row]);
    }
}
