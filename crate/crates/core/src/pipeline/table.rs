use std::path::Path;

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::metrics::Label;
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub path: String,
    pub label: Label,
    pub split: Split,
    pub values: Vec<f64>,
}

/// Labeled numeric rows as written to `features_*.csv` and `traces.csv`.
/// Values are printed in shortest round-trip form, so reading a table back
/// gives bit-identical numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl FeatureTable {
    pub fn to_csv(&self, with_path: bool) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header: Vec<&str> = Vec::with_capacity(self.columns.len() + 3);
        if with_path {
            header.push("path");
        }
        header.extend(["label", "split"]);
        header.extend(self.columns.iter().map(|c| c.as_str()));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if with_path {
                rec.push(r.path.clone());
            }
            rec.push(r.label.to_string());
            rec.push(r.split.to_string());
            rec.extend(r.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write(&self, path: &Path, with_path: bool) -> Result<()> {
        write_atomic(path, &self.to_csv(with_path)?)
    }

    /// Reads a table written with paths.
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "path" || &header[1] != "label" || &header[2] != "split" {
            return Err(Error::parse(Some(1), "table header must start with path,label,split"));
        }
        let columns: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = Some(i + 2);
            let values = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse(line, format!("bad number `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(TableRow {
                path: rec[0].to_string(),
                label: rec[1].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?,
                split: rec[2].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?,
                values,
            });
        }
        Ok(FeatureTable { columns, rows })
    }
}
