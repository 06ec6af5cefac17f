//! Result tables, CSV persistence and the `.meta` sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Column-named rows, all cells pre-formatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    /// Appends a row given as `(column, value)` pairs in column order.
    pub fn push(&mut self, row: Vec<(&'static str, String)>) {
        assert_eq!(
            row.iter().map(|(c, _)| *c).collect::<Vec<_>>(),
            self.columns,
            "row does not match the table schema"
        );
        self.rows.push(row.into_iter().map(|(_, v)| v).collect());
    }

    pub fn index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == column)
    }

    pub fn column(&self, column: &str) -> Vec<&str> {
        let i = self.index(column).unwrap_or_else(|| panic!("no column `{column}`"));
        self.rows.iter().map(|r| r[i].as_str()).collect()
    }

    /// Rows whose cells match all `(column, value)` filters.
    pub fn select(&self, filters: &[(&str, &str)]) -> Vec<&Vec<String>> {
        let idx: Vec<(usize, &str)> = filters
            .iter()
            .map(|(c, v)| (self.index(c).unwrap_or_else(|| panic!("no column `{c}`")), *v))
            .collect();
        self.rows
            .iter()
            .filter(|r| idx.iter().all(|(i, v)| r[*i] == *v))
            .collect()
    }

    pub fn get<'a>(&self, row: &'a [String], column: &str) -> &'a str {
        &row[self.index(column).unwrap_or_else(|| panic!("no column `{column}`"))]
    }

    pub fn get_f64(&self, row: &[String], column: &str) -> f64 {
        self.get(row, column).parse().unwrap_or(f64::NAN)
    }
}

/// Shortest round-trip scientific representation; `NaN` for missing values.
pub fn sci(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

/// Plain shortest round-trip representation for configuration scalars.
pub fn plain(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    /// Sidecar entries; the timestamp is added when writing.
    pub meta: BTreeMap<String, String>,
    pub failures: usize,
}

impl Report {
    pub fn csv_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.table.columns)?;
        for r in &self.table.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }

    pub fn meta_text(&self, timestamp: Option<u64>) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("{k}={v}\n"));
        }
        if let Some(t) = timestamp {
            s.push_str(&format!("timestamp={t}\n"));
        }
        s
    }

    /// Writes `<dir>/<basename>.csv` and `<dir>/<basename>.meta`.
    pub fn write(&self, dir: &Path, basename: &str) -> Result<(PathBuf, PathBuf), CliError> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{basename}.csv"));
        let meta_path = dir.join(format!("{basename}.meta"));
        std::fs::write(&csv_path, self.csv_bytes()?)?;
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        std::fs::write(&meta_path, self.meta_text(Some(ts)))?;
        Ok((csv_path, meta_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_roundtrip_through_csv() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![("a", "1".into()), ("b", sci(0.25))]);
        t.push(vec![("a", "x,y".into()), ("b", sci(f64::NAN))]);
        let report = Report {
            table: t,
            meta: BTreeMap::from([("k".to_string(), "v".to_string())]),
            failures: 0,
        };
        let text = String::from_utf8(report.csv_bytes().unwrap()).unwrap();
        assert_eq!(text, "a,b\n1,2.5e-1\n\"x,y\",NaN\n");
        assert_eq!(report.meta_text(None), "k=v\n");
        assert_eq!(report.table.select(&[("a", "1")]).len(), 1);
    }

    #[test]
    #[should_panic(expected = "schema")]
    fn rejects_misordered_rows() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![("b", "1".into()), ("a", "2".into())]);
    }

    #[test]
    fn sci_roundtrips() {
        for x in [1e-300, 0.1, 3.0, 12345.678, -2.5e-7] {
            assert_eq!(sci(x).parse::<f64>().unwrap(), x);
        }
    }
}
