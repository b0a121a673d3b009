//! CSV tables with shortest round-trip float formatting, and file helpers.

use std::path::Path;

use crate::CliError;

/// Shortest representation that parses back to the same bits; independent
/// of locale.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn parse_f64(s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::config(format!("`{s}` is not a number")))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric view of column `j`.
    pub fn floats(&self, j: usize) -> Result<Vec<f64>, CliError> {
        self.rows.iter().map(|r| parse_f64(&r[j])).collect()
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).map_err(CliError::io)?;
        for r in &self.rows {
            w.write_record(r).map_err(CliError::io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| CliError::io(std::io::Error::other(e)))
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = r
            .headers()
            .map_err(|e| CliError::config(format!("malformed CSV header: {e}")))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::config(format!("malformed CSV: {e}")))?;
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &self.to_csv()?)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(CliError::io)?;
        }
    }
    std::fs::write(path, text).map_err(CliError::io)
}
