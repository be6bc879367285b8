//! Header-checked CSV output.

use std::fmt;
use std::path::Path;

use crate::error::Result;

/// A CSV document: one fixed header line and pre-formatted rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub header: &'static str,
    pub rows: Vec<String>,
}

impl Table {
    pub fn new(header: &'static str, rows: Vec<String>) -> Self {
        Self { header, rows }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some(dir) = path.as_ref().parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.header)?;
        for r in &self.rows {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}
