//! Result serialization: fixed-order CSV tables, a key/value summary, and
//! the resolved-config echo, all written into one output directory.
//!
//! Every numeric column prints floats as `{:.16e}` — 17 significant digits,
//! enough to reconstruct the f64 bit for bit — so identical runs produce
//! byte-identical files. The summary holds run metadata (which may include
//! wall time); only the CSV tables carry the byte-reproducibility contract.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::Result;

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v:.16e}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

/// A named CSV table: one header line, fixed column order.
#[derive(Clone, Debug)]
pub struct Table {
    /// File stem; the file is written as `<name>.csv`.
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, columns: Vec<&'static str>) -> Self {
        Table {
            name,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row arity in {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for cell in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&cell.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Everything one experiment produces: the explicit config it ran from, a
/// key/value summary, and zero or more CSV tables.
#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub out_dir: PathBuf,
    /// TOML text of the config with all defaults explicit.
    pub config_echo: String,
    /// Ordered key/value pairs for `summary.txt`.
    pub summary: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

impl ResultBundle {
    pub fn new(out_dir: &Path, config_echo: String) -> Self {
        ResultBundle {
            out_dir: out_dir.to_path_buf(),
            config_echo,
            summary: Vec::new(),
            tables: Vec::new(),
        }
    }

    /// Append a summary line. Values go through `Display`, so floats print
    /// their shortest round-trip form.
    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.summary.push((key.into(), value.to_string()));
    }

    pub fn push_table(&mut self, table: Table) {
        self.tables.push(table);
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.summary {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(value);
            out.push('\n');
        }
        out
    }

    /// Write `config_resolved.toml`, `summary.txt`, and every table into the
    /// output directory, creating it if needed. Returns the paths written.
    pub fn write(&self) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.out_dir).map_err(|e| io_at(&self.out_dir, e))?;
        let mut written = Vec::new();

        let config_path = self.out_dir.join("config_resolved.toml");
        write_file(&config_path, &self.config_echo)?;
        written.push(config_path);

        let summary_path = self.out_dir.join("summary.txt");
        write_file(&summary_path, &self.summary_text())?;
        written.push(summary_path);

        for table in &self.tables {
            let path = self.out_dir.join(format!("{}.csv", table.name));
            write_file(&path, &table.to_csv())?;
            written.push(path);
        }
        Ok(written)
    }
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_at(path, e))
}
