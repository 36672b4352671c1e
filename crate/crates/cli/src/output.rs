//! Output directory: CSV tables and `summary.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use weakkam_core::TorusGrid;

use crate::config::RunConfig;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes one CSV table; `rows` yield already-ordered records.
    pub fn csv<R: Serialize>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = R>) -> io::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(self.path(name)).map_err(io::Error::other)?;
        w.write_record(header).map_err(io::Error::other)?;
        for r in rows {
            w.serialize(r).map_err(io::Error::other)?;
        }
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// `(x1, x2, value)` for every node.
    pub fn field(&mut self, name: &str, column: &str, grid: TorusGrid, values: &[f64]) -> io::Result<()> {
        let rows = (0..grid.len()).map(|k| {
            let x = grid.coord(k);
            (x[0], x[1], values[k])
        });
        self.csv(name, &["x1", "x2", column], rows)
    }

    pub fn mask(&mut self, name: &str, grid: TorusGrid, mask: &[bool]) -> io::Result<()> {
        let rows = (0..grid.len()).map(|k| {
            let x = grid.coord(k);
            (x[0], x[1], u8::from(mask[k]))
        });
        self.csv(name, &["x1", "x2", "in"], rows)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// `summary.json`: the resolved configuration, the results, and the files written.
    pub fn summary(&mut self, config: &RunConfig, results: Value) -> io::Result<()> {
        let mut files = self.written.clone();
        files.push("summary.json".to_string());
        let doc = serde_json::json!({
            "command": config.command,
            "config": config,
            "results": results,
            "files": files,
        });
        self.json("summary.json", &doc)
    }
}

/// Non-finite numbers are not JSON; they are written as strings.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else if v.is_nan() {
        Value::from("nan")
    } else if v > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}
