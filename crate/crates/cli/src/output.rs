use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::failure::Failure;

/// Output directory plus a record of every file written into it.
pub struct Output {
    dir: PathBuf,
    pub plot: bool,
    written: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path, plot: bool) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(e, &format!("cannot create {}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), plot, written: Vec::new() })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| Failure::io(e, &format!("cannot write {}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut body = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
        body.push('\n');
        self.text(name, &body)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Failure::config(e.to_string());
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::config(e.to_string()))?;
        self.text(name, &String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// An `(x, y)` series, written only under `--plot-data`.
    pub fn series(&mut self, name: &str, points: &[(f64, f64)]) -> Result<(), Failure> {
        if !self.plot {
            return Ok(());
        }
        let rows: Vec<Vec<String>> = points.iter().map(|(x, y)| vec![num(*x), num(*y)]).collect();
        self.csv(name, &["x", "y"], &rows)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
