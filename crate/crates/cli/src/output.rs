//! Deterministic output files and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "contmeas";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        let mut buf = ryu::Buffer::new();
        buf.format_finite(x).to_owned()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Header shared by every file of one run.
#[derive(Debug, Clone)]
pub struct RunHeader {
    pub command: String,
    pub master_seed: u64,
    pub config: Value,
}

impl RunHeader {
    pub fn json(&self) -> Value {
        json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "rng": contmeas::stochastic::RNG_ALGORITHM,
            "master_seed": self.master_seed,
            "config": self.config,
        })
    }

    fn csv_lines(&self) -> String {
        format!(
            "# {TOOL} {VERSION} {}\n# rng: {}\n# master_seed: {}\n# config: {}\n",
            self.command,
            contmeas::stochastic::RNG_ALGORITHM,
            self.master_seed,
            serde_json::to_string(&self.config).expect("serializable"),
        )
    }
}

/// CSV table; cells are preformatted strings.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self, header: &RunHeader) -> String {
        let mut s = header.csv_lines();
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Collects output files and their checksums.
pub struct OutputDir {
    dir: PathBuf,
    header: RunHeader,
    checksums: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputDir {
    pub fn create(dir: &Path, header: RunHeader) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_owned(),
            header,
            checksums: BTreeMap::new(),
        })
    }

    pub fn header(&self) -> &RunHeader {
        &self.header
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.checksums.insert(name.to_owned(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, table: &Table) -> io::Result<()> {
        let text = table.render(&self.header);
        self.write(name, text.as_bytes())
    }

    /// JSON document wrapped as `{"header": …, "data": …}`.
    pub fn write_json(&mut self, name: &str, data: Value) -> io::Result<()> {
        let doc = json!({ "header": self.header.json(), "data": data });
        let mut text = serde_json::to_string_pretty(&doc).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json`. `error` carries the failure message and exit code.
    pub fn finish(self, error: Option<(&str, i32)>, timestamps: Option<Value>) -> io::Result<()> {
        let mut manifest = self.header.json();
        let m = manifest.as_object_mut().expect("object");
        m.insert("outputs".into(), json!(self.checksums));
        match error {
            None => {
                m.insert("status".into(), json!("ok"));
                m.insert("exit_code".into(), json!(0));
            }
            Some((msg, code)) => {
                m.insert("status".into(), json!("error"));
                m.insert("error".into(), json!(msg));
                m.insert("exit_code".into(), json!(code));
            }
        }
        if let Some(ts) = timestamps {
            m.insert("timestamps".into(), ts);
        }
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)
    }
}

/// Data rows of a CSV written by [`OutputDir::write_csv`]: header comments skipped,
/// first remaining line taken as column names.
pub fn read_csv(path: &Path) -> io::Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty());
    let columns = lines
        .next()
        .ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: no column line", path.display()),
            )
        })?
        .split(',')
        .map(str::to_owned)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    Ok((columns, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_in_shortest_form() {
        for x in [0.1, 1.0, -2.5e-300, 1e21, 0.30000000000000004, 123456.789] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0), "1.0");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
