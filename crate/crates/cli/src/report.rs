//! Tabular reports rendered as CSV (with `#` metadata lines) or JSON.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// One report: fixed columns, rows of JSON scalars, and the metadata that
/// makes it reproducible.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: &'static str,
    pub seed: u64,
    pub config: Value,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

impl Report {
    pub fn new(
        command: &'static str,
        seed: u64,
        config: Value,
        columns: Vec<&'static str>,
    ) -> Self {
        Report {
            command,
            seed,
            config,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> CliResult<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => Ok(self.to_json()),
        }
    }

    fn to_csv(&self) -> CliResult<String> {
        let mut out = format!(
            "# tool=metapac {}\n# command={}\n# seed={}\n# config={}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.seed,
            self.config
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(cell))?;
        }
        let body = w
            .into_inner()
            .map_err(|e| crate::error::CliError::Domain(e.to_string()))?;
        out.push_str(&String::from_utf8_lossy(&body));
        Ok(out)
    }

    fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .map(|c| c.to_string())
                    .zip(r.iter().cloned())
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let doc = serde_json::json!({
            "tool": format!("metapac {}", env!("CARGO_PKG_VERSION")),
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "columns": self.columns,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("json values serialize");
        s.push('\n');
        s
    }

    /// Writes `<dir>/<name>.<ext>` and returns the path.
    pub fn write(&self, dir: &Path, name: &str, format: Format) -> CliResult<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{name}.{}", format.extension()));
        std::fs::write(&path, self.render(format)?)?;
        Ok(path)
    }
}

/// JSON number, or the string form for non-finite values.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or_else(|| Value::String(v.to_string()))
}

pub fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

/// `k=v;k=v` pairs.
pub fn pairs<'a>(items: impl IntoIterator<Item = (&'a str, f64)>) -> Value {
    text(
        items
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";"),
    )
}
