use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use cran_cache::evaluation::format_significant;

/// Provenance block carried by every artifact. Deliberately free of
/// timestamps and host details so reruns are byte-identical.
#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    pub fn csv_header(&self) -> String {
        format!(
            "# tool={} version={}\n# command={}\n# config_sha256={}\n# seed={}\n",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

pub struct OutputDir {
    root: PathBuf,
    meta: Meta,
}

impl OutputDir {
    pub fn create(root: &Path, meta: Meta) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            meta,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Writes `{"meta": .., <body fields>}`; `body` must serialize to an
    /// object.
    pub fn write_json(&self, name: &str, body: &impl Serialize) -> Result<PathBuf> {
        let mut value = serde_json::to_value(body)?;
        let object = value
            .as_object_mut()
            .context("artifact body must be a JSON object")?;
        object.insert("meta".into(), serde_json::to_value(&self.meta)?);
        self.write(name, &(serde_json::to_string_pretty(&value)? + "\n"))
    }

    /// Line-delimited JSON whose first line is `{"meta": ..}`.
    pub fn write_jsonl(&self, name: &str, lines: &str) -> Result<PathBuf> {
        let head = serde_json::to_string(&serde_json::json!({ "meta": self.meta }))?;
        self.write(name, &format!("{head}\n{lines}"))
    }

    /// CSV preceded by `#` metadata lines.
    pub fn write_csv(&self, name: &str, table: &CsvTable) -> Result<PathBuf> {
        self.write(name, &(self.meta.csv_header() + &table.render()))
    }

    /// Prepends the metadata lines to an already rendered CSV body.
    pub fn write_csv_body(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, &(self.meta.csv_header() + body))
    }
}

/// Rows of text cells; numeric cells use six significant digits.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: Vec<String>) -> Self {
        CsvTable {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn num(x: f64) -> String {
    format_significant(x, 6)
}

/// Extracts the `key` member of a wrapped artifact, or the whole document
/// when it is not wrapped.
pub fn unwrap_artifact(text: &str, key: &str) -> Result<Value> {
    let mut value: Value = serde_json::from_str(text)?;
    Ok(match value.get_mut(key) {
        Some(inner) => inner.take(),
        None => value,
    })
}
