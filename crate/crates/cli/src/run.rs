//! Per-invocation bookkeeping: the output directory, files read and written,
//! float rounding of outputs, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use labelrel::io::round_sig9;
use labelrel::{Error, PipelineConfig};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub struct Run {
    pub subcommand: String,
    pub out_dir: PathBuf,
    pub config: PipelineConfig,
    args: Vec<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    args: &'a [String],
    config: &'a PipelineConfig,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    created_unix_seconds: u64,
}

/// Rounds every non-integer number to 9 significant digits.
pub fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(round_sig9(x)).map_or(Value::Null, Value::Number)
        }
        Value::Array(xs) => Value::Array(xs.into_iter().map(round_value).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, round_value(v))).collect())
        }
        other => other,
    }
}

fn to_value<T: Serialize + ?Sized>(value: &T) -> Result<Value, CliError> {
    serde_json::to_value(value)
        .map(round_value)
        .map_err(|e| CliError::from(Error::Invalid(e.to_string())))
}

/// Float formatting for CSV cells.
pub fn fmt_f64(x: f64) -> String {
    format!("{}", round_sig9(x))
}

fn hash_file(path: &Path) -> Result<FileEntry, CliError> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(FileEntry {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl Run {
    pub fn new(
        subcommand: &str,
        out_dir: PathBuf,
        config: PipelineConfig,
        args: Vec<String>,
    ) -> Self {
        Run {
            subcommand: subcommand.to_string(),
            out_dir,
            config,
            args,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Records `path` as an input and returns it.
    pub fn input<'p>(&mut self, path: &'p Path) -> &'p Path {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        path
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        labelrel::io::write_file(&path, bytes)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(
        &mut self,
        name: &str,
        value: &T,
    ) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(&to_value(value)?)
            .map_err(|e| CliError::from(Error::Invalid(e.to_string())))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(
        &mut self,
        name: &str,
        items: impl IntoIterator<Item = T>,
    ) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        for item in items {
            let line = serde_json::to_string(&to_value(&item)?)
                .map_err(|e| CliError::from(Error::Invalid(e.to_string())))?;
            text.push_str(&line);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_relations(
        &mut self,
        name: &str,
        graph: &labelrel::RelationGraph,
    ) -> Result<PathBuf, CliError> {
        self.write_jsonl(name, graph.edges().map(labelrel::io::RelationLine::from))
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &str,
        rows: &[Vec<String>],
    ) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header_fields: Vec<&str> = header.split(',').collect();
        let csv_err = |e: csv::Error| CliError::from(Error::Invalid(e.to_string()));
        w.write_record(&header_fields).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::from(Error::Invalid(e.to_string())))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_manifest(&self, path: Option<&Path>) -> Result<PathBuf, CliError> {
        let path = path.map_or_else(
            || {
                self.out_dir
                    .join(format!("{}.manifest.json", self.subcommand))
            },
            Path::to_path_buf,
        );
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: &self.subcommand,
            args: &self.args,
            config: &self.config,
            inputs: self
                .inputs
                .iter()
                .map(|p| hash_file(p))
                .collect::<Result<_, _>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|p| hash_file(p))
                .collect::<Result<_, _>>()?,
            created_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let mut text = serde_json::to_string_pretty(&to_value(&manifest)?)
            .map_err(|e| CliError::from(Error::Invalid(e.to_string())))?;
        text.push('\n');
        labelrel::io::write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}
