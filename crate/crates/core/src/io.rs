//! File formats: JSON, JSON-lines and CSV readers/writers with line context
//! in error messages.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DirectionalScoreMatrix, LabelMatrix, LabelSpace, RelationEdge, RelationGraph};

/// Rounds to 9 significant digits. Serializing the result with the shortest
/// round-trip representation yields at most 9 digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Parses one value per non-blank line. Errors carry the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(path, BufReader::new(f))
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).map_err(|e| Error::invalid(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    write_file(path, to_jsonl(items)?.as_bytes())
}

/// One line of `relations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationLine {
    pub a: String,
    pub b: String,
    pub strength: f64,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relaxed: bool,
}

pub const UNTYPED: &str = "untyped";

impl From<&RelationEdge> for RelationLine {
    fn from(e: &RelationEdge) -> Self {
        RelationLine {
            a: e.a.clone(),
            b: e.b.clone(),
            strength: e.strength,
            kind: e.kind.map_or(UNTYPED, |t| t.as_str()).to_string(),
            relaxed: e.relaxed,
        }
    }
}

impl TryFrom<RelationLine> for RelationEdge {
    type Error = Error;

    fn try_from(line: RelationLine) -> Result<Self> {
        let kind = match line.kind.as_str() {
            UNTYPED => None,
            s => Some(s.parse()?),
        };
        Ok(RelationEdge {
            a: line.a,
            b: line.b,
            strength: line.strength,
            kind,
            relaxed: line.relaxed,
        })
    }
}

pub fn relations_to_jsonl(graph: &RelationGraph) -> Result<String> {
    to_jsonl(graph.edges().map(RelationLine::from))
}

pub fn relations_from_lines(
    space_a: &str,
    space_b: &str,
    lines: Vec<RelationLine>,
) -> Result<RelationGraph> {
    let edges = lines
        .into_iter()
        .map(RelationEdge::try_from)
        .collect::<Result<Vec<_>>>()?;
    RelationGraph::from_edges(space_a, space_b, edges)
}

pub fn read_relations(path: &Path, space_a: &str, space_b: &str) -> Result<RelationGraph> {
    relations_from_lines(space_a, space_b, read_jsonl(path)?).map_err(|e| match e {
        Error::Invalid(msg) => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: msg,
        },
        other => other,
    })
}

pub fn write_relations(path: &Path, graph: &RelationGraph) -> Result<()> {
    write_file(path, relations_to_jsonl(graph)?.as_bytes())
}

/// Every cell of a label matrix as an untyped relation line, row-major.
pub fn matrix_to_graph(matrix: &LabelMatrix) -> Result<RelationGraph> {
    RelationGraph::from_edges(
        matrix.rows.dataset(),
        matrix.cols.dataset(),
        matrix
            .cells()
            .map(|(a, b, v)| RelationEdge::untyped(a, b, v)),
    )
}

/// Rebuilds a dense matrix from pair strengths; missing pairs are 0.
pub fn graph_to_matrix(
    graph: &RelationGraph,
    rows: &LabelSpace,
    cols: &LabelSpace,
) -> Result<LabelMatrix> {
    let mut m = LabelMatrix::zeros(rows.clone(), cols.clone());
    for e in graph.edges() {
        let i = rows.require(&e.a)?;
        let j = cols.require(&e.b)?;
        m.values[(i, j)] = e.strength;
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct DirectionalFile {
    from: String,
    to: String,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    values: Vec<Vec<f64>>,
    support: Vec<usize>,
    #[serde(default)]
    unsupported: Vec<String>,
}

pub fn directional_to_json(m: &DirectionalScoreMatrix, round: bool) -> Result<String> {
    let f = |v: f64| if round { round_sig9(v) } else { v };
    let file = DirectionalFile {
        from: m.from_space().to_string(),
        to: m.to_space().to_string(),
        row_labels: m.scores.rows.labels().to_vec(),
        col_labels: m.scores.cols.labels().to_vec(),
        values: m
            .scores
            .values
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().map(f).collect())
            .collect(),
        support: m.support.clone(),
        unsupported: m.unsupported.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn directional_from_json(path: &Path, text: &str) -> Result<DirectionalScoreMatrix> {
    let file: DirectionalFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let rows = LabelSpace::new(file.from, file.row_labels)?;
    let cols = LabelSpace::new(file.to, file.col_labels)?;
    let (nr, nc) = (rows.len(), cols.len());
    if file.values.len() != nr
        || file.values.iter().any(|r| r.len() != nc)
        || file.support.len() != nc
    {
        return Err(Error::Dimension(format!(
            "{}: values/support do not match {nr}x{nc} labels",
            path.display()
        )));
    }
    let flat: Vec<f64> = file.values.into_iter().flatten().collect();
    if flat.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!(
            "{}: directional scores must lie in [0, 1]",
            path.display()
        )));
    }
    let values =
        Array2::from_shape_vec((nr, nc), flat).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(DirectionalScoreMatrix {
        scores: LabelMatrix::from_values(rows, cols, values)?,
        support: file.support,
        unsupported: file.unsupported,
    })
}

pub fn read_directional(path: &Path) -> Result<DirectionalScoreMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    directional_from_json(path, &text)
}

pub fn write_directional(path: &Path, m: &DirectionalScoreMatrix) -> Result<()> {
    write_file(path, directional_to_json(m, true)?.as_bytes())
}

/// `label,gain` rows with a header line.
pub fn read_gains(path: &Path) -> Result<Vec<crate::apps::TransferGainRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(f);
    let mut out = Vec::new();
    for (i, row) in reader
        .deserialize::<crate::apps::TransferGainRecord>()
        .enumerate()
    {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        if !row.gain.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("gain for `{}` is not finite", row.target_label),
            });
        }
        out.push(row);
    }
    Ok(out)
}
