//! Word-embedding table and cosine similarity between label names.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LabelMatrix, LabelSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

/// Lowercased alphanumeric runs of a label, e.g. "Potted-Plant" → [potted, plant].
pub fn tokenize(label: &str) -> Vec<String> {
    label
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl WordEmbeddingTable {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (token, v) in entries {
            let token = token.to_lowercase();
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::Dimension(format!(
                    "vector for `{token}` has dimension {}, expected {}",
                    v.len(),
                    dim.unwrap_or_default()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) || norm(&v) == 0.0 {
                return Err(Error::invalid(format!(
                    "vector for `{token}` is zero or non-finite"
                )));
            }
            if vectors.insert(token.clone(), v).is_some() {
                return Err(Error::invalid(format!("duplicate token `{token}`")));
            }
        }
        Ok(WordEmbeddingTable {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    /// Parses `token<TAB>x1 x2 ...` lines (components separated by tabs or
    /// spaces).
    pub fn parse_tsv(path: &Path, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (token, rest) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `token<TAB>values`".into()))?;
            let v = rest
                .split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|e| parse_err(format!("`{x}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push((token.to_string(), v));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(path, &text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean of the label's token vectors.
    pub fn label_vector(&self, label: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(label);
        if tokens.is_empty() {
            return Err(Error::invalid(format!(
                "label `{label}` has no word tokens"
            )));
        }
        let missing: Vec<&str> = tokens
            .iter()
            .filter(|t| !self.vectors.contains_key(*t))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "no word vector for {} (label `{label}`)",
                missing.join(", ")
            )));
        }
        let mut mean = vec![0.0; self.dim];
        for t in &tokens {
            for (m, x) in mean.iter_mut().zip(&self.vectors[t]) {
                *m += x;
            }
        }
        let n = tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Cosine similarity of the two labels' vectors.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        cosine(&self.label_vector(a)?, &self.label_vector(b)?)
    }

    pub fn similarity_matrix(
        &self,
        space_a: &LabelSpace,
        space_b: &LabelSpace,
    ) -> Result<LabelMatrix> {
        let rows = space_a
            .labels()
            .iter()
            .map(|a| self.label_vector(a))
            .collect::<Result<Vec<_>>>()?;
        let cols = space_b
            .labels()
            .iter()
            .map(|b| self.label_vector(b))
            .collect::<Result<Vec<_>>>()?;
        let mut m = LabelMatrix::zeros(space_a.clone(), space_b.clone());
        for (i, x) in rows.iter().enumerate() {
            for (j, y) in cols.iter().enumerate() {
                m.values[(i, j)] = cosine(x, y)?;
            }
        }
        Ok(m)
    }
}

pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}
