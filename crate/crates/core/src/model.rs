//! Shared data model: label spaces, per-instance score records, score
//! matrices and relation graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved label used inside score vectors for "none of my labels".
pub const BACKGROUND: &str = "__background__";

/// The named labels of one dataset. The background label is implicit and
/// never part of `labels`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace", into = "RawLabelSpace")]
pub struct LabelSpace {
    dataset: String,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawLabelSpace {
    dataset: String,
    labels: Vec<String>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = Error;

    fn try_from(raw: RawLabelSpace) -> Result<Self> {
        LabelSpace::new(raw.dataset, raw.labels)
    }
}

impl From<LabelSpace> for RawLabelSpace {
    fn from(space: LabelSpace) -> Self {
        RawLabelSpace {
            dataset: space.dataset,
            labels: space.labels,
        }
    }
}

impl LabelSpace {
    pub fn new<S: Into<String>>(
        dataset: impl Into<String>,
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let dataset = dataset.into();
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::invalid(format!("empty label name in `{dataset}`")));
            }
            if label == BACKGROUND {
                return Err(Error::invalid(format!(
                    "`{BACKGROUND}` is reserved and cannot be a label of `{dataset}`"
                )));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate label `{label}` in `{dataset}`"
                )));
            }
        }
        Ok(LabelSpace {
            dataset,
            labels,
            index,
        })
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub(crate) fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownLabel {
            space: self.dataset.clone(),
            label: label.to_string(),
        })
    }
}

/// Relation between label `a` of the first space and label `b` of the second.
/// `Parent` reads "a is parent of b".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    Identity,
    Parent,
    Child,
    Overlap,
    PartOf,
    None,
}

impl RelationType {
    pub const ALL: [RelationType; 6] = [
        RelationType::Identity,
        RelationType::Parent,
        RelationType::Child,
        RelationType::Overlap,
        RelationType::PartOf,
        RelationType::None,
    ];

    /// The type of the same pair read with the roles of the two spaces swapped.
    pub fn mirror(self) -> Self {
        match self {
            RelationType::Parent => RelationType::Child,
            RelationType::Child => RelationType::Parent,
            other => other,
        }
    }

    /// Whether the type denotes an actual relation (anything but `None`).
    pub fn is_related(self) -> bool {
        self != RelationType::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::Identity => "identity",
            RelationType::Parent => "parent",
            RelationType::Child => "child",
            RelationType::Overlap => "overlap",
            RelationType::PartOf => "part_of",
            RelationType::None => "none",
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown relation type `{s}`")))
    }
}

/// One annotated instance of the source dataset, scored by a model trained
/// on the foreign dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScoreRecord {
    pub instance_id: String,
    pub source_dataset: String,
    pub true_label: String,
    /// Score of the instance's own label under its own dataset's model.
    pub self_score: f64,
    /// Probabilities over the foreign labels plus [`BACKGROUND`].
    pub foreign_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub instance_id: String,
    pub true_label: String,
    pub vector: Vec<f64>,
}

/// How per-instance foreign scores were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    PixelProbability,
    Embedding1nn,
}

/// Dense matrix indexed by (row label, column label).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub rows: LabelSpace,
    pub cols: LabelSpace,
    pub values: Array2<f64>,
}

impl LabelMatrix {
    pub fn zeros(rows: LabelSpace, cols: LabelSpace) -> Self {
        let values = Array2::zeros((rows.len(), cols.len()));
        LabelMatrix { rows, cols, values }
    }

    pub fn from_values(rows: LabelSpace, cols: LabelSpace, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (rows.len(), cols.len()) {
            return Err(Error::Dimension(format!(
                "matrix is {:?}, label spaces are {}x{}",
                values.dim(),
                rows.len(),
                cols.len()
            )));
        }
        Ok(LabelMatrix { rows, cols, values })
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        Some(self.values[(self.rows.index_of(row)?, self.cols.index_of(col)?)])
    }

    pub fn transpose(&self) -> Self {
        LabelMatrix {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            values: self.values.t().to_owned(),
        }
    }

    /// Every (row, column, value) triple in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.values.indexed_iter().map(|((i, j), &v)| {
            (
                self.rows.labels[i].as_str(),
                self.cols.labels[j].as_str(),
                v,
            )
        })
    }

    pub fn same_shape(&self, other: &LabelMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// S_{a→b}: rows are the labels of the model's dataset, columns the labels of
/// the dataset whose instances were scored.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalScoreMatrix {
    pub scores: LabelMatrix,
    /// Number of easy instances that contributed to each column.
    pub support: Vec<usize>,
    /// Column labels with no easy instance; their cells are 0.
    pub unsupported: Vec<String>,
}

impl DirectionalScoreMatrix {
    pub fn from_space(&self) -> &str {
        self.scores.rows.dataset()
    }

    pub fn to_space(&self) -> &str {
        self.scores.cols.dataset()
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        self.scores.get(row, col)
    }

    /// Instance count n_b behind cell (row, col).
    pub fn support_of(&self, col: &str) -> Option<usize> {
        self.scores.cols.index_of(col).map(|j| self.support[j])
    }
}

/// One edge of a [`RelationGraph`]. `kind == None` means untyped.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEdge {
    pub a: String,
    pub b: String,
    pub strength: f64,
    pub kind: Option<RelationType>,
    /// Set when the type came from the fallback rather than a strict rule.
    pub relaxed: bool,
}

impl RelationEdge {
    pub fn untyped(a: impl Into<String>, b: impl Into<String>, strength: f64) -> Self {
        RelationEdge {
            a: a.into(),
            b: b.into(),
            strength,
            kind: None,
            relaxed: false,
        }
    }

    pub fn typed(
        a: impl Into<String>,
        b: impl Into<String>,
        strength: f64,
        kind: RelationType,
    ) -> Self {
        RelationEdge {
            kind: Some(kind),
            ..RelationEdge::untyped(a, b, strength)
        }
    }
}

/// Set of (a, b) relations between two label spaces, keyed and ordered by
/// (a, b).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelationGraph {
    pub space_a: String,
    pub space_b: String,
    edges: BTreeMap<(String, String), RelationEdge>,
}

impl RelationGraph {
    pub fn new(space_a: impl Into<String>, space_b: impl Into<String>) -> Self {
        RelationGraph {
            space_a: space_a.into(),
            space_b: space_b.into(),
            edges: BTreeMap::new(),
        }
    }

    pub fn from_edges(
        space_a: impl Into<String>,
        space_b: impl Into<String>,
        edges: impl IntoIterator<Item = RelationEdge>,
    ) -> Result<Self> {
        let mut graph = RelationGraph::new(space_a, space_b);
        for edge in edges {
            graph.insert(edge)?;
        }
        Ok(graph)
    }

    pub fn insert(&mut self, edge: RelationEdge) -> Result<()> {
        if !edge.strength.is_finite() || edge.strength < 0.0 {
            return Err(Error::invalid(format!(
                "edge ({}, {}) has strength {}, expected a finite value >= 0",
                edge.a, edge.b, edge.strength
            )));
        }
        if edge.a == BACKGROUND || edge.b == BACKGROUND {
            return Err(Error::invalid("background cannot be a relation endpoint"));
        }
        let key = (edge.a.clone(), edge.b.clone());
        if self.edges.contains_key(&key) {
            return Err(Error::invalid(format!(
                "duplicate edge ({}, {})",
                key.0, key.1
            )));
        }
        self.edges.insert(key, edge);
        Ok(())
    }

    pub fn get(&self, a: &str, b: &str) -> Option<&RelationEdge> {
        self.edges.get(&(a.to_string(), b.to_string()))
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.get(a, b).is_some()
    }

    pub fn edges(&self) -> impl Iterator<Item = &RelationEdge> {
        self.edges.values()
    }

    pub fn edges_mut(&mut self) -> impl Iterator<Item = &mut RelationEdge> {
        self.edges.values_mut()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Same relations with the two spaces swapped; types are mirrored.
    pub fn transpose(&self) -> Self {
        let mut out = RelationGraph::new(self.space_b.clone(), self.space_a.clone());
        for e in self.edges() {
            let edge = RelationEdge {
                a: e.b.clone(),
                b: e.a.clone(),
                strength: e.strength,
                kind: e.kind.map(RelationType::mirror),
                relaxed: e.relaxed,
            };
            out.edges.insert((edge.a.clone(), edge.b.clone()), edge);
        }
        out
    }

    /// The type of every edge as a map, `None` for untyped edges.
    pub fn types(&self) -> BTreeMap<(String, String), Option<RelationType>> {
        self.edges
            .iter()
            .map(|(k, e)| (k.clone(), e.kind))
            .collect()
    }

    /// Checks every endpoint against the given spaces.
    pub fn check_endpoints(&self, space_a: &LabelSpace, space_b: &LabelSpace) -> Result<()> {
        for e in self.edges() {
            space_a.require(&e.a)?;
            space_b.require(&e.b)?;
        }
        Ok(())
    }

    /// Label pairs whose edge type is related (untyped edges count as related).
    pub fn related_pairs(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .filter(|(_, e)| e.kind.is_none_or(RelationType::is_related))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PixelReduction {
    #[default]
    Mean,
    Max,
}

/// Tunable parameters of the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub relation_threshold: f64,
    pub asymmetry_t: f64,
    pub taxonomy_boost_n: f64,
    pub taxonomy_t_factor_m: f64,
    pub easy_threshold: f64,
    pub aggregation_mode: PixelReduction,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            relation_threshold: 0.25,
            asymmetry_t: 2.0,
            taxonomy_boost_n: 2.0,
            taxonomy_t_factor_m: 2.0,
            easy_threshold: 0.5,
            aggregation_mode: PixelReduction::Mean,
            parallelism: 1,
            seed: 17,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("relation_threshold", self.relation_threshold),
            ("asymmetry_t", self.asymmetry_t),
            ("taxonomy_boost_n", self.taxonomy_boost_n),
            ("taxonomy_t_factor_m", self.taxonomy_t_factor_m),
            ("easy_threshold", self.easy_threshold),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.asymmetry_t <= 1.0 {
            return Err(Error::invalid(format!(
                "asymmetry_t must be > 1, got {}",
                self.asymmetry_t
            )));
        }
        if self.taxonomy_boost_n < 1.0 {
            return Err(Error::invalid("taxonomy_boost_n must be >= 1"));
        }
        if self.taxonomy_t_factor_m < 1.0 {
            return Err(Error::invalid("taxonomy_t_factor_m must be >= 1"));
        }
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownTrueLabel,
    UnknownForeignLabel,
    OutOfRange,
    NotNormalized,
    NotOneHot,
    DuplicateInstance,
    WrongSourceDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub instance_id: String,
    pub kind: ViolationKind,
    pub message: String,
}

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Checks records of dataset B scored under A's label space. An empty list
/// means the input is valid. `require_normalized` applies the sum-to-one check
/// in pixel-probability mode; max-reduced scores are not normalized.
pub fn validate_inputs(
    space_a: &LabelSpace,
    space_b: &LabelSpace,
    records: &[InstanceScoreRecord],
    mode: ScoreMode,
    require_normalized: bool,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |r: &InstanceScoreRecord, kind, message: String| {
        out.push(Violation {
            instance_id: r.instance_id.clone(),
            kind,
            message,
        })
    };
    for r in records {
        if !seen.insert(r.instance_id.as_str()) {
            push(
                r,
                ViolationKind::DuplicateInstance,
                "duplicate instance_id".into(),
            );
        }
        if r.source_dataset != space_b.dataset() {
            push(
                r,
                ViolationKind::WrongSourceDataset,
                format!(
                    "source_dataset `{}` differs from `{}`",
                    r.source_dataset,
                    space_b.dataset()
                ),
            );
        }
        if !space_b.contains(&r.true_label) {
            push(
                r,
                ViolationKind::UnknownTrueLabel,
                format!(
                    "true_label `{}` not in `{}`",
                    r.true_label,
                    space_b.dataset()
                ),
            );
        }
        if !(0.0..=1.0).contains(&r.self_score) {
            push(
                r,
                ViolationKind::OutOfRange,
                format!("self_score {} outside [0, 1]", r.self_score),
            );
        }
        for (label, &p) in &r.foreign_scores {
            if label != BACKGROUND && !space_a.contains(label) {
                push(
                    r,
                    ViolationKind::UnknownForeignLabel,
                    format!("foreign label `{label}` not in `{}`", space_a.dataset()),
                );
            }
            if !(0.0..=1.0).contains(&p) {
                push(
                    r,
                    ViolationKind::OutOfRange,
                    format!("score {p} for `{label}` outside [0, 1]"),
                );
            }
        }
        match mode {
            ScoreMode::PixelProbability if require_normalized => {
                let sum: f64 = r.foreign_scores.values().sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    push(
                        r,
                        ViolationKind::NotNormalized,
                        format!("foreign scores sum to {sum}"),
                    );
                }
            }
            ScoreMode::PixelProbability => {}
            ScoreMode::Embedding1nn => {
                let ones = r.foreign_scores.values().filter(|&&p| p == 1.0).count();
                let zeros = r.foreign_scores.values().filter(|&&p| p == 0.0).count();
                if ones != 1 || ones + zeros != r.foreign_scores.len() {
                    push(
                        r,
                        ViolationKind::NotOneHot,
                        "foreign scores are not one-hot".into(),
                    );
                }
            }
        }
    }
    out
}
