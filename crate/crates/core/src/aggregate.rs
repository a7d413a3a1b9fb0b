//! Directional score matrices from per-instance predictions.
//!
//! A directional matrix S_{a→b} holds, for every label `a` of the model's
//! dataset and every label `b` of the scored dataset, the mean probability
//! that easy instances of `b` receive label `a`. Records are sorted by
//! instance id before accumulation so that every cell is summed in the same
//! order no matter how many workers run.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    DirectionalScoreMatrix, EmbeddingRecord, InstanceScoreRecord, LabelMatrix, LabelSpace,
    PixelReduction, ScoreMode, BACKGROUND,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationRequest {
    pub mode: ScoreMode,
    pub easy_filter: bool,
    pub easy_threshold: f64,
}

impl AggregationRequest {
    pub fn new(mode: ScoreMode) -> Self {
        AggregationRequest {
            mode,
            easy_filter: true,
            easy_threshold: 0.5,
        }
    }

    /// Pixel probabilities: own score above the threshold. Embeddings: the
    /// own-dataset 1-NN prediction was correct.
    pub fn is_easy(&self, record: &InstanceScoreRecord) -> bool {
        if !self.easy_filter {
            return true;
        }
        match self.mode {
            ScoreMode::PixelProbability => record.self_score > self.easy_threshold,
            ScoreMode::Embedding1nn => record.self_score == 1.0,
        }
    }
}

/// Aggregates records of dataset B scored under A's label space into
/// S_{a→b}. Columns without easy instances are zero and listed in
/// `unsupported`.
pub fn aggregate_directional(
    records: &[InstanceScoreRecord],
    space_a: &LabelSpace,
    space_b: &LabelSpace,
    req: &AggregationRequest,
) -> Result<DirectionalScoreMatrix> {
    if records.is_empty() {
        return Err(Error::invalid("no instance records to aggregate"));
    }
    let mut by_column: Vec<Vec<&InstanceScoreRecord>> = vec![Vec::new(); space_b.len()];
    for r in records {
        if r.source_dataset != space_b.dataset() {
            return Err(Error::invalid(format!(
                "record `{}` comes from `{}`, expected `{}`",
                r.instance_id,
                r.source_dataset,
                space_b.dataset()
            )));
        }
        if let Some(label) = r
            .foreign_scores
            .keys()
            .find(|k| k.as_str() != BACKGROUND && !space_a.contains(k))
        {
            return Err(Error::invalid(format!(
                "record `{}` is scored over a different label space (unknown label `{label}` for `{}`)",
                r.instance_id,
                space_a.dataset()
            )));
        }
        let col = space_b.require(&r.true_label)?;
        if req.is_easy(r) {
            by_column[col].push(r);
        }
    }

    let columns: Vec<(Vec<f64>, usize)> = by_column
        .into_par_iter()
        .map(|mut recs| {
            recs.sort_by(|x, y| x.instance_id.cmp(&y.instance_id));
            let n = recs.len();
            let mut sums = vec![0.0; space_a.len()];
            for r in &recs {
                for (i, label) in space_a.labels().iter().enumerate() {
                    sums[i] += r.foreign_scores.get(label).copied().unwrap_or(0.0);
                }
            }
            if n > 0 {
                for s in &mut sums {
                    *s /= n as f64;
                }
            }
            (sums, n)
        })
        .collect();

    let mut values = Array2::zeros((space_a.len(), space_b.len()));
    let mut support = Vec::with_capacity(space_b.len());
    let mut unsupported = Vec::new();
    for (j, (col, n)) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            values[(i, j)] = v.clamp(0.0, 1.0);
        }
        if n == 0 {
            unsupported.push(space_b.labels()[j].clone());
        }
        support.push(n);
    }
    Ok(DirectionalScoreMatrix {
        scores: LabelMatrix::from_values(space_a.clone(), space_b.clone(), values)?,
        support,
        unsupported,
    })
}

fn l2_normalized(r: &EmbeddingRecord, dim: usize) -> Result<Vec<f64>> {
    if r.vector.len() != dim {
        return Err(Error::Dimension(format!(
            "embedding `{}` has dimension {}, expected {dim}",
            r.instance_id,
            r.vector.len()
        )));
    }
    if r.vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "embedding `{}` has a non-finite entry",
            r.instance_id
        )));
    }
    let norm = r.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid(format!(
            "embedding `{}` has zero norm",
            r.instance_id
        )));
    }
    Ok(r.vector.iter().map(|v| v / norm).collect())
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

struct Index<'a> {
    ids: Vec<&'a str>,
    labels: Vec<&'a str>,
    vectors: Vec<Vec<f64>>,
}

impl<'a> Index<'a> {
    /// References sorted by instance id, so the first minimum is the
    /// smallest id among equidistant neighbours.
    fn build(references: &'a [EmbeddingRecord], dim: usize) -> Result<Self> {
        let mut sorted: Vec<&EmbeddingRecord> = references.iter().collect();
        sorted.sort_by(|x, y| x.instance_id.cmp(&y.instance_id));
        let vectors = sorted
            .iter()
            .map(|r| l2_normalized(r, dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Index {
            ids: sorted.iter().map(|r| r.instance_id.as_str()).collect(),
            labels: sorted.iter().map(|r| r.true_label.as_str()).collect(),
            vectors,
        })
    }

    fn nearest(&self, query: &[f64], skip_id: Option<&str>) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.vectors.iter().enumerate() {
            if skip_id == Some(self.ids[i]) {
                continue;
            }
            let d = squared_distance(query, v);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// 1-NN classification of dataset-B embeddings against labelled dataset-A
/// references. Each output carries a one-hot score vector over A's labels
/// plus background; `self_score` is 1 (see [`nn_self_scores`] for the
/// leave-one-out own-dataset check).
pub fn nn_classify(
    queries: &[EmbeddingRecord],
    references: &[EmbeddingRecord],
    space_a: &LabelSpace,
    source_dataset: &str,
) -> Result<Vec<InstanceScoreRecord>> {
    let first = references
        .first()
        .ok_or_else(|| Error::invalid("no reference embeddings"))?;
    let dim = first.vector.len();
    for r in references {
        space_a.require(&r.true_label)?;
    }
    let index = Index::build(references, dim)?;
    queries
        .par_iter()
        .map(|q| {
            let v = l2_normalized(q, dim)?;
            let nn = index.nearest(&v, None).expect("references are non-empty");
            let mut foreign_scores: BTreeMap<String, f64> =
                space_a.labels().iter().map(|l| (l.clone(), 0.0)).collect();
            foreign_scores.insert(BACKGROUND.to_string(), 0.0);
            foreign_scores.insert(index.labels[nn].to_string(), 1.0);
            Ok(InstanceScoreRecord {
                instance_id: q.instance_id.clone(),
                source_dataset: source_dataset.to_string(),
                true_label: q.true_label.clone(),
                self_score: 1.0,
                foreign_scores,
            })
        })
        .collect()
}

/// Leave-one-out 1-NN within one dataset: 1 when the nearest other instance
/// shares the record's label, else 0. Keyed by instance id.
pub fn nn_self_scores(records: &[EmbeddingRecord]) -> Result<HashMap<String, f64>> {
    if records.len() < 2 {
        return Err(Error::invalid(
            "leave-one-out classification needs at least two embeddings",
        ));
    }
    let dim = records[0].vector.len();
    let index = Index::build(records, dim)?;
    records
        .par_iter()
        .map(|r| {
            let v = l2_normalized(r, dim)?;
            let nn = index
                .nearest(&v, Some(&r.instance_id))
                .ok_or_else(|| Error::invalid("all embeddings share one instance id"))?;
            let hit = if index.labels[nn] == r.true_label {
                1.0
            } else {
                0.0
            };
            Ok((r.instance_id.clone(), hit))
        })
        .collect()
}

fn check_pixels(pixel_scores: &ArrayView2<f64>) -> Result<()> {
    if pixel_scores.nrows() == 0 {
        return Err(Error::invalid("pixel score matrix has no rows"));
    }
    Ok(())
}

/// Column-wise maximum over pixels: turns a segmentation output into a
/// per-image classification score.
pub fn max_over_pixels(pixel_scores: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_pixels(&pixel_scores)?;
    Ok(pixel_scores
        .axis_iter(Axis(1))
        .map(|col| col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Column-wise mean over pixels.
pub fn mean_over_pixels(pixel_scores: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_pixels(&pixel_scores)?;
    let n = pixel_scores.nrows() as f64;
    Ok(pixel_scores
        .axis_iter(Axis(1))
        .map(|col| col.iter().sum::<f64>() / n)
        .collect())
}

pub fn reduce_pixels(pixel_scores: ArrayView2<f64>, reduction: PixelReduction) -> Result<Vec<f64>> {
    match reduction {
        PixelReduction::Mean => mean_over_pixels(pixel_scores),
        PixelReduction::Max => max_over_pixels(pixel_scores),
    }
}

/// One line of `pixel_scores.jsonl`; columns follow a separate label-order
/// header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelScoreRecord {
    pub instance_id: String,
    pub true_label: String,
    pub rows: Vec<Vec<f64>>,
}

/// Column order of a pixel score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOrder {
    pub labels: Vec<String>,
}

impl PixelScoreRecord {
    pub fn reduce(&self, width: usize, reduction: PixelReduction) -> Result<Vec<f64>> {
        if let Some(bad) = self.rows.iter().find(|r| r.len() != width) {
            return Err(Error::Dimension(format!(
                "instance `{}` has a pixel row of width {}, header has {width} labels",
                self.instance_id,
                bad.len()
            )));
        }
        let flat: Vec<f64> = self.rows.iter().flatten().copied().collect();
        let view = ArrayView2::from_shape((self.rows.len(), width), &flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        reduce_pixels(view, reduction)
    }
}

/// Own-dataset scores from pixel predictions of the instance's own model:
/// the reduced score at the instance's true label.
pub fn self_scores_from_pixels(
    records: &[PixelScoreRecord],
    order: &LabelOrder,
    reduction: PixelReduction,
) -> Result<HashMap<String, f64>> {
    records
        .iter()
        .map(|r| {
            let col = order
                .labels
                .iter()
                .position(|l| *l == r.true_label)
                .ok_or_else(|| {
                    Error::invalid(format!("label `{}` missing from header", r.true_label))
                })?;
            Ok((
                r.instance_id.clone(),
                r.reduce(order.labels.len(), reduction)?[col],
            ))
        })
        .collect()
}

/// Converts pixel predictions of a foreign model into instance records.
/// Missing self scores default to 1 (every instance is treated as easy).
pub fn pixel_records_to_scores(
    records: &[PixelScoreRecord],
    order: &LabelOrder,
    source_dataset: &str,
    reduction: PixelReduction,
    self_scores: Option<&HashMap<String, f64>>,
) -> Result<Vec<InstanceScoreRecord>> {
    records
        .par_iter()
        .map(|r| {
            let scores = r.reduce(order.labels.len(), reduction)?;
            let self_score = match self_scores {
                Some(map) => *map.get(&r.instance_id).ok_or_else(|| {
                    Error::invalid(format!("no self score for instance `{}`", r.instance_id))
                })?,
                None => 1.0,
            };
            Ok(InstanceScoreRecord {
                instance_id: r.instance_id.clone(),
                source_dataset: source_dataset.to_string(),
                true_label: r.true_label.clone(),
                self_score,
                foreign_scores: order.labels.iter().cloned().zip(scores).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn spaces() -> (LabelSpace, LabelSpace) {
        (
            LabelSpace::new("A", ["a1", "a2"]).unwrap(),
            LabelSpace::new("B", ["b1", "b2"]).unwrap(),
        )
    }

    fn rec(id: &str, label: &str, self_score: f64, scores: &[(&str, f64)]) -> InstanceScoreRecord {
        InstanceScoreRecord {
            instance_id: id.into(),
            source_dataset: "B".into(),
            true_label: label.into(),
            self_score,
            foreign_scores: scores.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn emb(id: &str, label: &str, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            instance_id: id.into(),
            true_label: label.into(),
            vector: v.to_vec(),
        }
    }

    fn pixel_req() -> AggregationRequest {
        AggregationRequest::new(ScoreMode::PixelProbability)
    }

    #[test]
    fn single_easy_instance() {
        let (a, b) = spaces();
        let m = aggregate_directional(&[rec("i", "b1", 0.9, &[("a1", 1.0)])], &a, &b, &pixel_req())
            .unwrap();
        assert_eq!(m.get("a1", "b1"), Some(1.0));
        assert_eq!(m.support_of("b1"), Some(1));
        assert_eq!(m.unsupported, vec!["b2".to_string()]);
        assert_eq!(m.get("a1", "b2"), Some(0.0));
    }

    #[test]
    fn mean_of_two_instances() {
        let (a, b) = spaces();
        let recs = [
            rec("i1", "b1", 0.9, &[("a1", 0.2), ("a2", 0.8)]),
            rec("i2", "b1", 0.9, &[("a1", 0.6), ("a2", 0.4)]),
        ];
        let m = aggregate_directional(&recs, &a, &b, &pixel_req()).unwrap();
        // (0.2 + 0.6) / 2
        assert_abs_diff_eq!(m.get("a1", "b1").unwrap(), 0.4, epsilon = 1e-12);
        assert_eq!(m.support_of("b1"), Some(2));
    }

    #[test]
    fn hard_instances_are_excluded() {
        let (a, b) = spaces();
        let recs = [
            rec("easy", "b1", 0.9, &[("a1", 1.0)]),
            rec("hard", "b1", 0.4, &[("a2", 1.0)]),
        ];
        let m = aggregate_directional(&recs, &a, &b, &pixel_req()).unwrap();
        assert_eq!(m.support_of("b1"), Some(1));
        assert_eq!(m.get("a2", "b1"), Some(0.0));
        let all = AggregationRequest {
            easy_filter: false,
            ..pixel_req()
        };
        let m = aggregate_directional(&recs, &a, &b, &all).unwrap();
        assert_eq!(m.support_of("b1"), Some(2));
        assert_eq!(m.get("a2", "b1"), Some(0.5));
    }

    #[test]
    fn embedding_mode_easy_rule_is_exact_one() {
        let req = AggregationRequest::new(ScoreMode::Embedding1nn);
        assert!(req.is_easy(&rec("i", "b1", 1.0, &[])));
        assert!(!req.is_easy(&rec("i", "b1", 0.0, &[])));
        assert!(!req.is_easy(&rec("i", "b1", 0.99, &[])));
    }

    #[test]
    fn aggregation_errors() {
        let (a, b) = spaces();
        assert!(aggregate_directional(&[], &a, &b, &pixel_req()).is_err());
        let foreign = rec("i", "b1", 0.9, &[("zebra", 1.0)]);
        assert!(aggregate_directional(&[foreign], &a, &b, &pixel_req()).is_err());
        let mut other = rec("i", "b1", 0.9, &[("a1", 1.0)]);
        other.source_dataset = "C".into();
        assert!(aggregate_directional(&[other], &a, &b, &pixel_req()).is_err());
    }

    #[test]
    fn nn_identical_vector() {
        let a = LabelSpace::new("A", ["a1", "a2"]).unwrap();
        let refs = [emb("r1", "a1", &[0.3, 0.4]), emb("r2", "a2", &[1.0, -1.0])];
        let out = nn_classify(&[emb("q", "b", &[0.3, 0.4])], &refs, &a, "B").unwrap();
        assert_eq!(out[0].foreign_scores["a1"], 1.0);
        assert_eq!(out[0].foreign_scores["a2"], 0.0);
        assert_eq!(out[0].foreign_scores[BACKGROUND], 0.0);
    }

    #[test]
    fn nn_hand_computed_distances() {
        // query normalized ≈ (0.1104, 0.9939); squared distance to (0,1) ≈ 0.0122,
        // to (1,0) ≈ 1.7792.
        let a = LabelSpace::new("A", ["a1", "a2"]).unwrap();
        let refs = [emb("r1", "a1", &[0.0, 1.0]), emb("r2", "a2", &[1.0, 0.0])];
        let out = nn_classify(&[emb("q", "b", &[0.1, 0.9])], &refs, &a, "B").unwrap();
        assert_eq!(out[0].foreign_scores["a1"], 1.0);
    }

    #[test]
    fn nn_ties_go_to_smallest_reference_id() {
        let a = LabelSpace::new("A", ["a1", "a2"]).unwrap();
        let refs = [emb("i2", "a2", &[1.0, 0.0]), emb("i1", "a1", &[0.0, 1.0])];
        let out = nn_classify(&[emb("q", "b", &[1.0, 1.0])], &refs, &a, "B").unwrap();
        assert_eq!(out[0].foreign_scores["a1"], 1.0);
    }

    #[test]
    fn nn_dimension_mismatch() {
        let a = LabelSpace::new("A", ["a1"]).unwrap();
        let refs = [emb("r", "a1", &[1.0, 0.0])];
        assert!(matches!(
            nn_classify(&[emb("q", "b", &[1.0, 0.0, 0.0])], &refs, &a, "B"),
            Err(Error::Dimension(_))
        ));
        assert!(nn_classify(&[], &[], &a, "B").is_err());
    }

    #[test]
    fn leave_one_out_self_scores() {
        let recs = [
            emb("x1", "b1", &[1.0, 0.0]),
            emb("x2", "b1", &[0.9, 0.1]),
            emb("y1", "b2", &[0.0, 1.0]),
            emb("y2", "b2", &[0.5, 0.5]),
        ];
        let s = nn_self_scores(&recs).unwrap();
        assert_eq!(s["y1"], 1.0);
        assert_eq!(s["y2"], 0.0);
        assert_eq!(s["x1"], 1.0);
    }

    #[test]
    fn max_over_pixels_examples() {
        assert_eq!(
            max_over_pixels(array![[0.3, 0.7]].view()).unwrap(),
            vec![0.3, 0.7]
        );
        assert_eq!(
            max_over_pixels(array![[0.1, 0.9], [0.8, 0.2]].view()).unwrap(),
            vec![0.8, 0.9]
        );
        assert_eq!(
            max_over_pixels(array![[0.0, 0.0], [0.0, 0.0]].view()).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(max_over_pixels(Array2::<f64>::zeros((0, 3)).view()).is_err());
    }

    #[test]
    fn mean_over_pixels_examples() {
        assert_eq!(
            mean_over_pixels(array![[0.3, 0.7]].view()).unwrap(),
            vec![0.3, 0.7]
        );
        let m = mean_over_pixels(array![[0.2, 0.8], [0.6, 0.4]].view()).unwrap();
        assert_abs_diff_eq!(m[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], 0.6, epsilon = 1e-12);
        let c = mean_over_pixels(array![[0.25, 0.75], [0.25, 0.75], [0.25, 0.75]].view()).unwrap();
        assert_eq!(c, vec![0.25, 0.75]);
        assert!(mean_over_pixels(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn pixel_records_convert() {
        let order = LabelOrder {
            labels: vec!["a1".into(), "a2".into(), BACKGROUND.into()],
        };
        let px = [PixelScoreRecord {
            instance_id: "i".into(),
            true_label: "b1".into(),
            rows: vec![vec![0.1, 0.8, 0.1], vec![0.5, 0.3, 0.2]],
        }];
        let recs = pixel_records_to_scores(&px, &order, "B", PixelReduction::Max, None).unwrap();
        assert_eq!(recs[0].foreign_scores["a1"], 0.5);
        assert_eq!(recs[0].foreign_scores["a2"], 0.8);
        assert_eq!(recs[0].self_score, 1.0);
        let ragged = [PixelScoreRecord {
            rows: vec![vec![0.1, 0.9]],
            ..px[0].clone()
        }];
        assert!(pixel_records_to_scores(&ragged, &order, "B", PixelReduction::Mean, None).is_err());
    }
}
