//! Downstream uses of discovered relations: link strength as a transfer-gain
//! predictor, fine-grained relabeling of parent-class instances, and
//! clustering of instance embeddings from two datasets.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    DirectionalScoreMatrix, EmbeddingRecord, InstanceScoreRecord, RelationGraph, RelationType,
};

/// Per-label transfer-learning gain (IoU points), one row of `gains.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferGainRecord {
    #[serde(rename = "label")]
    pub target_label: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkStrength {
    pub label: String,
    pub strength: f64,
    /// Number of source labels related to this label.
    pub related: usize,
    pub warning: Option<String>,
}

/// Mean S[a][b] over the source labels `a` related to `b`, optionally only
/// through edges of the listed types. 0 with a warning when nothing is
/// related.
pub fn link_strength(
    s_ab: &DirectionalScoreMatrix,
    relations: &RelationGraph,
    b: &str,
    types: Option<&[RelationType]>,
) -> Result<LinkStrength> {
    s_ab.scores.cols.require(b)?;
    let mut sum = 0.0;
    let mut related = 0usize;
    for e in relations.edges().filter(|e| e.b == b) {
        if let Some(filter) = types {
            if !e.kind.is_some_and(|k| filter.contains(&k)) {
                continue;
            }
        }
        let row = s_ab.scores.rows.require(&e.a)?;
        let col = s_ab.scores.cols.require(b)?;
        sum += s_ab.scores.values[(row, col)];
        related += 1;
    }
    Ok(if related == 0 {
        LinkStrength {
            label: b.to_string(),
            strength: 0.0,
            related,
            warning: Some(format!("`{b}` has no related source label")),
        }
    } else {
        LinkStrength {
            label: b.to_string(),
            strength: sum / related as f64,
            related,
            warning: None,
        }
    })
}

/// [`link_strength`] for every column label, in label order.
pub fn link_strengths(
    s_ab: &DirectionalScoreMatrix,
    relations: &RelationGraph,
    types: Option<&[RelationType]>,
) -> Result<Vec<LinkStrength>> {
    s_ab.scores
        .cols
        .labels()
        .iter()
        .map(|b| link_strength(s_ab, relations, b, types))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainGroup {
    pub labels: Vec<String>,
    /// `None` for an empty group.
    pub mean_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainGroups {
    pub low: GainGroup,
    pub mid: GainGroup,
    pub top: GainGroup,
}

/// Mean gain of the `n` weakest-linked labels, the `n` strongest, and the
/// rest. Labels are ordered by strength, ties by name.
pub fn group_gains(
    strengths: &BTreeMap<String, f64>,
    gains: &[TransferGainRecord],
    n: usize,
) -> Result<GainGroups> {
    if n == 0 || 2 * n > strengths.len() {
        return Err(Error::invalid(format!(
            "group size {n} needs 1 <= 2n <= {} labels",
            strengths.len()
        )));
    }
    let gain_of: BTreeMap<&str, f64> = gains
        .iter()
        .map(|g| (g.target_label.as_str(), g.gain))
        .collect();
    let mut ordered: Vec<(&String, f64)> = strengths.iter().map(|(l, &s)| (l, s)).collect();
    ordered.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.0.cmp(y.0)));
    let mut values = Vec::with_capacity(ordered.len());
    for (label, _) in &ordered {
        let g = gain_of
            .get(label.as_str())
            .ok_or_else(|| Error::invalid(format!("no gain for label `{label}`")))?;
        values.push(*g);
    }
    let group = |range: std::ops::Range<usize>| GainGroup {
        labels: ordered[range.clone()]
            .iter()
            .map(|(l, _)| (*l).clone())
            .collect(),
        mean_gain: (!range.is_empty())
            .then(|| values[range.clone()].iter().sum::<f64>() / range.len() as f64),
    };
    let len = ordered.len();
    Ok(GainGroups {
        low: group(0..n),
        mid: group(n..len - n),
        top: group(len - n..len),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedInstance {
    pub instance_id: String,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementEval {
    /// Row/column labels of `confusion` (reference labels first seen, then predicted).
    pub labels: Vec<String>,
    /// confusion[reference][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// Top-1 accuracy per reference label.
    pub per_class: BTreeMap<String, f64>,
    /// Instances without a reference label.
    pub unreferenced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refinement {
    pub children: Vec<String>,
    pub instances: Vec<RefinedInstance>,
    pub evaluation: Option<RefinementEval>,
}

/// Relabels instances of `parent` with the best-scoring of its child labels
/// in the other dataset. Records must be `parent` instances scored under the
/// other dataset's labels; others are ignored. Ties go to the smaller label.
pub fn refine_labels(
    parent: &str,
    records: &[InstanceScoreRecord],
    relations: &RelationGraph,
    reference: Option<&BTreeMap<String, String>>,
) -> Result<Refinement> {
    let children: Vec<String> = relations
        .edges()
        .filter(|e| e.a == parent && e.kind == Some(RelationType::Parent))
        .map(|e| e.b.clone())
        .collect();
    if children.is_empty() {
        return Err(Error::invalid(format!("`{parent}` has no child relations")));
    }
    let mut instances: Vec<RefinedInstance> = records
        .iter()
        .filter(|r| r.true_label == parent)
        .map(|r| {
            let (label, score) = children
                .iter()
                .map(|c| (c, r.foreign_scores.get(c).copied().unwrap_or(0.0)))
                .fold(None::<(&String, f64)>, |best, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                })
                .expect("children is non-empty");
            RefinedInstance {
                instance_id: r.instance_id.clone(),
                label: label.clone(),
                score,
            }
        })
        .collect();
    instances.sort_by(|x, y| x.instance_id.cmp(&y.instance_id));
    let evaluation = reference.map(|refs| evaluate_refinement(&instances, refs));
    Ok(Refinement {
        children,
        instances,
        evaluation,
    })
}

fn evaluate_refinement(
    instances: &[RefinedInstance],
    refs: &BTreeMap<String, String>,
) -> RefinementEval {
    let pairs: Vec<(&str, &str)> = instances
        .iter()
        .filter_map(|i| {
            refs.get(&i.instance_id)
                .map(|r| (r.as_str(), i.label.as_str()))
        })
        .collect();
    let labels: Vec<String> = pairs
        .iter()
        .flat_map(|(r, p)| [*r, *p])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let idx = |l: &str| {
        labels
            .iter()
            .position(|x| x == l)
            .expect("label collected above")
    };
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    for (r, p) in &pairs {
        confusion[idx(r)][idx(p)] += 1;
    }
    let correct = pairs.iter().filter(|(r, p)| r == p).count();
    let mut per_class = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        let total: usize = confusion[i].iter().sum();
        if total > 0 {
            per_class.insert(l.clone(), confusion[i][i] as f64 / total as f64);
        }
    }
    RefinementEval {
        accuracy: if pairs.is_empty() {
            0.0
        } else {
            correct as f64 / pairs.len() as f64
        },
        unreferenced: instances.len() - pairs.len(),
        labels,
        confusion,
        per_class,
    }
}

/// One embedding tagged with its dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedEmbedding {
    pub dataset: String,
    pub record: EmbeddingRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub dataset: String,
    pub instance_id: String,
    pub true_label: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub assignments: Vec<ClusterAssignment>,
    /// Per cluster: instance count per dataset.
    pub composition: Vec<BTreeMap<String, usize>>,
    pub iterations: usize,
}

const MAX_KMEANS_ITERATIONS: usize = 300;

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations, deterministic for a given
/// seed and input order. Cluster ids are numbered by first appearance.
pub fn cluster_embeddings(records: &[TaggedEmbedding], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > records.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be between 1 and the number of embeddings ({})",
            records.len()
        )));
    }
    let dim = records[0].record.vector.len();
    for r in records {
        if r.record.vector.len() != dim {
            return Err(Error::Dimension(format!(
                "embedding `{}` has dimension {}, expected {dim}",
                r.record.instance_id,
                r.record.vector.len()
            )));
        }
        if r.record.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "embedding `{}` is not finite",
                r.record.instance_id
            )));
        }
    }
    let points: Vec<&[f64]> = records.iter().map(|r| r.record.vector.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut centroids = vec![points[chosen[0]].to_vec()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .par_iter()
            .map(|p| nearest(p, &centroids).1)
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target && d > 0.0
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            (0..points.len())
                .find(|i| !chosen.contains(i))
                .expect("k <= n")
        };
        chosen.push(next);
        centroids.push(points[next].to_vec());
    }

    let mut assignment = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next: Vec<usize> = points
            .par_iter()
            .map(|p| nearest(p, &centroids).0)
            .collect();
        let changed = next != assignment;
        assignment = next;
        if !changed || iterations >= MAX_KMEANS_ITERATIONS {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }

    let mut renumber: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &assignment {
        let next = renumber.len();
        renumber.entry(c).or_insert(next);
    }
    let mut composition = vec![BTreeMap::new(); renumber.len()];
    let assignments = records
        .iter()
        .zip(&assignment)
        .map(|(r, c)| {
            let cluster = renumber[c];
            *composition[cluster].entry(r.dataset.clone()).or_insert(0) += 1;
            ClusterAssignment {
                dataset: r.dataset.clone(),
                instance_id: r.record.instance_id.clone(),
                true_label: r.record.true_label.clone(),
                cluster,
            }
        })
        .collect();
    Ok(Clustering {
        assignments,
        composition,
        iterations,
    })
}
