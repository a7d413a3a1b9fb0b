//! Precision-recall / average precision over ranked label pairs, and
//! per-type accuracy with confusion matrices.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::discover::RankedPair;
use crate::error::{Error, Result};
use crate::model::{LabelSpace, RelationGraph, RelationType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Strength of the group of pairs admitted at this point.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Step-wise area: mean over positives of the precision at which each
    /// positive is admitted.
    pub average_precision: f64,
    pub positives: usize,
}

/// PR curve over a ranking of all label pairs. Pairs sharing a strength are
/// admitted together, so the result does not depend on their order.
pub fn pr_curve(ranked: &[RankedPair], gt: &BTreeSet<(String, String)>) -> Result<PrCurve> {
    if gt.is_empty() {
        return Err(Error::invalid(
            "ground truth has no positive pairs; recall is undefined",
        ));
    }
    let mut seen = BTreeSet::new();
    for (i, p) in ranked.iter().enumerate() {
        if !p.strength.is_finite() {
            return Err(Error::invalid(format!(
                "pair ({}, {}) has non-finite strength",
                p.a, p.b
            )));
        }
        if !seen.insert((p.a.as_str(), p.b.as_str())) {
            return Err(Error::invalid(format!(
                "pair ({}, {}) ranked twice",
                p.a, p.b
            )));
        }
        if i > 0 && ranked[i - 1].strength < p.strength {
            return Err(Error::invalid(
                "ranking is not in descending strength order",
            ));
        }
    }
    if let Some((a, b)) = gt
        .iter()
        .find(|(a, b)| !seen.contains(&(a.as_str(), b.as_str())))
    {
        return Err(Error::invalid(format!(
            "ground-truth pair ({a}, {b}) is not among the ranked label pairs"
        )));
    }

    let total = gt.len() as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    for group in ranked.chunk_by(|x, y| x.strength == y.strength) {
        let hits = group
            .iter()
            .filter(|p| gt.contains(&(p.a.clone(), p.b.clone())))
            .count();
        tp += hits;
        fp += group.len() - hits;
        let precision = tp as f64 / (tp + fp) as f64;
        area += hits as f64 * precision;
        points.push(PrPoint {
            recall: tp as f64 / total,
            precision,
            strength: group[0].strength,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: area / total,
        positives: gt.len(),
    })
}

/// Related pairs of a ground-truth graph, checked against the label spaces.
pub fn positive_pairs(
    gt: &RelationGraph,
    space_a: &LabelSpace,
    space_b: &LabelSpace,
) -> Result<BTreeSet<(String, String)>> {
    gt.check_endpoints(space_a, space_b)?;
    Ok(gt.related_pairs())
}

/// (ground-truth type, predicted type) for every pair in A × B, in label
/// order. Pairs absent from a graph are `none`.
pub fn pair_observations(
    space_a: &LabelSpace,
    space_b: &LabelSpace,
    pred: &RelationGraph,
    gt: &RelationGraph,
) -> Result<Vec<(RelationType, RelationType)>> {
    pred.check_endpoints(space_a, space_b)?;
    gt.check_endpoints(space_a, space_b)?;
    let kind_of = |g: &RelationGraph, a: &str, b: &str, what: &str| -> Result<RelationType> {
        match g.get(a, b) {
            None => Ok(RelationType::None),
            Some(e) => e
                .kind
                .ok_or_else(|| Error::invalid(format!("{what} edge ({a}, {b}) is untyped"))),
        }
    };
    let mut out = Vec::with_capacity(space_a.len() * space_b.len());
    for a in space_a.labels() {
        for b in space_b.labels() {
            out.push((
                kind_of(gt, a, b, "ground-truth")?,
                kind_of(pred, a, b, "predicted")?,
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeAccuracy {
    /// Fraction of pairs of each ground-truth type predicted as that type.
    pub per_type: BTreeMap<RelationType, f64>,
    pub support: BTreeMap<RelationType, usize>,
    /// Unweighted mean of `per_type` over the types present in ground truth.
    pub macro_average: f64,
}

/// Per-ground-truth-type recall and its unweighted mean.
pub fn type_accuracy(observations: &[(RelationType, RelationType)]) -> TypeAccuracy {
    let mut support: BTreeMap<RelationType, usize> = BTreeMap::new();
    let mut correct: BTreeMap<RelationType, usize> = BTreeMap::new();
    for &(gt, pred) in observations {
        *support.entry(gt).or_default() += 1;
        if gt == pred {
            *correct.entry(gt).or_default() += 1;
        }
    }
    let per_type: BTreeMap<RelationType, f64> = support
        .iter()
        .map(|(t, &n)| (*t, correct.get(t).copied().unwrap_or(0) as f64 / n as f64))
        .collect();
    let macro_average = if per_type.is_empty() {
        0.0
    } else {
        per_type.values().sum::<f64>() / per_type.len() as f64
    };
    TypeAccuracy {
        per_type,
        support,
        macro_average,
    }
}

/// Counts indexed by ground-truth type (rows) and predicted type (columns),
/// both in [`RelationType::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 6]; 6],
}

fn type_index(t: RelationType) -> usize {
    RelationType::ALL
        .iter()
        .position(|&x| x == t)
        .expect("all types listed")
}

impl ConfusionMatrix {
    pub fn get(&self, gt: RelationType, pred: RelationType) -> usize {
        self.counts[type_index(gt)][type_index(pred)]
    }

    pub fn row_sum(&self, gt: RelationType) -> usize {
        self.counts[type_index(gt)].iter().sum()
    }

    /// (gt, pred, count) for every cell.
    pub fn cells(&self) -> impl Iterator<Item = (RelationType, RelationType, usize)> + '_ {
        RelationType::ALL.into_iter().flat_map(move |gt| {
            RelationType::ALL
                .into_iter()
                .map(move |pred| (gt, pred, self.get(gt, pred)))
        })
    }
}

pub fn confusion_matrix(observations: &[(RelationType, RelationType)]) -> ConfusionMatrix {
    let mut counts = [[0usize; 6]; 6];
    for &(gt, pred) in observations {
        counts[type_index(gt)][type_index(pred)] += 1;
    }
    ConfusionMatrix { counts }
}
