//! Link scores, thresholding and pair ranking.

use crate::error::{Error, Result};
use crate::model::{DirectionalScoreMatrix, LabelMatrix, RelationEdge, RelationGraph};

/// R[a][b] = (S_ab[a][b] + S_ba[b][a]) / 2.
///
/// `s_ab` has A's labels as rows and B's as columns; `s_ba` the reverse.
pub fn link_scores(
    s_ab: &DirectionalScoreMatrix,
    s_ba: &DirectionalScoreMatrix,
) -> Result<LabelMatrix> {
    let ab = &s_ab.scores;
    let ba = &s_ba.scores;
    if ab.rows != ba.cols || ab.cols != ba.rows {
        return Err(Error::Dimension(format!(
            "S({}→{}) is {:?} and S({}→{}) is {:?}; expected opposite directions over the same labels",
            s_ab.from_space(),
            s_ab.to_space(),
            ab.values.dim(),
            s_ba.from_space(),
            s_ba.to_space(),
            ba.values.dim(),
        )));
    }
    let values = (&ab.values + &ba.values.t()) / 2.0;
    LabelMatrix::from_values(ab.rows.clone(), ab.cols.clone(), values)
}

/// Keeps the pairs with R strictly above `threshold`, as untyped edges.
/// Negative or non-finite cells never become edges.
pub fn binarize(r: &LabelMatrix, threshold: f64) -> RelationGraph {
    let mut g = RelationGraph::new(r.rows.dataset(), r.cols.dataset());
    for (a, b, v) in r.cells() {
        if v > threshold && v >= 0.0 && v.is_finite() {
            g.insert(RelationEdge::untyped(a, b, v))
                .expect("matrix cells are unique");
        }
    }
    g
}

/// A scored label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPair {
    pub a: String,
    pub b: String,
    pub strength: f64,
}

/// Descending strength; equal strengths in (a, b) lexicographic order.
pub fn rank_pairs(r: &LabelMatrix) -> Vec<RankedPair> {
    let mut pairs: Vec<RankedPair> = r
        .cells()
        .map(|(a, b, v)| RankedPair {
            a: a.to_string(),
            b: b.to_string(),
            strength: v,
        })
        .collect();
    sort_ranked(&mut pairs);
    pairs
}

pub(crate) fn sort_ranked(pairs: &mut [RankedPair]) {
    pairs.sort_by(|x, y| {
        y.strength
            .total_cmp(&x.strength)
            .then_with(|| x.a.cmp(&y.a))
            .then_with(|| x.b.cmp(&y.b))
    });
}

/// Ranking of arbitrary strength triples, as [`rank_pairs`].
pub fn rank_graph(graph: &RelationGraph) -> Vec<RankedPair> {
    let mut pairs: Vec<RankedPair> = graph
        .edges()
        .map(|e| RankedPair {
            a: e.a.clone(),
            b: e.b.clone(),
            strength: e.strength,
        })
        .collect();
    sort_ranked(&mut pairs);
    pairs
}
