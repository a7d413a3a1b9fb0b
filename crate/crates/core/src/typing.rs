//! Relation types from graph structure, score asymmetry, and taxonomy hints;
//! threshold calibration against a reference typing.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::discover::binarize;
use crate::error::{Error, Result};
use crate::eval::{pair_observations, type_accuracy};
use crate::model::{
    DirectionalScoreMatrix, LabelMatrix, RelationEdge, RelationGraph, RelationType,
};

struct Degrees<'g> {
    of_a: BTreeMap<&'g str, BTreeSet<&'g str>>,
    of_b: BTreeMap<&'g str, BTreeSet<&'g str>>,
}

impl<'g> Degrees<'g> {
    fn new(graph: &'g RelationGraph) -> Self {
        let mut of_a: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut of_b: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for e in graph.edges() {
            of_a.entry(&e.a).or_default().insert(&e.b);
            of_b.entry(&e.b).or_default().insert(&e.a);
        }
        Degrees { of_a, of_b }
    }

    fn deg_a(&self, a: &str) -> usize {
        self.of_a.get(a).map_or(0, BTreeSet::len)
    }

    fn deg_b(&self, b: &str) -> usize {
        self.of_b.get(b).map_or(0, BTreeSet::len)
    }
}

/// Types every edge from the degree structure of the graph, assuming labels
/// within one space are mutually exclusive.
///
/// Rules, in order:
/// 1. identity: neither endpoint has another edge;
/// 2. parent: `b` has no other edge and `a` has another neighbour that also
///    has no other edge (child symmetrically);
/// 3. overlap: both endpoints have other edges;
/// 4. otherwise the endpoint with several edges is the parent of the other,
///    and the edge is marked `relaxed`.
pub fn set_theory_types(graph: &RelationGraph) -> RelationGraph {
    let deg = Degrees::new(graph);
    let mut out = graph.clone();
    for e in out.edges_mut() {
        let (da, db) = (deg.deg_a(&e.a), deg.deg_b(&e.b));
        let exclusive_sibling_in_b = || {
            deg.of_a[e.a.as_str()]
                .iter()
                .any(|&bn| bn != e.b && deg.deg_b(bn) == 1)
        };
        let exclusive_sibling_in_a = || {
            deg.of_b[e.b.as_str()]
                .iter()
                .any(|&am| am != e.a && deg.deg_a(am) == 1)
        };
        let (kind, relaxed) = if da == 1 && db == 1 {
            (RelationType::Identity, false)
        } else if db == 1 && exclusive_sibling_in_b() {
            (RelationType::Parent, false)
        } else if da == 1 && exclusive_sibling_in_a() {
            (RelationType::Child, false)
        } else if da >= 2 && db >= 2 {
            (RelationType::Overlap, false)
        } else if da >= 2 {
            (RelationType::Parent, true)
        } else {
            (RelationType::Child, true)
        };
        e.kind = Some(kind);
        e.relaxed = relaxed;
    }
    out
}

/// Parent if S_ab / S_ba > t, child if S_ba / S_ab > t, identity otherwise.
/// A zero denominator with a positive numerator counts as an infinite ratio.
pub fn asymmetry_type(s_ab: f64, s_ba: f64, t: f64) -> Result<RelationType> {
    if s_ab == 0.0 && s_ba == 0.0 {
        return Err(Error::invalid("both directional scores are zero"));
    }
    let ratio = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
    Ok(if ratio(s_ab, s_ba) > t {
        RelationType::Parent
    } else if ratio(s_ba, s_ab) > t {
        RelationType::Child
    } else {
        RelationType::Identity
    })
}

fn directional_pair(
    e: &RelationEdge,
    s_ab: &DirectionalScoreMatrix,
    s_ba: &DirectionalScoreMatrix,
) -> Result<(f64, f64)> {
    let missing = |label: &str, m: &DirectionalScoreMatrix| Error::UnknownLabel {
        space: format!("S({}→{})", m.from_space(), m.to_space()),
        label: label.to_string(),
    };
    let x = s_ab
        .get(&e.a, &e.b)
        .ok_or_else(|| missing(&format!("{}/{}", e.a, e.b), s_ab))?;
    let y = s_ba
        .get(&e.b, &e.a)
        .ok_or_else(|| missing(&format!("{}/{}", e.b, e.a), s_ba))?;
    Ok((x, y))
}

fn type_edges_with(
    graph: &RelationGraph,
    s_ab: &DirectionalScoreMatrix,
    s_ba: &DirectionalScoreMatrix,
    threshold_for: impl Fn(&RelationEdge) -> f64 + Sync,
) -> Result<RelationGraph> {
    let edges: Vec<&RelationEdge> = graph.edges().collect();
    let kinds = edges
        .par_iter()
        .map(|e| {
            let (x, y) = directional_pair(e, s_ab, s_ba)?;
            asymmetry_type(x, y, threshold_for(e))
                .map_err(|err| Error::invalid(format!("edge ({}, {}): {err}", e.a, e.b)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = graph.clone();
    for (e, kind) in out.edges_mut().zip(kinds) {
        e.kind = Some(kind);
        e.relaxed = false;
    }
    Ok(out)
}

fn check_t(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 1.0) {
        return Err(Error::invalid(format!(
            "asymmetry threshold must be > 1, got {t}"
        )));
    }
    Ok(())
}

/// Types every edge by the ratio of its two directional scores. Never
/// produces overlap.
pub fn asymmetry_types(
    graph: &RelationGraph,
    s_ab: &DirectionalScoreMatrix,
    s_ba: &DirectionalScoreMatrix,
    t: f64,
) -> Result<RelationGraph> {
    check_t(t)?;
    type_edges_with(graph, s_ab, s_ba, |_| t)
}

fn taxonomy_kind(taxonomy: &RelationGraph, a: &str, b: &str) -> Option<RelationType> {
    taxonomy.get(a, b).and_then(|e| e.kind)
}

/// Multiplies R by `n` wherever the taxonomy relates the pair (identity,
/// parent, child or overlap).
pub fn combine_strengths(r: &LabelMatrix, taxonomy: &RelationGraph, n: f64) -> Result<LabelMatrix> {
    if !(n.is_finite() && n >= 1.0) {
        return Err(Error::invalid(format!(
            "boost factor must be >= 1, got {n}"
        )));
    }
    let mut out = r.clone();
    for e in taxonomy.edges() {
        let boosted = matches!(
            e.kind,
            Some(
                RelationType::Identity
                    | RelationType::Parent
                    | RelationType::Child
                    | RelationType::Overlap
            )
        );
        if boosted {
            let i = r.rows.require(&e.a)?;
            let j = r.cols.require(&e.b)?;
            out.values[(i, j)] *= n;
        }
    }
    Ok(out)
}

/// Asymmetry typing with a per-edge threshold: T·m where the taxonomy says
/// identity, T/m where it says parent or child, T elsewhere.
pub fn combine_types(
    graph: &RelationGraph,
    s_ab: &DirectionalScoreMatrix,
    s_ba: &DirectionalScoreMatrix,
    t: f64,
    taxonomy: &RelationGraph,
    m: f64,
) -> Result<RelationGraph> {
    check_t(t)?;
    if !(m.is_finite() && m >= 1.0) {
        return Err(Error::invalid(format!(
            "threshold factor must be >= 1, got {m}"
        )));
    }
    type_edges_with(graph, s_ab, s_ba, |e| {
        match taxonomy_kind(taxonomy, &e.a, &e.b) {
            Some(RelationType::Identity) => t * m,
            Some(RelationType::Parent | RelationType::Child) => t / m,
            _ => t,
        }
    })
}

/// Which parameter a calibration sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratedParameter {
    RelationThreshold,
    AsymmetryT,
}

/// How edges are typed while calibrating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TypingMethod {
    SetTheory,
    Asymmetry,
}

/// Everything needed to turn a candidate value into predicted types.
pub struct CalibrationInputs<'a> {
    pub link: &'a LabelMatrix,
    pub directional: Option<(&'a DirectionalScoreMatrix, &'a DirectionalScoreMatrix)>,
    pub relation_threshold: f64,
    pub asymmetry_t: f64,
    pub typing: TypingMethod,
}

impl CalibrationInputs<'_> {
    fn predict(&self, threshold: f64, t: f64) -> Result<RelationGraph> {
        let graph = binarize(self.link, threshold);
        match self.typing {
            TypingMethod::SetTheory => Ok(set_theory_types(&graph)),
            TypingMethod::Asymmetry => {
                let (s_ab, s_ba) = self.directional.ok_or_else(|| {
                    Error::invalid("asymmetry typing needs both directional matrices")
                })?;
                asymmetry_types(&graph, s_ab, s_ba, t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub best: f64,
    pub accuracy: f64,
    /// (candidate, macro accuracy) in ascending candidate order.
    pub evaluated: Vec<(f64, f64)>,
}

/// Evaluates every candidate and keeps the one with the highest score; the
/// smallest candidate wins ties.
pub fn calibrate_with(
    candidates: &[f64],
    score: impl Fn(f64) -> Result<f64>,
) -> Result<Calibration> {
    if candidates.is_empty() {
        return Err(Error::invalid("no calibration candidates"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut evaluated = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for c in sorted {
        let acc = score(c)?;
        evaluated.push((c, acc));
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((c, acc));
        }
    }
    let (best, accuracy) = best.expect("at least one candidate");
    Ok(Calibration {
        best,
        accuracy,
        evaluated,
    })
}

/// Picks the candidate value of `parameter` whose predicted types best match
/// `reference` in macro type accuracy over all label pairs.
pub fn calibrate(
    candidates: &[f64],
    parameter: CalibratedParameter,
    inputs: &CalibrationInputs<'_>,
    reference: &RelationGraph,
) -> Result<Calibration> {
    let rows = &inputs.link.rows;
    let cols = &inputs.link.cols;
    calibrate_with(candidates, |c| {
        let predicted = match parameter {
            CalibratedParameter::RelationThreshold => inputs.predict(c, inputs.asymmetry_t)?,
            CalibratedParameter::AsymmetryT => inputs.predict(inputs.relation_threshold, c)?,
        };
        let obs = pair_observations(rows, cols, &predicted, reference)?;
        Ok(type_accuracy(&obs).macro_average)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabelSpace;
    use ndarray::Array2;

    fn graph(edges: &[(&str, &str)]) -> RelationGraph {
        RelationGraph::from_edges(
            "A",
            "B",
            edges
                .iter()
                .map(|(a, b)| RelationEdge::untyped(*a, *b, 1.0)),
        )
        .unwrap()
    }

    fn kind(g: &RelationGraph, a: &str, b: &str) -> RelationType {
        g.get(a, b).unwrap().kind.unwrap()
    }

    #[test]
    fn isolated_edge_is_identity() {
        let t = set_theory_types(&graph(&[("a1", "b1")]));
        assert_eq!(kind(&t, "a1", "b1"), RelationType::Identity);
    }

    #[test]
    fn star_hub_is_parent() {
        let t = set_theory_types(&graph(&[("animal", "cat"), ("animal", "dog")]));
        assert_eq!(kind(&t, "animal", "cat"), RelationType::Parent);
        assert_eq!(kind(&t, "animal", "dog"), RelationType::Parent);
        let t = set_theory_types(&graph(&[("cat", "animal"), ("dog", "animal")]));
        assert_eq!(kind(&t, "cat", "animal"), RelationType::Child);
    }

    #[test]
    fn complete_bipartite_is_overlap() {
        let t = set_theory_types(&graph(&[
            ("a1", "b1"),
            ("a1", "b2"),
            ("a2", "b1"),
            ("a2", "b2"),
        ]));
        assert!(t
            .edges()
            .all(|e| e.kind == Some(RelationType::Overlap) && !e.relaxed));
    }

    #[test]
    fn undefined_edges_fall_back_to_relaxed_parent() {
        // a1 -> {b1, b2}, a2 -> b2: (a1, b1) has no exclusive sibling in B.
        let t = set_theory_types(&graph(&[("a1", "b1"), ("a1", "b2"), ("a2", "b2")]));
        let e = t.get("a1", "b1").unwrap();
        assert_eq!(e.kind, Some(RelationType::Parent));
        assert!(e.relaxed);
        assert_eq!(kind(&t, "a1", "b2"), RelationType::Overlap);
        let e = t.get("a2", "b2").unwrap();
        assert_eq!(e.kind, Some(RelationType::Child));
        assert!(e.relaxed);
    }

    #[test]
    fn asymmetry_examples() {
        assert_eq!(
            asymmetry_type(0.5, 0.5, 2.0).unwrap(),
            RelationType::Identity
        );
        assert_eq!(asymmetry_type(0.9, 0.3, 2.0).unwrap(), RelationType::Parent);
        assert_eq!(asymmetry_type(0.4, 0.0, 2.0).unwrap(), RelationType::Parent);
        assert_eq!(asymmetry_type(0.0, 0.4, 2.0).unwrap(), RelationType::Child);
        assert_eq!(asymmetry_type(0.3, 0.9, 2.0).unwrap(), RelationType::Child);
        assert!(asymmetry_type(0.0, 0.0, 2.0).is_err());
    }

    fn directional(
        from: &LabelSpace,
        to: &LabelSpace,
        values: Array2<f64>,
    ) -> DirectionalScoreMatrix {
        DirectionalScoreMatrix {
            support: vec![1; to.len()],
            scores: LabelMatrix::from_values(from.clone(), to.clone(), values).unwrap(),
            unsupported: vec![],
        }
    }

    fn single_pair(
        x: f64,
        y: f64,
    ) -> (
        RelationGraph,
        DirectionalScoreMatrix,
        DirectionalScoreMatrix,
    ) {
        let a = LabelSpace::new("A", ["a"]).unwrap();
        let b = LabelSpace::new("B", ["b"]).unwrap();
        (
            graph(&[("a", "b")]),
            directional(&a, &b, Array2::from_elem((1, 1), x)),
            directional(&b, &a, Array2::from_elem((1, 1), y)),
        )
    }

    #[test]
    fn asymmetry_types_requires_t_above_one() {
        let (g, ab, ba) = single_pair(0.9, 0.3);
        assert!(asymmetry_types(&g, &ab, &ba, 1.0).is_err());
        assert_eq!(
            kind(&asymmetry_types(&g, &ab, &ba, 2.0).unwrap(), "a", "b"),
            RelationType::Parent
        );
        let (g, ab, ba) = single_pair(0.0, 0.0);
        assert!(asymmetry_types(&g, &ab, &ba, 2.0).is_err());
    }

    fn taxonomy(kind: RelationType) -> RelationGraph {
        RelationGraph::from_edges("A", "B", [RelationEdge::typed("a", "b", 1.0, kind)]).unwrap()
    }

    #[test]
    fn combine_types_examples() {
        let (g, ab, ba) = single_pair(0.9, 0.3);
        let silent = RelationGraph::new("A", "B");
        assert_eq!(
            combine_types(&g, &ab, &ba, 2.0, &silent, 2.0).unwrap(),
            asymmetry_types(&g, &ab, &ba, 2.0).unwrap()
        );
        // ratio 3 < T' = 4
        let out = combine_types(&g, &ab, &ba, 2.0, &taxonomy(RelationType::Identity), 2.0).unwrap();
        assert_eq!(kind(&out, "a", "b"), RelationType::Identity);
        // ratio 1.5 > T' = 1
        let (g, ab, ba) = single_pair(0.6, 0.4);
        let out = combine_types(&g, &ab, &ba, 2.0, &taxonomy(RelationType::Parent), 2.0).unwrap();
        assert_eq!(kind(&out, "a", "b"), RelationType::Parent);
        assert!(combine_types(&g, &ab, &ba, 2.0, &silent, 0.5).is_err());
    }

    #[test]
    fn combine_strengths_examples() {
        let a = LabelSpace::new("A", ["a", "x"]).unwrap();
        let b = LabelSpace::new("B", ["b"]).unwrap();
        let r = LabelMatrix::from_values(a, b, ndarray::array![[0.3], [0.2]]).unwrap();
        assert_eq!(
            combine_strengths(&r, &RelationGraph::new("A", "B"), 2.0).unwrap(),
            r
        );
        let boosted = combine_strengths(&r, &taxonomy(RelationType::Identity), 2.0).unwrap();
        assert_eq!(boosted.get("a", "b"), Some(0.6));
        assert_eq!(boosted.get("x", "b"), Some(0.2));
        assert_eq!(
            combine_strengths(&r, &taxonomy(RelationType::Identity), 1.0).unwrap(),
            r
        );
        assert_eq!(
            combine_strengths(&r, &taxonomy(RelationType::None), 2.0).unwrap(),
            r
        );
        assert!(combine_strengths(&r, &taxonomy(RelationType::Identity), 0.5).is_err());
    }

    #[test]
    fn calibrate_with_tie_rules() {
        let c = calibrate_with(&[3.0], |_| Ok(0.1)).unwrap();
        assert_eq!(c.best, 3.0);
        let c = calibrate_with(&[4.0, 1.5, 2.0], |_| Ok(0.5)).unwrap();
        assert_eq!(c.best, 1.5);
        assert!(calibrate_with(&[], |_| Ok(0.0)).is_err());
    }

    #[test]
    fn calibrate_asymmetry_t_recovers_reference() {
        // Three pairs with ratios 1.8, 3 and 5: only 2 <= T < 3 types them
        // as identity, parent, parent.
        let a = LabelSpace::new("A", ["a1", "a2", "a3"]).unwrap();
        let b = LabelSpace::new("B", ["b1", "b2", "b3"]).unwrap();
        let mut ab = Array2::zeros((3, 3));
        let mut ba = Array2::zeros((3, 3));
        for (i, (x, y)) in [(0.9, 0.5), (0.9, 0.3), (1.0, 0.2)].into_iter().enumerate() {
            ab[(i, i)] = x;
            ba[(i, i)] = y;
        }
        let s_ab = directional(&a, &b, ab);
        let s_ba = directional(&b, &a, ba);
        let link = crate::discover::link_scores(&s_ab, &s_ba).unwrap();
        let reference = RelationGraph::from_edges(
            "A",
            "B",
            [
                RelationEdge::typed("a1", "b1", 1.0, RelationType::Identity),
                RelationEdge::typed("a2", "b2", 1.0, RelationType::Parent),
                RelationEdge::typed("a3", "b3", 1.0, RelationType::Parent),
            ],
        )
        .unwrap();
        let inputs = CalibrationInputs {
            link: &link,
            directional: Some((&s_ab, &s_ba)),
            relation_threshold: 0.25,
            asymmetry_t: 2.0,
            typing: TypingMethod::Asymmetry,
        };
        let c = calibrate(
            &[1.5, 2.0, 4.0],
            CalibratedParameter::AsymmetryT,
            &inputs,
            &reference,
        )
        .unwrap();
        assert_eq!(c.best, 2.0);
        assert_eq!(c.accuracy, 1.0);
        assert!(c
            .evaluated
            .iter()
            .filter(|(v, _)| *v != 2.0)
            .all(|(_, acc)| *acc < 1.0));
    }
}
