//! Ground-truth relations from relabel counts against an intermediate
//! (unified) label space, manual overrides, and composition of two
//! dataset-to-intermediate relation sets into direct relations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RelationEdge, RelationGraph, RelationType};
use crate::typing::set_theory_types;

/// Pixel counts of one original-label instance after relabeling into the
/// intermediate label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelRecord {
    pub instance_id: String,
    pub original_label: String,
    pub pixel_counts: BTreeMap<String, u64>,
    pub total_pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub original: String,
    pub intermediate: String,
    /// Instances of `original` relabeled to `intermediate`.
    pub count: u64,
}

/// Counts, per (original, intermediate) label pair, the instances with more
/// than half of their pixels relabeled to the intermediate label. Pairs with
/// a zero count are omitted; output is sorted by pair.
pub fn derive_candidates(records: &[RelabelRecord]) -> Result<Vec<CandidatePair>> {
    let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for r in records {
        if r.total_pixels == 0 {
            return Err(Error::invalid(format!(
                "instance `{}` has no pixels",
                r.instance_id
            )));
        }
        let sum: u64 = r.pixel_counts.values().sum();
        if sum > r.total_pixels {
            return Err(Error::invalid(format!(
                "instance `{}` has {sum} relabeled pixels but only {} in total",
                r.instance_id, r.total_pixels
            )));
        }
        for (m, &c) in &r.pixel_counts {
            if 2 * c > r.total_pixels {
                *counts.entry((&r.original_label, m)).or_default() += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|((o, m), count)| CandidatePair {
            original: o.to_string(),
            intermediate: m.to_string(),
            count,
        })
        .collect())
}

/// Candidate pairs as a graph (strength = count) typed by the set-theory
/// rules.
pub fn type_candidates(
    space: &str,
    intermediate: &str,
    candidates: &[CandidatePair],
) -> Result<RelationGraph> {
    let graph = RelationGraph::from_edges(
        space,
        intermediate,
        candidates
            .iter()
            .map(|c| RelationEdge::untyped(&c.original, &c.intermediate, c.count as f64)),
    )?;
    Ok(set_theory_types(&graph))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum OverrideAction {
    Remove,
    SetType {
        #[serde(rename = "type")]
        kind: RelationType,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub a: String,
    pub m: String,
    #[serde(flatten)]
    pub action: OverrideAction,
    #[serde(default)]
    pub justification: String,
}

/// Contents of `overrides.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverrideList {
    pub overrides: Vec<Override>,
}

/// Applies removals and explicit types. Every override must name an existing
/// pair.
pub fn apply_overrides(
    candidates: &RelationGraph,
    overrides: &OverrideList,
) -> Result<RelationGraph> {
    for o in &overrides.overrides {
        if !candidates.contains(&o.a, &o.m) {
            return Err(Error::invalid(format!(
                "override targets ({}, {}), which is not a candidate pair",
                o.a, o.m
            )));
        }
    }
    let mut kept = Vec::new();
    for e in candidates.edges() {
        let mut e = e.clone();
        let mut removed = false;
        for o in overrides
            .overrides
            .iter()
            .filter(|o| o.a == e.a && o.m == e.b)
        {
            match o.action {
                OverrideAction::Remove => removed = true,
                OverrideAction::SetType { kind } => {
                    e.kind = Some(kind);
                    e.relaxed = false;
                }
            }
        }
        if !removed {
            kept.push(e);
        }
    }
    RelationGraph::from_edges(candidates.space_a.clone(), candidates.space_b.clone(), kept)
}

/// Chains the relation a→m with m→b: identity∘identity is identity, chains
/// of child and identity legs are child (parent likewise), and a part-of leg
/// makes the result part-of. `None` for every other combination.
pub fn chain(a_to_m: RelationType, m_to_b: RelationType) -> Option<RelationType> {
    use RelationType::*;
    if a_to_m == PartOf || m_to_b == PartOf {
        return Some(PartOf);
    }
    match (a_to_m, m_to_b) {
        (Identity, Identity) => Some(Identity),
        (Child, Child) | (Identity, Child) | (Child, Identity) => Some(Child),
        (Parent, Parent) | (Identity, Parent) | (Parent, Identity) => Some(Parent),
        _ => Option::None,
    }
}

/// Type of `a` relative to `b` through one intermediate label `m`, given the
/// stored types of (a, m) and (b, m).
pub fn compose_legs(a_to_m: RelationType, b_to_m: RelationType) -> Option<RelationType> {
    chain(a_to_m, b_to_m.mirror())
}

/// One path a - m - b behind a composed pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Leg {
    pub m: String,
    pub a_type: RelationType,
    pub b_type: RelationType,
}

/// A pair the composition rules leave undecided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReviewItem {
    pub a: String,
    pub b: String,
    pub via: Vec<Leg>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    /// Decided pairs; strength is the number of shared intermediate labels.
    pub relations: RelationGraph,
    pub needs_review: Vec<ReviewItem>,
}

/// Direct A ↔ B relations through the intermediate space. A pair is typed
/// when every shared intermediate label composes to the same type and goes
/// to review otherwise.
pub fn compose(rel_am: &RelationGraph, rel_bm: &RelationGraph) -> Result<Composition> {
    let related = |g: &RelationGraph| -> Result<BTreeMap<String, Vec<(String, RelationType)>>> {
        let mut by_m: BTreeMap<String, Vec<(String, RelationType)>> = BTreeMap::new();
        for e in g.edges() {
            let kind = e
                .kind
                .ok_or_else(|| Error::invalid(format!("edge ({}, {}) is untyped", e.a, e.b)))?;
            if kind.is_related() {
                by_m.entry(e.b.clone())
                    .or_default()
                    .push((e.a.clone(), kind));
            }
        }
        Ok(by_m)
    };
    let am = related(rel_am)?;
    let bm = related(rel_bm)?;

    let mut legs: BTreeMap<(String, String), Vec<Leg>> = BTreeMap::new();
    for (m, a_side) in &am {
        let Some(b_side) = bm.get(m) else { continue };
        for (a, a_type) in a_side {
            for (b, b_type) in b_side {
                legs.entry((a.clone(), b.clone())).or_default().push(Leg {
                    m: m.clone(),
                    a_type: *a_type,
                    b_type: *b_type,
                });
            }
        }
    }

    let mut relations = RelationGraph::new(rel_am.space_a.clone(), rel_bm.space_a.clone());
    let mut needs_review = Vec::new();
    for ((a, b), via) in legs {
        let kinds: Vec<Option<RelationType>> = via
            .iter()
            .map(|l| compose_legs(l.a_type, l.b_type))
            .collect();
        match kinds[0] {
            Some(k) if kinds.iter().all(|&x| x == Some(k)) => {
                relations.insert(RelationEdge::typed(a, b, via.len() as f64, k))?;
            }
            _ => needs_review.push(ReviewItem { a, b, via }),
        }
    }
    Ok(Composition {
        relations,
        needs_review,
    })
}
