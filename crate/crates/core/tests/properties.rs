use std::collections::{BTreeMap, BTreeSet};

use labelrel::aggregate::{aggregate_directional, AggregationRequest};
use labelrel::apps::{group_gains, link_strength, refine_labels, TransferGainRecord};
use labelrel::discover::{binarize, link_scores, rank_pairs, RankedPair};
use labelrel::eval::{confusion_matrix, pr_curve, type_accuracy};
use labelrel::groundtruth::{compose, derive_candidates, RelabelRecord};
use labelrel::taxonomy::{TaxonomyFile, TaxonomyGraph};
use labelrel::typing::{asymmetry_types, set_theory_types};
use labelrel::{
    DirectionalScoreMatrix, InstanceScoreRecord, LabelMatrix, LabelSpace, RelationEdge,
    RelationGraph, RelationType, ScoreMode, BACKGROUND,
};
use ndarray::Array2;
use proptest::prelude::*;

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn space(name: &str, prefix: &str, n: usize) -> LabelSpace {
    LabelSpace::new(name, labels(prefix, n)).unwrap()
}

fn untyped_graph(na: usize, nb: usize, cells: &[bool]) -> RelationGraph {
    let mut g = RelationGraph::new("A", "B");
    for i in 0..na {
        for j in 0..nb {
            if cells[i * nb + j] {
                g.insert(RelationEdge::untyped(format!("a{i}"), format!("b{j}"), 1.0))
                    .unwrap();
            }
        }
    }
    g
}

fn directional(from: &LabelSpace, to: &LabelSpace, values: &[f64]) -> DirectionalScoreMatrix {
    let values = Array2::from_shape_vec((from.len(), to.len()), values.to_vec()).unwrap();
    DirectionalScoreMatrix {
        scores: LabelMatrix::from_values(from.clone(), to.clone(), values).unwrap(),
        support: vec![1; to.len()],
        unsupported: vec![],
    }
}

fn typed_graph() -> impl Strategy<Value = RelationGraph> {
    (1usize..6, 1usize..6).prop_flat_map(|(na, nb)| {
        prop::collection::vec(prop::option::of((0usize..6, 0.0f64..3.0)), na * nb).prop_map(
            move |cells| {
                let mut g = RelationGraph::new("A", "B");
                for (idx, cell) in cells.iter().enumerate() {
                    if let Some((t, s)) = cell {
                        let e = RelationEdge::typed(
                            format!("a{}", idx / nb),
                            format!("b{}", idx % nb),
                            *s,
                            RelationType::ALL[*t],
                        );
                        g.insert(e).unwrap();
                    }
                }
                g
            },
        )
    })
}

proptest! {
    #[test]
    fn transpose_mirrors_types(g in typed_graph()) {
        let t = g.transpose();
        prop_assert_eq!(t.len(), g.len());
        for e in g.edges() {
            let m = t.get(&e.b, &e.a).unwrap();
            let expected = match e.kind.unwrap() {
                RelationType::Parent => RelationType::Child,
                RelationType::Child => RelationType::Parent,
                other => other,
            };
            prop_assert_eq!(m.kind, Some(expected));
            prop_assert_eq!(m.strength, e.strength);
        }
        prop_assert_eq!(t.transpose(), g);
    }

    #[test]
    fn set_theory_commutes_with_role_swap(
        (na, nb, cells) in (1usize..6, 1usize..6).prop_flat_map(|(na, nb)| (Just(na), Just(nb), prop::collection::vec(any::<bool>(), na * nb)))
    ) {
        let g = untyped_graph(na, nb, &cells);
        prop_assert_eq!(set_theory_types(&g.transpose()), set_theory_types(&g).transpose());
    }

    #[test]
    fn isolated_edges_are_identity_and_stars_are_parents(k in 2usize..8) {
        let single = untyped_graph(1, 1, &[true]);
        prop_assert_eq!(set_theory_types(&single).get("a0", "b0").unwrap().kind, Some(RelationType::Identity));
        let star = set_theory_types(&untyped_graph(1, k, &vec![true; k]));
        prop_assert!(star.edges().all(|e| e.kind == Some(RelationType::Parent) && !e.relaxed));
    }

    #[test]
    fn asymmetry_mirror_and_ratio_invariance(
        (n, ab, ba, t, c) in (1usize..5).prop_flat_map(|n| (
            Just(n),
            prop::collection::vec(0.01f64..1.0, n * n),
            prop::collection::vec(0.01f64..1.0, n * n),
            1.01f64..5.0,
            0.1f64..1.0,
        ))
    ) {
        let a = space("A", "a", n);
        let b = space("B", "b", n);
        let s_ab = directional(&a, &b, &ab);
        let s_ba = directional(&b, &a, &ba);
        let g = untyped_graph(n, n, &vec![true; n * n]);
        let typed = asymmetry_types(&g, &s_ab, &s_ba, t).unwrap();
        prop_assert!(typed.edges().all(|e| e.kind != Some(RelationType::Overlap)));
        prop_assert_eq!(asymmetry_types(&g.transpose(), &s_ba, &s_ab, t).unwrap(), typed.transpose());
        let scale = |m: &DirectionalScoreMatrix| {
            let mut m = m.clone();
            m.scores.values.mapv_inplace(|v| v * c);
            m
        };
        let scaled = asymmetry_types(&g, &scale(&s_ab), &scale(&s_ba), t).unwrap();
        // Scaling can move a ratio across T only through rounding; compare where
        // the ratio is not within rounding distance of T.
        for e in typed.edges() {
            let x = s_ab.get(&e.a, &e.b).unwrap();
            let y = s_ba.get(&e.b, &e.a).unwrap();
            let near = ((x / y) / t - 1.0).abs() < 1e-12 || ((y / x) / t - 1.0).abs() < 1e-12;
            if !near {
                prop_assert_eq!(scaled.get(&e.a, &e.b).unwrap().kind, e.kind);
            }
        }
    }

    #[test]
    fn link_scores_transpose_under_role_swap(
        (na, nb, ab, ba) in (1usize..6, 1usize..6).prop_flat_map(|(na, nb)| (
            Just(na), Just(nb),
            prop::collection::vec(0.0f64..=1.0, na * nb),
            prop::collection::vec(0.0f64..=1.0, na * nb),
        ))
    ) {
        let a = space("A", "a", na);
        let b = space("B", "b", nb);
        let s_ab = directional(&a, &b, &ab);
        let s_ba = directional(&b, &a, &ba);
        let r = link_scores(&s_ab, &s_ba).unwrap();
        prop_assert_eq!(link_scores(&s_ba, &s_ab).unwrap(), r.transpose());
        for (x, y, v) in r.cells() {
            prop_assert_eq!(v, (s_ab.get(x, y).unwrap() + s_ba.get(y, x).unwrap()) / 2.0);
        }
    }

    #[test]
    fn binarize_is_monotone(values in prop::collection::vec(0.0f64..=1.0, 12), t1 in -0.5f64..1.5, t2 in -0.5f64..1.5) {
        let r = LabelMatrix::from_values(space("A", "a", 3), space("B", "b", 4), Array2::from_shape_vec((3, 4), values).unwrap()).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let low = binarize(&r, lo);
        let high = binarize(&r, hi);
        prop_assert!(high.edges().all(|e| low.contains(&e.a, &e.b)));
        for (a, b, v) in r.cells() {
            prop_assert_eq!(low.contains(a, b), v > lo);
        }
    }

    #[test]
    fn ap_is_bounded_and_invariant_to_monotone_transforms(
        (strengths, positives) in (2usize..12).prop_flat_map(|n| (
            prop::collection::vec(0u8..5, n),
            prop::collection::vec(any::<bool>(), n),
        ))
    ) {
        prop_assume!(positives.iter().any(|&p| p));
        let r = LabelMatrix::from_values(
            space("A", "a", strengths.len()),
            space("B", "b", 1),
            Array2::from_shape_vec((strengths.len(), 1), strengths.iter().map(|&s| f64::from(s)).collect()).unwrap(),
        ).unwrap();
        let gt: BTreeSet<(String, String)> = positives.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| (format!("a{i}"), "b0".to_string())).collect();
        let ap = pr_curve(&rank_pairs(&r), &gt).unwrap().average_precision;
        prop_assert!((0.0..=1.0).contains(&ap));
        let mut squashed = r.clone();
        squashed.values.mapv_inplace(|v| (v * 0.3).exp() - 7.0);
        squashed.values.mapv_inplace(|v| v + 7.0);
        let transformed: Vec<RankedPair> = rank_pairs(&squashed);
        prop_assert!((pr_curve(&transformed, &gt).unwrap().average_precision - ap).abs() < 1e-12);
    }

    #[test]
    fn accuracy_is_duplication_invariant_and_confusion_rows_count_gt(
        obs in prop::collection::vec((0usize..6, 0usize..6), 1..60)
    ) {
        let obs: Vec<(RelationType, RelationType)> = obs.iter().map(|&(g, p)| (RelationType::ALL[g], RelationType::ALL[p])).collect();
        let doubled: Vec<_> = obs.iter().chain(obs.iter()).copied().collect();
        prop_assert_eq!(type_accuracy(&doubled).macro_average, type_accuracy(&obs).macro_average);
        let cm = confusion_matrix(&obs);
        for t in RelationType::ALL {
            prop_assert_eq!(cm.row_sum(t), obs.iter().filter(|(g, _)| *g == t).count());
        }
    }

    #[test]
    fn candidate_counts_are_additive(
        records in prop::collection::vec((0usize..3, 0usize..3, 0u64..=10, 1u64..=10), 0..40),
        split in 0usize..40
    ) {
        let records: Vec<RelabelRecord> = records.iter().enumerate().map(|(i, &(o, m, c, extra))| RelabelRecord {
            instance_id: format!("i{i}"),
            original_label: format!("o{o}"),
            pixel_counts: BTreeMap::from([(format!("m{m}"), c)]),
            total_pixels: c + extra,
        }).collect();
        let split = split.min(records.len());
        let count_map = |rs: &[RelabelRecord]| -> BTreeMap<(String, String), u64> {
            derive_candidates(rs).unwrap().into_iter().map(|c| ((c.original, c.intermediate), c.count)).collect()
        };
        let mut sum = count_map(&records[..split]);
        for (k, v) in count_map(&records[split..]) {
            *sum.entry(k).or_default() += v;
        }
        prop_assert_eq!(count_map(&records), sum);
    }

    #[test]
    fn composition_covers_shared_pairs_without_inventing_identity(am in typed_graph(), bm in typed_graph()) {
        // Reuse the generated graphs as A↔M and B↔M relations.
        let rename = |g: &RelationGraph, space: &str, prefix: &str| {
            let mut out = RelationGraph::new(space, "M");
            for e in g.edges() {
                let mut e = e.clone();
                e.a = format!("{prefix}{}", &e.a[1..]);
                e.b = format!("m{}", &e.b[1..]);
                out.insert(e).unwrap();
            }
            out
        };
        let am = rename(&am, "A", "a");
        let bm = rename(&bm.transpose().transpose(), "B", "b");
        let comp = compose(&am, &bm).unwrap();
        let mut shared = BTreeSet::new();
        for x in am.edges().filter(|e| e.kind.unwrap().is_related()) {
            for y in bm.edges().filter(|e| e.kind.unwrap().is_related() && e.b == x.b) {
                shared.insert((x.a.clone(), y.a.clone()));
            }
        }
        let mut covered: BTreeSet<(String, String)> = comp.relations.edges().map(|e| (e.a.clone(), e.b.clone())).collect();
        for r in &comp.needs_review {
            prop_assert!(covered.insert((r.a.clone(), r.b.clone())), "pair typed and under review");
        }
        prop_assert_eq!(covered, shared);
        for e in comp.relations.edges().filter(|e| e.kind == Some(RelationType::Identity)) {
            for x in am.edges().filter(|x| x.a == e.a && x.kind.unwrap().is_related()) {
                if let Some(y) = bm.get(&e.b, &x.b) {
                    if y.kind.unwrap().is_related() {
                        prop_assert_eq!(x.kind, Some(RelationType::Identity));
                        prop_assert_eq!(y.kind, Some(RelationType::Identity));
                    }
                }
            }
        }
    }

    #[test]
    fn taxonomy_queries_are_symmetric(
        (n, edges) in (1usize..12).prop_flat_map(|n| (Just(n), prop::collection::vec((0usize..12, 0usize..12), 0..20)))
    ) {
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().filter(|&(i, j)| i < j && j < n).collect();
        let name = |i: usize| format!("s{i}");
        let tax = TaxonomyGraph::from_file(TaxonomyFile {
            synsets: (0..n).map(name).collect(),
            hypernym_edges: edges.iter().map(|&(i, j)| (name(i), name(j))).collect(),
            label_map: (0..n).flat_map(|i| [(format!("A/{}", name(i)), name(i)), (format!("B/{}", name(i)), name(i))]).collect(),
        }).unwrap();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (name(i), name(j));
                prop_assert_eq!(tax.path_similarity("A", &x, "B", &y).unwrap(), tax.path_similarity("B", &y, "A", &x).unwrap());
                prop_assert_eq!(tax.relation("A", &x, "B", &y).unwrap(), tax.relation("B", &y, "A", &x).unwrap().mirror());
                let s = tax.strength("A", &x, "B", &y).unwrap();
                prop_assert!((0.0..=2.0).contains(&s));
                prop_assert_eq!(s == 2.0, tax.relation("A", &x, "B", &y).unwrap() == RelationType::Identity);
            }
        }
    }

    #[test]
    fn aggregation_ignores_record_order(
        (scores, perm_seed) in (prop::collection::vec((0usize..3, prop::collection::vec(0.0f64..1.0, 3), 0.0f64..1.0), 1..30), any::<u64>())
    ) {
        let a = space("A", "a", 2);
        let b = space("B", "b", 3);
        let records: Vec<InstanceScoreRecord> = scores.iter().enumerate().map(|(i, (label, v, own))| {
            let sum: f64 = v.iter().sum::<f64>().max(1e-9);
            InstanceScoreRecord {
                instance_id: format!("r{i:03}"),
                source_dataset: "B".into(),
                true_label: format!("b{label}"),
                self_score: *own,
                foreign_scores: BTreeMap::from([
                    ("a0".to_string(), v[0] / sum),
                    ("a1".to_string(), v[1] / sum),
                    (BACKGROUND.to_string(), v[2] / sum),
                ]),
            }
        }).collect();
        let mut shuffled = records.clone();
        let mut state = perm_seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let req = AggregationRequest::new(ScoreMode::PixelProbability);
        let x = aggregate_directional(&records, &a, &b, &req).unwrap();
        let y = aggregate_directional(&shuffled, &a, &b, &req).unwrap();
        prop_assert!(x.scores.values.iter().zip(y.scores.values.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert_eq!(x.support, y.support);
    }

    #[test]
    fn link_strength_is_monotone_and_ignores_unrelated(
        (values, related, bump) in (prop::collection::vec(0.0f64..0.9, 4), prop::collection::vec(any::<bool>(), 4), 0.0f64..0.1)
    ) {
        let a = space("A", "a", 4);
        let b = space("B", "b", 1);
        let s = directional(&a, &b, &values);
        let rel = RelationGraph::from_edges("A", "B", (0..4).filter(|&i| related[i]).map(|i| RelationEdge::typed(format!("a{i}"), "b0", 1.0, RelationType::Child))).unwrap();
        let base = link_strength(&s, &rel, "b0", None).unwrap().strength;
        for i in 0..4 {
            let mut bumped = values.clone();
            bumped[i] += bump;
            let after = link_strength(&directional(&a, &b, &bumped), &rel, "b0", None).unwrap().strength;
            if related[i] {
                prop_assert!(after >= base);
            } else {
                prop_assert_eq!(after, base);
            }
        }
    }

    #[test]
    fn gain_groups_partition_labels(
        (strengths, n) in (2usize..12).prop_flat_map(|len| (prop::collection::vec(0.0f64..1.0, len), 1..=len / 2))
    ) {
        let map: BTreeMap<String, f64> = strengths.iter().enumerate().map(|(i, &s)| (format!("l{i}"), s)).collect();
        let gains: Vec<TransferGainRecord> = map.keys().map(|l| TransferGainRecord { target_label: l.clone(), gain: 1.0 }).collect();
        let g = group_gains(&map, &gains, n).unwrap();
        let all: Vec<&String> = g.low.labels.iter().chain(&g.mid.labels).chain(&g.top.labels).collect();
        prop_assert_eq!(all.len(), map.len());
        prop_assert_eq!(all.into_iter().collect::<BTreeSet<_>>().len(), map.len());
        prop_assert_eq!(g.low.labels.len(), n);
        prop_assert_eq!(g.top.labels.len(), n);
    }

    #[test]
    fn refined_labels_are_children(
        scores in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..10)
    ) {
        let rel = RelationGraph::from_edges("A", "B", [
            RelationEdge::typed("p", "b0", 1.0, RelationType::Parent),
            RelationEdge::typed("p", "b1", 1.0, RelationType::Parent),
            RelationEdge::typed("p", "b2", 1.0, RelationType::Overlap),
        ]).unwrap();
        let records: Vec<InstanceScoreRecord> = scores.iter().enumerate().map(|(i, v)| InstanceScoreRecord {
            instance_id: format!("i{i}"),
            source_dataset: "A".into(),
            true_label: "p".into(),
            self_score: 1.0,
            foreign_scores: (0..4).map(|j| (format!("b{j}"), v[j])).collect(),
        }).collect();
        let out = refine_labels("p", &records, &rel, None).unwrap();
        prop_assert_eq!(out.instances.len(), records.len());
        for (inst, v) in out.instances.iter().zip(&scores) {
            prop_assert!(inst.label == "b0" || inst.label == "b1");
            prop_assert_eq!(inst.score, v[0].max(v[1]));
        }
    }
}
