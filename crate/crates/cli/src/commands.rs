//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use labelrel::aggregate::{
    aggregate_directional, nn_classify, nn_self_scores, pixel_records_to_scores,
    self_scores_from_pixels, AggregationRequest, LabelOrder, PixelScoreRecord,
};
use labelrel::apps::{self, TaggedEmbedding};
use labelrel::discover::{binarize, link_scores, rank_pairs};
use labelrel::eval::{
    confusion_matrix, pair_observations, positive_pairs, pr_curve, type_accuracy,
};
use labelrel::groundtruth::{self, OverrideList, RelabelRecord};
use labelrel::io::{self, directional_to_json, graph_to_matrix, matrix_to_graph, read_relations};
use labelrel::model::{validate_inputs, PixelReduction};
use labelrel::synth::LatentWorld;
use labelrel::taxonomy::TaxonomyGraph;
use labelrel::typing::{self, CalibratedParameter, CalibrationInputs, TypingMethod};
use labelrel::wordvec::WordEmbeddingTable;
use labelrel::{
    DirectionalScoreMatrix, EmbeddingRecord, Error, InstanceScoreRecord, LabelMatrix, LabelSpace,
    RelationGraph, RelationType, ScoreMode,
};
use serde::{Deserialize, Serialize};

use crate::run::{fmt_f64, Run};
use crate::{read_space, CliError, Command, Easy, Method, Mode, Param, Spaces, Typing};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(command: Command, run: &mut Run) -> Result<()> {
    match command {
        Command::Validate {
            spaces,
            scores,
            mode,
            no_normalization_check,
        } => validate(run, &spaces, &scores, mode, !no_normalization_check),
        Command::Aggregate {
            spaces,
            easy,
            scores,
            pixel_scores,
            label_order,
            own_pixel_scores,
            own_label_order,
            reduction: _,
            embeddings,
            reference_embeddings,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let source = if let Some(path) = scores {
                Source::Scores(path)
            } else if let (Some(pixels), Some(order)) = (pixel_scores, label_order) {
                Source::Pixels {
                    pixels,
                    order,
                    own: own_pixel_scores.zip(own_label_order),
                }
            } else if let (Some(emb), Some(refs)) = (embeddings, reference_embeddings) {
                Source::Embeddings { emb, refs }
            } else {
                return Err(CliError::Usage(
                    "aggregate needs --scores, --pixel-scores or --embeddings".into(),
                ));
            };
            aggregate(run, &a, &b, &easy, source)
        }
        Command::Discover {
            spaces,
            easy,
            scores_ab,
            scores_ba,
            params: _,
        } => discover(run, &spaces, &easy, &scores_ab, &scores_ba),
        Command::ClassifyTypes {
            spaces,
            relations,
            method,
            directional_ab,
            directional_ba,
            link_scores,
            taxonomy_relations,
            params: _,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let directional = match (directional_ab, directional_ba) {
                (Some(ab), Some(ba)) => Some(load_directional(run, &a, &b, &ab, &ba)?),
                (None, None) => None,
                _ => {
                    return Err(CliError::Usage(
                        "give both --directional-ab and --directional-ba".into(),
                    ))
                }
            };
            let need_directional = || {
                directional.as_ref().ok_or_else(|| {
                    CliError::Usage(
                        "this method needs --directional-ab and --directional-ba".into(),
                    )
                })
            };
            let typed = match method {
                Method::Combined => {
                    let (Some(link), Some(tax)) = (link_scores, taxonomy_relations) else {
                        return Err(CliError::Usage(
                            "--method combined needs --link-scores and --taxonomy-relations".into(),
                        ));
                    };
                    let (s_ab, s_ba) = need_directional()?;
                    combined(run, &a, &b, s_ab, s_ba, &link, &tax)?.1
                }
                _ => {
                    let path = relations.ok_or_else(|| {
                        CliError::Usage("--relations is required for this method".into())
                    })?;
                    let graph = load_relations(run, &path, &a, &b)?;
                    if method == Method::SetTheory {
                        typing::set_theory_types(&graph)
                    } else {
                        let (s_ab, s_ba) = need_directional()?;
                        typing::asymmetry_types(&graph, s_ab, s_ba, run.config.asymmetry_t)?
                    }
                }
            };
            report_typed(&typed);
            run.write_relations("typed_relations.jsonl", &typed)?;
            Ok(())
        }
        Command::TaxonomyRelate {
            spaces,
            taxonomy,
            allow_unmapped,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let tax = TaxonomyGraph::load(run.input(&taxonomy))?.allow_unmapped(allow_unmapped);
            let (_, graph) = tax.relate_spaces(&a, &b)?;
            let related = graph
                .edges()
                .filter(|e| e.kind.is_some_and(RelationType::is_related))
                .count();
            println!("{related} related pairs out of {}", graph.len());
            run.write_relations("taxonomy_relations.jsonl", &graph)?;
            Ok(())
        }
        Command::EmbedRelate {
            spaces,
            word_vectors,
            params: _,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let table = WordEmbeddingTable::load(run.input(&word_vectors))?;
            let mut sim = table.similarity_matrix(&a, &b)?;
            sim.values.mapv_inplace(|v| v.max(0.0));
            let typed = typing::set_theory_types(&binarize(&sim, run.config.relation_threshold));
            report_typed(&typed);
            run.write_relations("embedding_scores.jsonl", &matrix_to_graph(&sim)?)?;
            run.write_relations("embedding_relations.jsonl", &typed)?;
            Ok(())
        }
        Command::Combine {
            spaces,
            directional,
            link_scores,
            taxonomy_relations,
            params: _,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let (s_ab, s_ba) = load_directional(
                run,
                &a,
                &b,
                &directional.directional_ab,
                &directional.directional_ba,
            )?;
            let (boosted, typed) =
                combined(run, &a, &b, &s_ab, &s_ba, &link_scores, &taxonomy_relations)?;
            report_typed(&typed);
            run.write_relations("combined_scores.jsonl", &matrix_to_graph(&boosted)?)?;
            run.write_relations("typed_relations.jsonl", &typed)?;
            Ok(())
        }
        Command::Calibrate {
            spaces,
            param,
            grid,
            reference,
            link_scores,
            directional_ab,
            directional_ba,
            typing: method,
            params: _,
        } => {
            let candidates = parse_grid(&grid)?;
            let (a, b) = load_spaces(run, &spaces)?;
            let link = load_matrix(run, &link_scores, &a, &b)?;
            let reference = load_relations(run, &reference, &a, &b)?;
            let directional = match (directional_ab, directional_ba) {
                (Some(ab), Some(ba)) => Some(load_directional(run, &a, &b, &ab, &ba)?),
                (None, None) => None,
                _ => {
                    return Err(CliError::Usage(
                        "give both --directional-ab and --directional-ba".into(),
                    ))
                }
            };
            let inputs = CalibrationInputs {
                link: &link,
                directional: directional.as_ref().map(|(x, y)| (x, y)),
                relation_threshold: run.config.relation_threshold,
                asymmetry_t: run.config.asymmetry_t,
                typing: match method {
                    Typing::SetTheory => TypingMethod::SetTheory,
                    Typing::Asymmetry => TypingMethod::Asymmetry,
                },
            };
            let parameter = match param {
                Param::RelationThreshold => CalibratedParameter::RelationThreshold,
                Param::AsymmetryT => CalibratedParameter::AsymmetryT,
            };
            let result = typing::calibrate(&candidates, parameter, &inputs, &reference)?;
            println!(
                "best {} = {} (macro accuracy {})",
                param_name(param),
                fmt_f64(result.best),
                fmt_f64(result.accuracy)
            );
            #[derive(Serialize)]
            struct Out<'a> {
                parameter: CalibratedParameter,
                typing: TypingMethod,
                #[serde(flatten)]
                result: &'a typing::Calibration,
            }
            run.write_json(
                "calibration.json",
                &Out {
                    parameter,
                    typing: inputs.typing,
                    result: &result,
                },
            )?;
            Ok(())
        }
        Command::GtDerive {
            relabels,
            dataset,
            intermediate,
            overrides,
        } => {
            let records: Vec<RelabelRecord> = io::read_jsonl(run.input(&relabels))?;
            let candidates = groundtruth::derive_candidates(&records)?;
            let typed = groundtruth::type_candidates(&dataset, &intermediate, &candidates)?;
            let overrides: OverrideList = match &overrides {
                Some(path) => io::read_json(run.input(path))?,
                None => OverrideList::default(),
            };
            let relations = groundtruth::apply_overrides(&typed, &overrides)?;
            report_typed(&relations);
            run.write_jsonl(&format!("{dataset}_candidates.jsonl"), &candidates)?;
            run.write_relations(
                &format!("{dataset}_{intermediate}_relations.jsonl"),
                &relations,
            )?;
            Ok(())
        }
        Command::GtCompose {
            spaces,
            intermediate,
            am,
            bm,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let rel_am = read_relations(run.input(&am), a.dataset(), &intermediate)?;
            let rel_bm = read_relations(run.input(&bm), b.dataset(), &intermediate)?;
            rel_am.check_endpoints(
                &a,
                &LabelSpace::new(&intermediate, intermediate_labels(&rel_am, &rel_bm))?,
            )?;
            let composition = groundtruth::compose(&rel_am, &rel_bm)?;
            composition.relations.check_endpoints(&a, &b)?;
            println!(
                "{} typed pairs, {} need review",
                composition.relations.len(),
                composition.needs_review.len()
            );
            run.write_relations("gt_relations.jsonl", &composition.relations)?;
            run.write_jsonl("needs_review.jsonl", &composition.needs_review)?;
            Ok(())
        }
        Command::EvalPr {
            spaces,
            predicted,
            ground_truth,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let scores = load_matrix(run, &predicted, &a, &b)?;
            let gt = load_relations(run, &ground_truth, &a, &b)?;
            let curve = pr_curve(&rank_pairs(&scores), &positive_pairs(&gt, &a, &b)?)?;
            println!(
                "auc (average precision) = {}",
                fmt_f64(curve.average_precision)
            );
            let rows: Vec<Vec<String>> = curve
                .points
                .iter()
                .map(|p| vec![fmt_f64(p.recall), fmt_f64(p.precision)])
                .collect();
            run.write_csv("pr_curve.csv", "recall,precision", &rows)?;
            #[derive(Serialize)]
            struct Summary {
                auc: f64,
                positives: usize,
                pairs: usize,
            }
            run.write_json(
                "pr_summary.json",
                &Summary {
                    auc: curve.average_precision,
                    positives: curve.positives,
                    pairs: a.len() * b.len(),
                },
            )?;
            Ok(())
        }
        Command::EvalTypes {
            spaces,
            predicted,
            ground_truth,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let pred = load_relations(run, &predicted, &a, &b)?;
            let gt = load_relations(run, &ground_truth, &a, &b)?;
            let obs = pair_observations(&a, &b, &pred, &gt)?;
            let acc = type_accuracy(&obs);
            let cm = confusion_matrix(&obs);
            for (t, v) in &acc.per_type {
                println!("{t}: {} ({} pairs)", fmt_f64(*v), acc.support[t]);
            }
            println!("macro accuracy = {}", fmt_f64(acc.macro_average));
            let rows: Vec<Vec<String>> = cm
                .cells()
                .map(|(g, p, n)| vec![g.to_string(), p.to_string(), n.to_string()])
                .collect();
            run.write_csv("confusion.csv", "gt_type,pred_type,count", &rows)?;
            run.write_json("type_accuracy.json", &acc)?;
            Ok(())
        }
        Command::TransferStrength {
            spaces,
            directional_ab,
            relations,
            types,
            gains,
            group_size,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let s_ab = load_one_directional(run, &directional_ab, &a, &b)?;
            let rel = load_relations(run, &relations, &a, &b)?;
            let filter = types
                .map(|ts| {
                    ts.iter()
                        .map(|t| t.parse::<RelationType>())
                        .collect::<labelrel::Result<Vec<_>>>()
                })
                .transpose()?;
            let strengths = apps::link_strengths(&s_ab, &rel, filter.as_deref())?;
            for w in strengths.iter().filter_map(|s| s.warning.as_ref()) {
                eprintln!("warning: {w}");
            }
            let rows: Vec<Vec<String>> = strengths
                .iter()
                .map(|s| vec![s.label.clone(), fmt_f64(s.strength), s.related.to_string()])
                .collect();
            run.write_csv("link_strengths.csv", "label,strength,related", &rows)?;
            if let (Some(path), Some(n)) = (gains, group_size) {
                let gains = io::read_gains(run.input(&path))?;
                let by_label: BTreeMap<String, f64> = strengths
                    .iter()
                    .map(|s| (s.label.clone(), s.strength))
                    .collect();
                let groups = apps::group_gains(&by_label, &gains, n)?;
                let show = |g: &Option<f64>| g.map_or("absent".to_string(), fmt_f64);
                println!(
                    "mean gain: low {}, mid {}, top {}",
                    show(&groups.low.mean_gain),
                    show(&groups.mid.mean_gain),
                    show(&groups.top.mean_gain)
                );
                run.write_json("gain_groups.json", &groups)?;
            }
            Ok(())
        }
        Command::Refine {
            spaces,
            parent,
            scores,
            relations,
            reference,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            if !a.contains(&parent) {
                return Err(Error::UnknownLabel {
                    space: a.dataset().to_string(),
                    label: parent,
                }
                .into());
            }
            let records: Vec<InstanceScoreRecord> = io::read_jsonl(run.input(&scores))?;
            let rel = load_relations(run, &relations, &a, &b)?;
            let reference = match &reference {
                Some(path) => {
                    let lines: Vec<ReferenceLabel> = io::read_jsonl(run.input(path))?;
                    Some(
                        lines
                            .into_iter()
                            .map(|r| (r.instance_id, r.label))
                            .collect::<BTreeMap<_, _>>(),
                    )
                }
                None => None,
            };
            let out = apps::refine_labels(&parent, &records, &rel, reference.as_ref())?;
            println!(
                "{} instances relabeled into {} children",
                out.instances.len(),
                out.children.len()
            );
            if let Some(ev) = &out.evaluation {
                println!("top-1 accuracy = {}", fmt_f64(ev.accuracy));
                run.write_json("refine_eval.json", ev)?;
            }
            run.write_jsonl("refined.jsonl", &out.instances)?;
            Ok(())
        }
        Command::Cluster {
            spaces,
            embeddings_a,
            embeddings_b,
            k,
            seed: _,
        } => {
            let (a, b) = load_spaces(run, &spaces)?;
            let mut tagged = Vec::new();
            for (space, path) in [(&a, &embeddings_a), (&b, &embeddings_b)] {
                let records: Vec<EmbeddingRecord> = io::read_jsonl(run.input(path))?;
                for r in records {
                    if !space.contains(&r.true_label) {
                        return Err(Error::UnknownLabel {
                            space: space.dataset().to_string(),
                            label: r.true_label,
                        }
                        .into());
                    }
                    tagged.push(TaggedEmbedding {
                        dataset: space.dataset().to_string(),
                        record: r,
                    });
                }
            }
            let clustering = apps::cluster_embeddings(&tagged, k, run.config.seed)?;
            println!(
                "{} clusters after {} iterations",
                clustering.composition.len(),
                clustering.iterations
            );
            let rows: Vec<Vec<String>> = clustering
                .composition
                .iter()
                .enumerate()
                .flat_map(|(c, counts)| {
                    counts
                        .iter()
                        .map(move |(d, n)| vec![c.to_string(), d.clone(), n.to_string()])
                })
                .collect();
            run.write_jsonl("clusters.jsonl", &clustering.assignments)?;
            run.write_csv("cluster_composition.csv", "cluster,dataset,count", &rows)?;
            Ok(())
        }
        Command::Synth {
            world,
            concepts,
            labels_a,
            labels_b,
            sigma,
            per_concept,
            seed,
        } => {
            let world = match &world {
                Some(path) => {
                    let mut w: LatentWorld = io::read_json(run.input(path))?;
                    if let Some(s) = seed {
                        w.seed = s;
                    }
                    w.validate()?;
                    w
                }
                None => LatentWorld::random(
                    concepts,
                    labels_a,
                    labels_b,
                    sigma,
                    per_concept,
                    run.config.seed,
                )?,
            };
            let (a, b) = world.label_spaces();
            let truth = world.true_relations();
            let instances = world.generate_instances();
            println!(
                "{} + {} labels, {} true relations, {} + {} instances",
                a.len(),
                b.len(),
                truth.len(),
                instances.a_records.len(),
                instances.b_records.len()
            );
            run.write_json("world.json", &world)?;
            run.write_json("labels_a.json", &a)?;
            run.write_json("labels_b.json", &b)?;
            run.write_jsonl("scores_ab.jsonl", &instances.b_records)?;
            run.write_jsonl("scores_ba.jsonl", &instances.a_records)?;
            run.write_relations("true_relations.jsonl", &truth)?;
            Ok(())
        }
    }
}

#[derive(Deserialize)]
struct ReferenceLabel {
    instance_id: String,
    label: String,
}

enum Source {
    Scores(PathBuf),
    Pixels {
        pixels: PathBuf,
        order: PathBuf,
        own: Option<(PathBuf, PathBuf)>,
    },
    Embeddings {
        emb: PathBuf,
        refs: PathBuf,
    },
}

fn param_name(p: Param) -> &'static str {
    match p {
        Param::RelationThreshold => "relation_threshold",
        Param::AsymmetryT => "asymmetry_t",
    }
}

fn load_spaces(run: &mut Run, spaces: &Spaces) -> Result<(LabelSpace, LabelSpace)> {
    let a = read_space(run, &spaces.labels_a)?;
    let b = read_space(run, &spaces.labels_b)?;
    if a.dataset() == b.dataset() {
        return Err(CliError::Usage(format!(
            "both label spaces are named `{}`",
            a.dataset()
        )));
    }
    Ok((a, b))
}

fn load_relations(
    run: &mut Run,
    path: &Path,
    a: &LabelSpace,
    b: &LabelSpace,
) -> Result<RelationGraph> {
    let graph = read_relations(run.input(path), a.dataset(), b.dataset())?;
    graph.check_endpoints(a, b)?;
    Ok(graph)
}

fn load_matrix(run: &mut Run, path: &Path, a: &LabelSpace, b: &LabelSpace) -> Result<LabelMatrix> {
    let graph = load_relations(run, path, a, b)?;
    Ok(graph_to_matrix(&graph, a, b)?)
}

fn load_one_directional(
    run: &mut Run,
    path: &Path,
    rows: &LabelSpace,
    cols: &LabelSpace,
) -> Result<DirectionalScoreMatrix> {
    let m = io::read_directional(run.input(path))?;
    if m.scores.rows != *rows || m.scores.cols != *cols {
        return Err(Error::Invalid(format!(
            "{} holds {} → {} scores, expected {} → {}",
            path.display(),
            m.from_space(),
            m.to_space(),
            rows.dataset(),
            cols.dataset()
        ))
        .into());
    }
    Ok(m)
}

fn load_directional(
    run: &mut Run,
    a: &LabelSpace,
    b: &LabelSpace,
    ab: &Path,
    ba: &Path,
) -> Result<(DirectionalScoreMatrix, DirectionalScoreMatrix)> {
    Ok((
        load_one_directional(run, ab, a, b)?,
        load_one_directional(run, ba, b, a)?,
    ))
}

fn combined(
    run: &mut Run,
    a: &LabelSpace,
    b: &LabelSpace,
    s_ab: &DirectionalScoreMatrix,
    s_ba: &DirectionalScoreMatrix,
    link: &Path,
    taxonomy: &Path,
) -> Result<(LabelMatrix, RelationGraph)> {
    let r = load_matrix(run, link, a, b)?;
    let tax = load_relations(run, taxonomy, a, b)?;
    let boosted = typing::combine_strengths(&r, &tax, run.config.taxonomy_boost_n)?;
    let graph = binarize(&boosted, run.config.relation_threshold);
    let typed = typing::combine_types(
        &graph,
        s_ab,
        s_ba,
        run.config.asymmetry_t,
        &tax,
        run.config.taxonomy_t_factor_m,
    )?;
    Ok((boosted, typed))
}

fn intermediate_labels(am: &RelationGraph, bm: &RelationGraph) -> Vec<String> {
    am.edges()
        .chain(bm.edges())
        .map(|e| e.b.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn report_typed(graph: &RelationGraph) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in graph.edges() {
        let name = e.kind.map_or("untyped".to_string(), |k| k.to_string());
        *counts.entry(name).or_default() += 1;
    }
    let relaxed = graph.edges().filter(|e| e.relaxed).count();
    let summary: Vec<String> = counts.iter().map(|(k, n)| format!("{k} {n}")).collect();
    println!("{} edges: {}", graph.len(), summary.join(", "));
    if relaxed > 0 {
        eprintln!("warning: {relaxed} edge(s) typed by the relaxed fallback rule");
    }
}

fn validate(
    run: &mut Run,
    spaces: &Spaces,
    scores: &Path,
    mode: Mode,
    normalized: bool,
) -> Result<()> {
    let (a, b) = load_spaces(run, spaces)?;
    let records: Vec<InstanceScoreRecord> = io::read_jsonl(run.input(scores))?;
    let violations = validate_inputs(&a, &b, &records, mode.into(), normalized);
    run.write_jsonl("violations.jsonl", &violations)?;
    if violations.is_empty() {
        println!("{} records valid", records.len());
        Ok(())
    } else {
        for v in violations.iter().take(20) {
            eprintln!("{}: {}", v.instance_id, v.message);
        }
        Err(CliError::Violations(violations.len()))
    }
}

fn request(run: &Run, easy: &Easy, mode: ScoreMode) -> AggregationRequest {
    AggregationRequest {
        mode,
        easy_filter: !easy.no_easy_filter,
        easy_threshold: run.config.easy_threshold,
    }
}

fn aggregate(
    run: &mut Run,
    a: &LabelSpace,
    b: &LabelSpace,
    easy: &Easy,
    source: Source,
) -> Result<()> {
    let reduction: PixelReduction = run.config.aggregation_mode;
    let (records, mode, derived) = match source {
        Source::Scores(path) => {
            let records: Vec<InstanceScoreRecord> = io::read_jsonl(run.input(&path))?;
            (records, easy.mode.into(), false)
        }
        Source::Pixels { pixels, order, own } => {
            let pixel_records: Vec<PixelScoreRecord> = io::read_jsonl(run.input(&pixels))?;
            let order: LabelOrder = io::read_json(run.input(&order))?;
            let self_scores = match own {
                Some((own_pixels, own_order)) => {
                    let own_records: Vec<PixelScoreRecord> =
                        io::read_jsonl(run.input(&own_pixels))?;
                    let own_order: LabelOrder = io::read_json(run.input(&own_order))?;
                    Some(self_scores_from_pixels(
                        &own_records,
                        &own_order,
                        reduction,
                    )?)
                }
                None => None,
            };
            let records = pixel_records_to_scores(
                &pixel_records,
                &order,
                b.dataset(),
                reduction,
                self_scores.as_ref(),
            )?;
            (records, ScoreMode::PixelProbability, true)
        }
        Source::Embeddings { emb, refs } => {
            let queries: Vec<EmbeddingRecord> = io::read_jsonl(run.input(&emb))?;
            let references: Vec<EmbeddingRecord> = io::read_jsonl(run.input(&refs))?;
            let mut records = nn_classify(&queries, &references, a, b.dataset())?;
            let own = nn_self_scores(&queries)?;
            for r in &mut records {
                r.self_score = own[&r.instance_id];
            }
            (records, ScoreMode::Embedding1nn, true)
        }
    };
    let max_reduced =
        matches!(mode, ScoreMode::PixelProbability) && derived && reduction == PixelReduction::Max;
    check_records(
        a,
        b,
        &records,
        mode,
        !easy.no_normalization_check && !max_reduced,
    )?;
    let s = aggregate_directional(&records, a, b, &request(run, easy, mode))?;
    warn_unsupported(&s);
    if derived {
        run.write_jsonl("scores.jsonl", &records)?;
    }
    run.write_bytes(
        "directional.json",
        directional_to_json(&s, true)?.as_bytes(),
    )?;
    Ok(())
}

fn check_records(
    a: &LabelSpace,
    b: &LabelSpace,
    records: &[InstanceScoreRecord],
    mode: ScoreMode,
    normalized: bool,
) -> Result<()> {
    let violations = validate_inputs(a, b, records, mode, normalized);
    match violations.first() {
        None => Ok(()),
        Some(v) => Err(Error::Invalid(format!(
            "{} invalid record(s) scored under `{}`; first: {}: {}",
            violations.len(),
            a.dataset(),
            v.instance_id,
            v.message
        ))
        .into()),
    }
}

fn warn_unsupported(s: &DirectionalScoreMatrix) {
    if !s.unsupported.is_empty() {
        eprintln!(
            "warning: no easy instances for {} label(s) of {}: {}",
            s.unsupported.len(),
            s.to_space(),
            s.unsupported.join(", ")
        );
    }
}

fn discover(
    run: &mut Run,
    spaces: &Spaces,
    easy: &Easy,
    scores_ab: &Path,
    scores_ba: &Path,
) -> Result<()> {
    let (a, b) = load_spaces(run, spaces)?;
    let records_ab: Vec<InstanceScoreRecord> = io::read_jsonl(run.input(scores_ab))?;
    let records_ba: Vec<InstanceScoreRecord> = io::read_jsonl(run.input(scores_ba))?;
    let mode: ScoreMode = easy.mode.into();
    check_records(&a, &b, &records_ab, mode, !easy.no_normalization_check)?;
    check_records(&b, &a, &records_ba, mode, !easy.no_normalization_check)?;
    let req = request(run, easy, mode);
    let s_ab = aggregate_directional(&records_ab, &a, &b, &req)?;
    let s_ba = aggregate_directional(&records_ba, &b, &a, &req)?;
    warn_unsupported(&s_ab);
    warn_unsupported(&s_ba);
    let r = link_scores(&s_ab, &s_ba)?;
    let graph = binarize(&r, run.config.relation_threshold);
    println!(
        "{} relations above {} among {} label pairs",
        graph.len(),
        fmt_f64(run.config.relation_threshold),
        a.len() * b.len()
    );
    run.write_bytes(
        "directional_ab.json",
        directional_to_json(&s_ab, true)?.as_bytes(),
    )?;
    run.write_bytes(
        "directional_ba.json",
        directional_to_json(&s_ba, true)?.as_bytes(),
    )?;
    run.write_relations("link_scores.jsonl", &matrix_to_graph(&r)?)?;
    run.write_relations("relations.jsonl", &graph)?;
    Ok(())
}

/// `start:stop:step` with an inclusive stop, or `x,y,z`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| CliError::Usage(format!("invalid --grid `{spec}`: {msg}"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("`{s}` is not a number")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [single] => single.split(',').map(num).collect::<Result<Vec<_>>>()?,
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0 && start <= stop) || ![start, stop, step].iter().all(|x| x.is_finite())
            {
                return Err(bad("need start <= stop and step > 0"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 1_000_000 {
                return Err(bad("too many grid points"));
            }
            (0..count)
                .map(|i| io::round_sig9(start + i as f64 * step))
                .collect()
        }
        _ => return Err(bad("expected start:stop:step or a comma-separated list")),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("values must be finite"));
    }
    Ok(values)
}
