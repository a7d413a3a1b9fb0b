//! Synthetic label spaces generated from a latent concept model, with exact
//! relations between them.
//!
//! Each label owns a set of concepts. An instance of label `b` is drawn from
//! one of its concepts and scored by the other dataset's "model" as the label
//! owning that concept (background if none), plus clipped Gaussian noise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    InstanceScoreRecord, LabelSpace, RelationEdge, RelationGraph, RelationType, BACKGROUND,
};

pub const DATASET_A: &str = "synth_a";
pub const DATASET_B: &str = "synth_b";

pub type Concept = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentWorld {
    pub concepts: BTreeSet<Concept>,
    pub space_a: BTreeMap<String, BTreeSet<Concept>>,
    pub space_b: BTreeMap<String, BTreeSet<Concept>>,
    pub noise_sigma: f64,
    pub instances_per_concept: usize,
    pub seed: u64,
}

fn check_space(
    name: &str,
    concepts: &BTreeSet<Concept>,
    space: &BTreeMap<String, BTreeSet<Concept>>,
) -> Result<()> {
    if space.is_empty() {
        return Err(Error::invalid(format!("space {name} has no labels")));
    }
    let mut owner: BTreeMap<Concept, &str> = BTreeMap::new();
    for (label, set) in space {
        if set.is_empty() {
            return Err(Error::invalid(format!(
                "label `{label}` in space {name} owns no concepts"
            )));
        }
        for c in set {
            if !concepts.contains(c) {
                return Err(Error::invalid(format!(
                    "label `{label}` uses unknown concept {c}"
                )));
            }
            if let Some(other) = owner.insert(*c, label) {
                return Err(Error::invalid(format!(
                    "concept {c} belongs to both `{other}` and `{label}` in space {name}"
                )));
            }
        }
    }
    LabelSpace::new(name, space.keys().cloned())?;
    Ok(())
}

fn set_relation(ca: &BTreeSet<Concept>, cb: &BTreeSet<Concept>) -> RelationType {
    if ca == cb {
        RelationType::Identity
    } else if ca.is_superset(cb) {
        RelationType::Parent
    } else if ca.is_subset(cb) {
        RelationType::Child
    } else if ca.is_disjoint(cb) {
        RelationType::None
    } else {
        RelationType::Overlap
    }
}

/// Instances of both datasets, each scored by the other dataset's model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstances {
    /// Instances of A scored over B's labels.
    pub a_records: Vec<InstanceScoreRecord>,
    /// Instances of B scored over A's labels.
    pub b_records: Vec<InstanceScoreRecord>,
}

impl LatentWorld {
    pub fn new(
        concepts: BTreeSet<Concept>,
        space_a: BTreeMap<String, BTreeSet<Concept>>,
        space_b: BTreeMap<String, BTreeSet<Concept>>,
        noise_sigma: f64,
        instances_per_concept: usize,
        seed: u64,
    ) -> Result<Self> {
        let world = LatentWorld {
            concepts,
            space_a,
            space_b,
            noise_sigma,
            instances_per_concept,
            seed,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise sigma {} must be finite and >= 0",
                self.noise_sigma
            )));
        }
        if self.instances_per_concept == 0 {
            return Err(Error::invalid("instances per concept must be positive"));
        }
        check_space(DATASET_A, &self.concepts, &self.space_a)?;
        check_space(DATASET_B, &self.concepts, &self.space_b)
    }

    /// A random world: every label gets one concept, and each remaining
    /// concept goes to a uniformly chosen label or stays unowned.
    pub fn random(
        n_concepts: usize,
        n_labels_a: usize,
        n_labels_b: usize,
        noise_sigma: f64,
        instances_per_concept: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_labels_a == 0 || n_labels_b == 0 || n_labels_a.max(n_labels_b) > n_concepts {
            return Err(Error::invalid(format!(
                "need 1 <= labels <= concepts, got {n_labels_a} and {n_labels_b} labels for {n_concepts} concepts"
            )));
        }
        let concepts: BTreeSet<Concept> = (0..n_concepts as Concept).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut partition = |prefix: &str, n_labels: usize| {
            let width = n_labels.to_string().len();
            let names: Vec<String> = (0..n_labels)
                .map(|i| format!("{prefix}{i:0width$}"))
                .collect();
            let mut order: Vec<Concept> = concepts.iter().copied().collect();
            order.shuffle(&mut rng);
            let mut space: BTreeMap<String, BTreeSet<Concept>> = BTreeMap::new();
            for (i, c) in order.iter().enumerate() {
                let slot = if i < n_labels {
                    i
                } else {
                    rng.random_range(0..=n_labels)
                };
                if slot < n_labels {
                    space.entry(names[slot].clone()).or_default().insert(*c);
                }
            }
            space
        };
        let space_a = partition("a", n_labels_a);
        let space_b = partition("b", n_labels_b);
        Self::new(
            concepts,
            space_a,
            space_b,
            noise_sigma,
            instances_per_concept,
            seed,
        )
    }

    pub fn label_spaces(&self) -> (LabelSpace, LabelSpace) {
        let a = LabelSpace::new(DATASET_A, self.space_a.keys().cloned()).expect("validated world");
        let b = LabelSpace::new(DATASET_B, self.space_b.keys().cloned()).expect("validated world");
        (a, b)
    }

    /// Typed relation of every related pair; `none` pairs are omitted.
    /// Strength is the number of shared concepts.
    pub fn true_relations(&self) -> RelationGraph {
        let mut g = RelationGraph::new(DATASET_A, DATASET_B);
        for (a, ca) in &self.space_a {
            for (b, cb) in &self.space_b {
                let kind = set_relation(ca, cb);
                if kind.is_related() {
                    let shared = ca.intersection(cb).count() as f64;
                    g.insert(RelationEdge::typed(a.clone(), b.clone(), shared, kind))
                        .expect("labels are unique");
                }
            }
        }
        g
    }

    pub fn generate_instances(&self) -> SyntheticInstances {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
        let b_records =
            self.generate_side(&mut rng, &noise, DATASET_B, &self.space_b, &self.space_a);
        let a_records =
            self.generate_side(&mut rng, &noise, DATASET_A, &self.space_a, &self.space_b);
        SyntheticInstances {
            a_records,
            b_records,
        }
    }

    fn generate_side(
        &self,
        rng: &mut ChaCha8Rng,
        noise: &Normal<f64>,
        dataset: &str,
        own: &BTreeMap<String, BTreeSet<Concept>>,
        foreign: &BTreeMap<String, BTreeSet<Concept>>,
    ) -> Vec<InstanceScoreRecord> {
        let foreign_owner: BTreeMap<Concept, &str> = foreign
            .iter()
            .flat_map(|(l, cs)| cs.iter().map(move |c| (*c, l.as_str())))
            .collect();
        let mut foreign_labels: Vec<&str> = foreign.keys().map(String::as_str).collect();
        foreign_labels.push(BACKGROUND);
        let own_labels: Vec<&str> = own.keys().map(String::as_str).collect();

        let total = own.values().map(BTreeSet::len).sum::<usize>() * self.instances_per_concept;
        let width = total.to_string().len();
        let mut out = Vec::with_capacity(total);
        for (label, concepts) in own {
            let own_index = own_labels
                .iter()
                .position(|l| l == label)
                .expect("own label");
            for c in concepts {
                let hot = foreign_labels
                    .iter()
                    .position(|l| *l == foreign_owner.get(c).copied().unwrap_or(BACKGROUND))
                    .expect("owner is listed");
                for _ in 0..self.instances_per_concept {
                    let self_vec = noisy_one_hot(rng, noise, own_labels.len(), own_index);
                    let foreign_vec = noisy_one_hot(rng, noise, foreign_labels.len(), hot);
                    out.push(InstanceScoreRecord {
                        instance_id: format!("{dataset}-{:0width$}", out.len()),
                        source_dataset: dataset.to_string(),
                        true_label: label.clone(),
                        self_score: self_vec[own_index],
                        foreign_scores: foreign_labels
                            .iter()
                            .zip(foreign_vec)
                            .map(|(l, v)| (l.to_string(), v))
                            .collect(),
                    });
                }
            }
        }
        out
    }
}

fn noisy_one_hot(rng: &mut ChaCha8Rng, noise: &Normal<f64>, len: usize, hot: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len)
        .map(|i| {
            let base = if i == hot { 1.0 } else { 0.0 };
            (base + noise.sample(rng)).clamp(0.0, 1.0)
        })
        .collect();
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        v = (0..len).map(|i| if i == hot { 1.0 } else { 0.0 }).collect();
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[Concept]) -> BTreeSet<Concept> {
        xs.iter().copied().collect()
    }

    fn world(sigma: f64) -> LatentWorld {
        LatentWorld::new(
            set(&[0, 1, 2, 3, 4]),
            BTreeMap::from([("animal".into(), set(&[0, 1])), ("car".into(), set(&[2]))]),
            BTreeMap::from([
                ("cat".into(), set(&[0])),
                ("dog".into(), set(&[1])),
                ("road".into(), set(&[3])),
            ]),
            sigma,
            3,
            7,
        )
        .unwrap()
    }

    #[test]
    fn set_relations() {
        assert_eq!(
            set_relation(&set(&[1, 2]), &set(&[1, 2])),
            RelationType::Identity
        );
        assert_eq!(
            set_relation(&set(&[1, 2]), &set(&[1])),
            RelationType::Parent
        );
        assert_eq!(set_relation(&set(&[1]), &set(&[1, 2])), RelationType::Child);
        assert_eq!(
            set_relation(&set(&[1, 2]), &set(&[2, 3])),
            RelationType::Overlap
        );
        assert_eq!(set_relation(&set(&[1]), &set(&[2])), RelationType::None);
    }

    #[test]
    fn true_relations_of_small_world() {
        let g = world(0.0).true_relations();
        assert_eq!(g.len(), 2);
        assert_eq!(
            g.get("animal", "cat").unwrap().kind,
            Some(RelationType::Parent)
        );
        assert_eq!(
            g.get("animal", "dog").unwrap().kind,
            Some(RelationType::Parent)
        );
        assert!(g.get("car", "road").is_none());
    }

    #[test]
    fn noiseless_scores_are_one_hot() {
        let inst = world(0.0).generate_instances();
        assert_eq!(inst.b_records.len(), 9);
        assert_eq!(inst.a_records.len(), 9);
        for r in &inst.b_records {
            let expected = match r.true_label.as_str() {
                "cat" | "dog" => "animal",
                _ => BACKGROUND,
            };
            assert_eq!(r.foreign_scores[expected], 1.0);
            assert_eq!(r.foreign_scores.values().sum::<f64>(), 1.0);
            assert_eq!(r.self_score, 1.0);
        }
        let car: Vec<_> = inst
            .a_records
            .iter()
            .filter(|r| r.true_label == "car")
            .collect();
        assert!(car.iter().all(|r| r.foreign_scores[BACKGROUND] == 1.0));
    }

    #[test]
    fn noisy_scores_stay_normalized_and_deterministic() {
        let w = world(0.2);
        let inst = w.generate_instances();
        for r in inst.a_records.iter().chain(&inst.b_records) {
            assert!((r.foreign_scores.values().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.foreign_scores.values().all(|v| (0.0..=1.0).contains(v)));
            assert!((0.0..=1.0).contains(&r.self_score));
        }
        assert_eq!(inst, w.generate_instances());
        let ids: Vec<_> = inst
            .b_records
            .iter()
            .map(|r| r.instance_id.clone())
            .collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn invalid_worlds() {
        let shared = LatentWorld::new(
            set(&[0, 1]),
            BTreeMap::from([("x".into(), set(&[0])), ("y".into(), set(&[0, 1]))]),
            BTreeMap::from([("z".into(), set(&[0]))]),
            0.0,
            1,
            0,
        );
        assert!(shared.is_err());
        let empty = LatentWorld::new(
            set(&[0]),
            BTreeMap::from([("x".into(), set(&[]))]),
            BTreeMap::from([("z".into(), set(&[0]))]),
            0.0,
            1,
            0,
        );
        assert!(empty.is_err());
        assert!(LatentWorld::random(3, 4, 1, 0.0, 1, 0).is_err());
    }

    #[test]
    fn random_worlds_are_valid_and_seeded() {
        for seed in 0..20 {
            let w = LatentWorld::random(12, 5, 4, 0.1, 2, seed).unwrap();
            assert_eq!(w.space_a.len(), 5);
            assert_eq!(w.space_b.len(), 4);
            assert_eq!(w, LatentWorld::random(12, 5, 4, 0.1, 2, seed).unwrap());
        }
    }
}
