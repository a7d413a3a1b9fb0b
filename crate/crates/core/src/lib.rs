//! Discovery, typing and evaluation of relations between the label spaces
//! of two datasets.
//!
//! The pipeline aggregates cross-dataset predictions into directional score
//! matrices ([`aggregate`]), thresholds their average into a relation graph
//! ([`discover`]), and types each edge ([`typing`]) from the graph structure,
//! from score asymmetry, or with help from a language taxonomy
//! ([`taxonomy`], [`wordvec`]). [`groundtruth`] and [`eval`] build reference
//! relations and score predictions against them; [`synth`] generates worlds
//! with known answers.

pub mod aggregate;
pub mod apps;
pub mod discover;
pub mod error;
pub mod eval;
pub mod groundtruth;
pub mod io;
pub mod model;
pub mod synth;
pub mod taxonomy;
pub mod typing;
pub mod wordvec;

pub use error::{Error, Result};
pub use model::{
    DirectionalScoreMatrix, EmbeddingRecord, InstanceScoreRecord, LabelMatrix, LabelSpace,
    PipelineConfig, RelationEdge, RelationGraph, RelationType, ScoreMode, BACKGROUND,
};
