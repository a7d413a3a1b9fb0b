//! `labelrel` command-line interface: every pipeline stage as a subcommand
//! reading and writing plain files.

mod commands;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelrel::model::PixelReduction;
use labelrel::{Error, PipelineConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0} input violation(s) found")]
    Violations(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "labelrel",
    version,
    about = "Discover relations between the label spaces of two datasets"
)]
struct Cli {
    /// TOML file with pipeline parameters; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for record- and pair-level stages.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Manifest path (default: <out-dir>/<subcommand>.manifest.json).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Params {
    /// Link-score threshold for relation existence.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Score-asymmetry threshold (> 1).
    #[arg(long = "T")]
    pub t: Option<f64>,
    /// Taxonomy boost factor for link scores.
    #[arg(long)]
    pub n: Option<f64>,
    /// Taxonomy factor applied to T.
    #[arg(long)]
    pub m: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct Spaces {
    /// labelspace.json of dataset A.
    #[arg(long)]
    pub labels_a: PathBuf,
    /// labelspace.json of dataset B.
    #[arg(long)]
    pub labels_b: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct Directional {
    /// Directional scores S_{a→b} (directional.json).
    #[arg(long)]
    pub directional_ab: PathBuf,
    /// Directional scores S_{b→a} (directional.json).
    #[arg(long)]
    pub directional_ba: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pixel,
    Embedding,
}

impl From<Mode> for labelrel::ScoreMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Pixel => labelrel::ScoreMode::PixelProbability,
            Mode::Embedding => labelrel::ScoreMode::Embedding1nn,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Easy {
    #[arg(long, value_enum, default_value = "pixel")]
    pub mode: Mode,
    /// Use every instance, not only those correctly classified by their own model.
    #[arg(long)]
    pub no_easy_filter: bool,
    #[arg(long)]
    pub easy_threshold: Option<f64>,
    /// Skip the sum-to-one check on score vectors.
    #[arg(long)]
    pub no_normalization_check: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Max,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SetTheory,
    Asymmetry,
    Combined,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    RelationThreshold,
    AsymmetryT,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Typing {
    SetTheory,
    Asymmetry,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check instance score records against the two label spaces.
    Validate {
        #[command(flatten)]
        spaces: Spaces,
        /// Instances of B scored by A's model (scores.jsonl).
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value = "pixel")]
        mode: Mode,
        /// Skip the sum-to-one check (for max-reduced scores).
        #[arg(long)]
        no_normalization_check: bool,
    },
    /// Build S_{a→b} from instance scores, pixel scores or embeddings of B.
    Aggregate {
        #[command(flatten)]
        spaces: Spaces,
        #[command(flatten)]
        easy: Easy,
        /// Instances of B scored by A's model (scores.jsonl).
        #[arg(long, conflicts_with_all = ["pixel_scores", "embeddings"])]
        scores: Option<PathBuf>,
        /// Per-pixel scores of B instances under A's model.
        #[arg(long, requires = "label_order")]
        pixel_scores: Option<PathBuf>,
        /// Column order of --pixel-scores: {"labels": [...]}.
        #[arg(long)]
        label_order: Option<PathBuf>,
        /// Per-pixel scores of the same instances under B's own model.
        #[arg(long, requires = "own_label_order")]
        own_pixel_scores: Option<PathBuf>,
        #[arg(long)]
        own_label_order: Option<PathBuf>,
        #[arg(long, value_enum)]
        reduction: Option<Reduction>,
        /// Embeddings of B instances, classified by 1-NN against --reference-embeddings.
        #[arg(
            long,
            requires = "reference_embeddings",
            conflicts_with = "pixel_scores"
        )]
        embeddings: Option<PathBuf>,
        /// Labelled embeddings of A instances.
        #[arg(long)]
        reference_embeddings: Option<PathBuf>,
    },
    /// Link scores and untyped relations from both directions.
    Discover {
        #[command(flatten)]
        spaces: Spaces,
        #[command(flatten)]
        easy: Easy,
        /// Instances of B scored by A's model.
        #[arg(long)]
        scores_ab: PathBuf,
        /// Instances of A scored by B's model.
        #[arg(long)]
        scores_ba: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Assign relation types to discovered edges.
    ClassifyTypes {
        #[command(flatten)]
        spaces: Spaces,
        /// Untyped relations.jsonl (not used by --method combined).
        #[arg(long)]
        relations: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        directional_ab: Option<PathBuf>,
        #[arg(long)]
        directional_ba: Option<PathBuf>,
        /// Link scores over all pairs (needed by --method combined).
        #[arg(long)]
        link_scores: Option<PathBuf>,
        /// Taxonomy relations (needed by --method combined).
        #[arg(long)]
        taxonomy_relations: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Taxonomy relation types and strengths for all label pairs.
    TaxonomyRelate {
        #[command(flatten)]
        spaces: Spaces,
        #[arg(long)]
        taxonomy: PathBuf,
        /// Map labels without a synset to the `__unmapped__` sentinel.
        #[arg(long)]
        allow_unmapped: bool,
    },
    /// Word-embedding similarity of all label pairs, typed by the set-theory rules.
    EmbedRelate {
        #[command(flatten)]
        spaces: Spaces,
        /// word_vectors.tsv
        #[arg(long)]
        word_vectors: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Visual link scores boosted and typed with taxonomy relations.
    Combine {
        #[command(flatten)]
        spaces: Spaces,
        #[command(flatten)]
        directional: Directional,
        #[arg(long)]
        link_scores: PathBuf,
        #[arg(long)]
        taxonomy_relations: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Sweep one parameter and keep the value with the best type accuracy.
    Calibrate {
        #[command(flatten)]
        spaces: Spaces,
        #[arg(long, value_enum)]
        param: Param,
        /// `start:stop:step` (inclusive) or a comma-separated list.
        #[arg(long)]
        grid: String,
        /// Typed reference relations.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        link_scores: PathBuf,
        #[arg(long)]
        directional_ab: Option<PathBuf>,
        #[arg(long)]
        directional_ba: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "asymmetry")]
        typing: Typing,
        #[command(flatten)]
        params: Params,
    },
    /// Relations between one dataset and the intermediate space from relabel counts.
    GtDerive {
        /// relabels.jsonl
        #[arg(long)]
        relabels: PathBuf,
        /// Name of the original dataset.
        #[arg(long)]
        dataset: String,
        /// Name of the intermediate label space.
        #[arg(long)]
        intermediate: String,
        /// overrides.json
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
    /// Compose A↔M and B↔M relations into A↔B ground truth.
    GtCompose {
        #[command(flatten)]
        spaces: Spaces,
        #[arg(long)]
        intermediate: String,
        /// Typed A↔M relations.
        #[arg(long)]
        am: PathBuf,
        /// Typed B↔M relations.
        #[arg(long)]
        bm: PathBuf,
    },
    /// Precision-recall curve and average precision of a pair ranking.
    EvalPr {
        #[command(flatten)]
        spaces: Spaces,
        /// Pair strengths (missing pairs rank with strength 0).
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// Per-type accuracy and confusion matrix of typed predictions.
    EvalTypes {
        #[command(flatten)]
        spaces: Spaces,
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// Link strength of every B label and mean transfer gain per strength group.
    TransferStrength {
        #[command(flatten)]
        spaces: Spaces,
        #[arg(long)]
        directional_ab: PathBuf,
        #[arg(long)]
        relations: PathBuf,
        /// Only count edges of these types.
        #[arg(long, value_delimiter = ',')]
        types: Option<Vec<String>>,
        /// gains.csv (label,gain)
        #[arg(long, requires = "groups")]
        gains: Option<PathBuf>,
        /// Size of the low and top groups.
        #[arg(long = "group-size", id = "groups")]
        group_size: Option<usize>,
    },
    /// Relabel instances of an A label with its children in B.
    Refine {
        #[command(flatten)]
        spaces: Spaces,
        #[arg(long)]
        parent: String,
        /// Instances of A scored by B's model.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        relations: PathBuf,
        /// JSON lines {"instance_id": ..., "label": ...}
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// k-means over the embeddings of both datasets.
    Cluster {
        #[command(flatten)]
        spaces: Spaces,
        #[arg(long)]
        embeddings_a: PathBuf,
        #[arg(long)]
        embeddings_b: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic world with known relations.
    Synth {
        /// World definition (world.json) instead of a random one.
        #[arg(long, conflicts_with_all = ["concepts", "labels_a", "labels_b"])]
        world: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        concepts: usize,
        #[arg(long, default_value_t = 8)]
        labels_a: usize,
        #[arg(long, default_value_t = 8)]
        labels_b: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 50)]
        per_concept: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Aggregate { .. } => "aggregate",
            Command::Discover { .. } => "discover",
            Command::ClassifyTypes { .. } => "classify-types",
            Command::TaxonomyRelate { .. } => "taxonomy-relate",
            Command::EmbedRelate { .. } => "embed-relate",
            Command::Combine { .. } => "combine",
            Command::Calibrate { .. } => "calibrate",
            Command::GtDerive { .. } => "gt-derive",
            Command::GtCompose { .. } => "gt-compose",
            Command::EvalPr { .. } => "eval-pr",
            Command::EvalTypes { .. } => "eval-types",
            Command::TransferStrength { .. } => "transfer-strength",
            Command::Refine { .. } => "refine",
            Command::Cluster { .. } => "cluster",
            Command::Synth { .. } => "synth",
        }
    }

    fn params(&self) -> Option<&Params> {
        match self {
            Command::Discover { params, .. }
            | Command::ClassifyTypes { params, .. }
            | Command::EmbedRelate { params, .. }
            | Command::Combine { params, .. }
            | Command::Calibrate { params, .. } => Some(params),
            _ => None,
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                line: e.span().map_or(0, |s| {
                    text[..s.start].bytes().filter(|&b| b == b'\n').count() + 1
                }),
                message: e.message().to_string(),
            })?
        }
        None => PipelineConfig::default(),
    };
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    if let Some(p) = cli.command.params() {
        if let Some(v) = p.threshold {
            config.relation_threshold = v;
        }
        if let Some(v) = p.t {
            config.asymmetry_t = v;
        }
        if let Some(v) = p.n {
            config.taxonomy_boost_n = v;
        }
        if let Some(v) = p.m {
            config.taxonomy_t_factor_m = v;
        }
    }
    match &cli.command {
        Command::Aggregate {
            easy, reduction, ..
        } => {
            if let Some(v) = easy.easy_threshold {
                config.easy_threshold = v;
            }
            if let Some(r) = reduction {
                config.aggregation_mode = match r {
                    Reduction::Mean => PixelReduction::Mean,
                    Reduction::Max => PixelReduction::Max,
                };
            }
        }
        Command::Discover { easy, .. } => {
            if let Some(v) = easy.easy_threshold {
                config.easy_threshold = v;
            }
        }
        Command::Cluster { seed: Some(s), .. } | Command::Synth { seed: Some(s), .. } => {
            config.seed = *s
        }
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| {
            CliError::Usage(format!("cannot start {} workers: {e}", config.parallelism))
        })?;
    let mut run = run::Run::new(cli.command.name(), cli.out_dir.clone(), config, args);
    if let Some(path) = &cli.config {
        run.input(path);
    }
    let manifest = cli.manifest.clone();
    let outcome = pool.install(|| commands::dispatch(cli.command, &mut run));
    match outcome {
        Ok(()) => {
            run.write_manifest(manifest.as_deref())?;
            Ok(())
        }
        Err(CliError::Violations(n)) => {
            run.write_manifest(manifest.as_deref())?;
            Err(CliError::Violations(n))
        }
        Err(e) => Err(e),
    }
}

pub fn read_space(run: &mut run::Run, path: &Path) -> Result<labelrel::LabelSpace, CliError> {
    Ok(labelrel::io::read_json(run.input(path))?)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli, args.into_iter().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
