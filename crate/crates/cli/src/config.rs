use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use conceptcode::corpus::{LabelScheme, SyntheticSpec, VariantDistribution};
use conceptcode::model::{ModelConfig, TokenPolicy};
use conceptcode::multitask::{AuxConfig, HeadKind, SharePoint, TrainerConfig, AUX_HIDDEN};

#[derive(Debug, Parser)]
#[command(name = "conceptcode", version, about = "Concept-augmented multi-label clinical coding")]
pub struct Cli {
    /// TOML file with optional [model], [aux], [trainer] and [synthetic]
    /// tables plus a top-level min_df. Flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the dictionary annotator (or import external annotations) over a corpus.
    Annotate(AnnotateArgs),
    /// Generate a synthetic corpus bundle.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint plus the training log.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the raw-codes baseline) and write metrics.json.
    Evaluate(EvaluateArgs),
    /// Train one multitask model per λ and write a CSV of dev metrics.
    SweepLambda(SweepArgs),
    /// Render the frequency-bucket bar chart or the phrases-per-concept histogram.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// documents.jsonl
    #[arg(long)]
    pub corpus: PathBuf,
    /// dictionary.tsv (phrase<TAB>code)
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// ontology.tsv used to validate dictionary codes
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Character-offset annotations from an external tool (JSONL); requires raw text in the corpus
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSchemeArg {
    NoisyOr,
    ConceptCodes,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Phrase variants per concept
    #[arg(long)]
    pub variants: Option<usize>,
    /// Fraction of tokens covered by annotations
    #[arg(long)]
    pub coverage: Option<f64>,
    #[arg(long)]
    pub concepts: Option<usize>,
    #[arg(long)]
    pub labels: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub mean_doc_length: Option<usize>,
    #[arg(long)]
    pub train_docs: Option<usize>,
    #[arg(long)]
    pub dev_docs: Option<usize>,
    #[arg(long)]
    pub test_docs: Option<usize>,
    /// Probability that a phrase is mapped to its parent code
    #[arg(long)]
    pub specificity_mismatch: Option<f64>,
    #[arg(long, value_enum)]
    pub label_scheme: Option<LabelSchemeArg>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// documents.jsonl
    #[arg(long)]
    pub corpus: PathBuf,
    /// annotations.jsonl
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// labels.txt, one code per line
    #[arg(long)]
    pub labels: PathBuf,
    /// split.json; without it documents are split by patient 80/10/10
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// ontology.tsv (child<TAB>parent)
    #[arg(long)]
    pub ontology: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxHeadArg {
    None,
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SharePointArg {
    Pre,
    Post,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// baseline, full-replace, linear-combination, dummy-concepts, concepts-only,
    /// concepts-only-concept-embeddings
    #[arg(long)]
    pub policy: Option<TokenPolicy>,
    #[arg(long)]
    pub gram: bool,
    #[arg(long)]
    pub overlap_attention: bool,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub conv_dim: Option<usize>,
    #[arg(long)]
    pub kernel_width: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub aux_head: Option<AuxHeadArg>,
    #[arg(long)]
    pub aux_hidden: Option<usize>,
    #[arg(long, value_enum)]
    pub share_point: Option<SharePointArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_df: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Part {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// checkpoint.json; omit with --raw-codes
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub part: Part,
    /// Needed only by policies that read annotations, --tagging and --raw-codes
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Refuse to evaluate unless the checkpoint's label space equals this file
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Refuse to evaluate unless the checkpoint has this vocabulary hash
    #[arg(long)]
    pub vocab_hash: Option<String>,
    /// Also report auxiliary tagging accuracy (needs --annotations)
    #[arg(long)]
    pub tagging: bool,
    /// Score annotator output directly instead of a model (needs --annotations and --labels)
    #[arg(long)]
    pub raw_codes: bool,
    /// Seed for sampling k predictions in the raw-codes baseline
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = conceptcode::eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// metrics.json
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated λ values; defaults to the nine-value grid
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// CSV path
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// F1 per frequency bucket from one or more metrics.json files
    Buckets,
    /// Phrases per concept from a stats.json written by simulate or annotate
    Histogram,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// SVG path
    #[arg(long)]
    pub output: PathBuf,
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub aux: Option<AuxConfig>,
    pub trainer: TrainerConfig,
    pub synthetic: Option<SyntheticSpec>,
    pub min_df: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text)?;
        Ok(cfg)
    }
}

pub const DEFAULT_MIN_DF: usize = 3;

/// Model, auxiliary and trainer settings after applying flags over the file.
#[derive(Debug, Clone, Serialize)]
pub struct TrainingSettings {
    pub model: ModelConfig,
    pub aux: Option<AuxConfig>,
    pub trainer: TrainerConfig,
    pub min_df: usize,
}

impl TrainingSettings {
    pub fn resolve(file: &FileConfig, args: &ModelArgs) -> anyhow::Result<Self> {
        let mut model = file.model.clone();
        if let Some(p) = args.policy {
            model.policy = p;
        }
        model.gram |= args.gram;
        model.overlap_attention |= args.overlap_attention;
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = args.$field {
                    model.$field = v;
                }
            };
        }
        set!(embed_dim);
        set!(conv_dim);
        set!(kernel_width);
        set!(dropout);
        set!(learning_rate);
        set!(batch_size);
        set!(seed);
        model.validate()?;

        let mut aux = file.aux;
        match args.aux_head {
            Some(AuxHeadArg::None) => aux = None,
            Some(AuxHeadArg::Linear) => aux.get_or_insert_with(AuxConfig::default).head = HeadKind::Linear,
            Some(AuxHeadArg::Mlp) => {
                aux.get_or_insert_with(AuxConfig::default).head = HeadKind::Mlp {
                    hidden: args.aux_hidden.unwrap_or(AUX_HIDDEN),
                }
            }
            None => {}
        }
        if let Some(a) = aux.as_mut() {
            if let (HeadKind::Mlp { hidden }, Some(h)) = (&mut a.head, args.aux_hidden) {
                *hidden = h;
            }
            if let Some(sp) = args.share_point {
                a.share_point = match sp {
                    SharePointArg::Pre => SharePoint::PreConvolution,
                    SharePointArg::Post => SharePoint::PostConvolution,
                };
            }
            if let Some(l) = args.lambda {
                a.lambda = l;
            }
            a.validate()?;
        } else if args.lambda.is_some() || args.share_point.is_some() || args.aux_hidden.is_some() {
            anyhow::bail!(conceptcode::Error::Config(
                "--lambda, --share-point and --aux-hidden need an auxiliary head (--aux-head linear|mlp)".into()
            ));
        }

        let mut trainer = file.trainer.clone();
        if let Some(v) = args.max_epochs {
            trainer.max_epochs = v;
        }
        if let Some(v) = args.patience {
            trainer.patience = v;
        }
        Ok(Self {
            model,
            aux,
            trainer,
            min_df: args.min_df.or(file.min_df).unwrap_or(DEFAULT_MIN_DF),
        })
    }
}

pub fn resolve_synthetic(file: &FileConfig, args: &SimulateArgs) -> anyhow::Result<SyntheticSpec> {
    let mut spec = file.synthetic.clone().unwrap_or_default();
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.variants {
        spec.variants_per_concept = VariantDistribution::Fixed(v);
    }
    if let Some(v) = args.coverage {
        spec.coverage = v;
    }
    if let Some(v) = args.concepts {
        spec.concept_count = v;
    }
    if let Some(v) = args.labels {
        spec.label_count = v;
    }
    if let Some(v) = args.vocab_size {
        spec.vocab_size = v;
    }
    if let Some(v) = args.mean_doc_length {
        spec.mean_doc_length = v;
    }
    if let Some(v) = args.train_docs {
        spec.docs_per_split.train = v;
    }
    if let Some(v) = args.dev_docs {
        spec.docs_per_split.dev = v;
    }
    if let Some(v) = args.test_docs {
        spec.docs_per_split.test = v;
    }
    if let Some(v) = args.specificity_mismatch {
        spec.specificity_mismatch = v;
    }
    match args.label_scheme {
        Some(LabelSchemeArg::ConceptCodes) => spec.label_scheme = LabelScheme::ConceptCodes,
        Some(LabelSchemeArg::NoisyOr) if matches!(spec.label_scheme, LabelScheme::ConceptCodes) => {
            spec.label_scheme = LabelScheme::NoisyOr { concepts_per_label: 3 }
        }
        _ => {}
    }
    spec.validate()?;
    Ok(spec)
}
