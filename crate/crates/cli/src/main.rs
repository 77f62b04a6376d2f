use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tempres_core::metrics::{JaccardMode, ReportFormat};
use tempres_core::train::Optimizer;

mod commands;
mod config;

use config::{ClientKind, ResolverKind, RunConfig};

/// Temporal entity resolution and entity-centric QA over a segmented corpus.
#[derive(Parser, Debug)]
#[command(name = "tempres", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a corpus and knowledge base.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Import a JSON-lines vector file as binary parameter tables.
    EmbedImport {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Scale every vector to unit length.
        #[arg(long)]
        normalize: bool,
    },
    /// Fine-tune the tables on the training segments.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        trainer: TrainerFlags,
    },
    /// Train, then cluster and link every test segment in timeline order.
    Link {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        trainer: TrainerFlags,
        #[command(flatten)]
        graph: GraphFlags,
        /// How surfaces and names are compared for the Jaccard bins.
        #[arg(long, value_enum)]
        jaccard: Option<JaccardArg>,
    },
    /// Score prediction files written by `link` and `qa`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Linking predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// QA predictions; repeatable.
        #[arg(long = "qa-predictions")]
        qa_predictions: Vec<PathBuf>,
        /// Recall cut-offs, comma separated.
        #[arg(long, value_delimiter = ',')]
        recall_n: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Answer the QA pairs with one or more prompt variants.
    Qa {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Linking predictions used by the surface resolver.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Prompt variants, comma separated (LLM, LLM-ER, RaLM, RaLM-CoT, RaLM-ER).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long, value_enum)]
        client: Option<ClientKind>,
        #[arg(long, value_enum)]
        resolver: Option<ResolverKind>,
        /// Retrieved chunks per question.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Convert a metrics file to JSON or CSV.
    Report {
        #[command(flatten)]
        common: Common,
        /// Metrics file written by `eval`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Destination; defaults to `report.<format>` in the output directory.
        #[arg(long)]
        to: Option<PathBuf>,
    },
    /// Run the synthetic drift benchmark on seeds `seed..seed+N`.
    SynthBench {
        #[command(flatten)]
        common: Common,
        /// Number of seeds.
        #[arg(long)]
        seeds: Option<u64>,
        /// Also write the first seed's dataset (corpus, kb, vectors) here.
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Inputs {
    /// Corpus file (JSON lines).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Knowledge-base file (JSON lines).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// JSON-lines vector file or directory of binary tables.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// QA pairs (JSON lines).
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Documents for the retrieval index; defaults to the corpus.
    #[arg(long)]
    documents: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct TrainerFlags {
    /// Pruning threshold on edge weights.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Weight of the entity embedding in a cluster representation.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate.
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Negatives per mention.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Most mentions averaged into a cluster representation.
    #[arg(long)]
    mention_cap: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(Args, Debug, Clone)]
struct GraphFlags {
    /// Entity neighbours per mention in the inference graph.
    #[arg(long)]
    k_ent: Option<usize>,
    /// Mention neighbours per mention in the inference graph.
    #[arg(long)]
    k_men: Option<usize>,
    /// Length of each ranked candidate list.
    #[arg(long)]
    rank_n: Option<usize>,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum OptimizerArg {
    Gd,
    Adam,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum JaccardArg {
    Chars,
    Bigrams,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        set(&mut c.output_dir, self.out.clone());
        c.trainer.seed = c.seed;
        Ok(c)
    }
}

impl Inputs {
    fn apply(&self, c: &mut RunConfig) {
        let p = &mut c.paths;
        set_opt(&mut p.corpus, self.corpus.clone());
        set_opt(&mut p.kb, self.kb.clone());
        set_opt(&mut p.embeddings, self.embeddings.clone());
        set_opt(&mut p.qa, self.qa.clone());
        set_opt(&mut p.documents, self.documents.clone());
    }
}

impl TrainerFlags {
    fn apply(&self, c: &mut RunConfig) {
        let t = &mut c.trainer;
        set_opt(&mut t.lambda, self.lambda);
        set(&mut t.alpha, self.alpha);
        set(&mut t.epochs, self.epochs);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.k, self.k);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.mention_cap, self.mention_cap);
        set(
            &mut t.optimizer,
            self.optimizer.map(|o| match o {
                OptimizerArg::Gd => Optimizer::GradientDescent,
                OptimizerArg::Adam => Optimizer::Adam,
            }),
        );
    }
}

impl GraphFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.graph.k_ent, self.k_ent);
        set(&mut c.graph.k_men, self.k_men);
        set(&mut c.graph.rank_n, self.rank_n);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { common, inputs } => {
            let mut c = common.resolve()?;
            inputs.apply(&mut c);
            commands::ingest(&c)
        }
        Command::EmbedImport {
            common,
            inputs,
            normalize,
        } => {
            let mut c = common.resolve()?;
            inputs.apply(&mut c);
            c.embeddings.normalize |= normalize;
            commands::embed_import(&c)
        }
        Command::Train {
            common,
            inputs,
            trainer,
        } => {
            let mut c = common.resolve()?;
            inputs.apply(&mut c);
            trainer.apply(&mut c);
            commands::train(&c)
        }
        Command::Link {
            common,
            inputs,
            trainer,
            graph,
            jaccard,
        } => {
            let mut c = common.resolve()?;
            inputs.apply(&mut c);
            trainer.apply(&mut c);
            graph.apply(&mut c);
            set(
                &mut c.metrics.jaccard,
                jaccard.map(|j| match j {
                    JaccardArg::Chars => JaccardMode::Chars,
                    JaccardArg::Bigrams => JaccardMode::Bigrams,
                }),
            );
            commands::link(&c)
        }
        Command::Eval {
            common,
            predictions,
            qa_predictions,
            recall_n,
            format,
        } => {
            let mut c = common.resolve()?;
            set_opt(&mut c.paths.predictions, predictions);
            set(&mut c.metrics.recall_ns, recall_n);
            set(&mut c.metrics.format, format.map(Into::into));
            commands::eval(&c, &qa_predictions)
        }
        Command::Qa {
            common,
            inputs,
            predictions,
            variants,
            client,
            resolver,
            k,
        } => {
            let mut c = common.resolve()?;
            inputs.apply(&mut c);
            set_opt(&mut c.paths.predictions, predictions);
            if let Some(names) = variants {
                c.qa.variants = names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?;
            }
            set(&mut c.qa.client, client);
            set(&mut c.qa.resolver, resolver);
            set(&mut c.qa.k, k);
            commands::qa(&c)
        }
        Command::Report {
            common,
            input,
            format,
            to,
        } => {
            let mut c = common.resolve()?;
            set(&mut c.metrics.format, format.map(Into::into));
            commands::report(&c, &input, to)
        }
        Command::SynthBench { common, seeds, export } => {
            let mut c = common.resolve()?;
            if common.seed.is_some() || seeds.is_some() {
                let count = seeds.unwrap_or(c.synth.seeds.len() as u64);
                c.synth.seeds = (c.seed..c.seed + count).collect();
            }
            commands::synth_bench(&c, export.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
