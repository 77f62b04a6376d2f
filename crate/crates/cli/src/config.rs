use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempres_core::data::{CorpusOptions, SegmentRule, DEFAULT_CONTEXT_CHARS};
use tempres_core::graph::{DEFAULT_K_ENT, DEFAULT_K_MEN};
use tempres_core::metrics::{JaccardMode, ReportFormat};
use tempres_core::rag::chunk::{DEFAULT_MAX_CHARS, DEFAULT_OVERLAP};
use tempres_core::rag::client::ClientConfig;
use tempres_core::rag::{PromptVariant, QaRunConfig};
use tempres_core::synth::SynthConfig;
use tempres_core::train::{ContinualConfig, TrainerConfig, DEFAULT_RANK_N};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    /// JSON-lines vector file, or a directory holding `entities.temb` and
    /// `mentions.temb`.
    pub embeddings: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    /// Corpus-format file whose documents feed the retrieval index; falls
    /// back to `corpus`.
    pub documents: Option<PathBuf>,
    /// Prediction file written by `link`.
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimelineConfig {
    pub start: chrono::NaiveDate,
    pub months_per_segment: u32,
    pub segment_count: u32,
    pub train_segments: u32,
    pub context_chars: usize,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        let rule = SegmentRule::default();
        Self {
            start: rule.start,
            months_per_segment: rule.months_per_segment,
            segment_count: rule.segment_count,
            train_segments: rule.train_segments,
            context_chars: DEFAULT_CONTEXT_CHARS,
        }
    }
}

impl TimelineConfig {
    pub fn corpus_options(&self) -> CorpusOptions {
        CorpusOptions {
            rule: SegmentRule {
                start: self.start,
                months_per_segment: self.months_per_segment,
                segment_count: self.segment_count,
                train_segments: self.train_segments,
            },
            context_chars: self.context_chars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k_ent: usize,
    pub k_men: usize,
    pub rank_n: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k_ent: DEFAULT_K_ENT,
            k_men: DEFAULT_K_MEN,
            rank_n: DEFAULT_RANK_N,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Scale imported vectors to unit length.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub jaccard: JaccardMode,
    pub recall_ns: Vec<usize>,
    pub format: ReportFormat,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            jaccard: JaccardMode::Chars,
            recall_ns: vec![1, 2, 4, 8, 16, 32, 64],
            format: ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ResolverKind {
    /// Gold entities from the QA file.
    Gold,
    /// Majority prediction of the linker for the mention's surface form.
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClientKind {
    Http,
    /// Offline stub answering every question with its gold answer.
    GoldEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub variants: Vec<PromptVariant>,
    pub k: usize,
    pub chunk_chars: usize,
    pub chunk_overlap: usize,
    /// Dimension of the hashing embedder used for the retrieval index.
    pub embed_dim: usize,
    pub resolver: ResolverKind,
    pub client: ClientKind,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            variants: PromptVariant::ALL.to_vec(),
            k: QaRunConfig::default().k,
            chunk_chars: DEFAULT_MAX_CHARS,
            chunk_overlap: DEFAULT_OVERLAP,
            embed_dim: 512,
            resolver: ResolverKind::Surface,
            client: ClientKind::Http,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed for every random stream; overrides `trainer.seed`.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub paths: Paths,
    pub timeline: TimelineConfig,
    pub trainer: TrainerConfig,
    pub graph: GraphConfig,
    pub embeddings: EmbeddingConfig,
    pub metrics: MetricsConfig,
    pub qa: QaConfig,
    pub client: ClientConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            paths: Paths::default(),
            timeline: TimelineConfig::default(),
            trainer: TrainerConfig::default(),
            graph: GraphConfig::default(),
            embeddings: EmbeddingConfig::default(),
            metrics: MetricsConfig::default(),
            qa: QaConfig::default(),
            client: ClientConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parse a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let p = &mut config.paths;
        for slot in [
            &mut p.corpus,
            &mut p.kb,
            &mut p.embeddings,
            &mut p.qa,
            &mut p.documents,
            &mut p.predictions,
        ] {
            rebase(&base, slot);
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    /// Hash of the effective configuration, excluding where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn continual(&self) -> ContinualConfig {
        ContinualConfig {
            trainer: self.trainer.clone(),
            k_ent: self.graph.k_ent,
            k_men: self.graph.k_men,
            rank_n: self.graph.rank_n,
        }
    }

    pub fn qa_run(&self) -> QaRunConfig {
        QaRunConfig {
            k: self.qa.k,
            parallelism: self.client.parallelism,
            ..Default::default()
        }
    }
}

/// The path in `slot`, which must be set and exist.
pub fn require<'a>(slot: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    let Some(path) = slot else {
        bail!(
            "no {name} path given (flag --{} or [paths] {name})",
            name.replace('_', "-")
        );
    };
    if !path.exists() {
        bail!("{name} path {} does not exist", path.display());
    }
    Ok(path)
}
