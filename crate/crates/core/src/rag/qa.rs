use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::QaPair;
use crate::error::{Error, Result};
use crate::metrics::{qa_f1, PredictionRecord, QaScore};
use crate::rag::chunk::{ChunkId, DocumentChunk};
use crate::rag::client::{EmbeddingClient, GenerationClient};
use crate::rag::index::VectorIndex;
use crate::rag::prompt::{
    build_cot_second, build_prompt, join_context, GenerationParams, PromptFields, PromptVariant, ANSWER_PARAMS,
    COT_FIRST_PARAMS,
};

/// Chunk store plus vector index and the embedder used for queries.
pub struct Retrieval<'a> {
    pub embedder: &'a dyn EmbeddingClient,
    pub index: VectorIndex,
    pub chunks: BTreeMap<ChunkId, DocumentChunk>,
}

impl<'a> Retrieval<'a> {
    pub fn build(chunks: Vec<DocumentChunk>, embedder: &'a dyn EmbeddingClient) -> Result<Self> {
        let vectors = chunks
            .par_iter()
            .map(|c| Ok((c.id.clone(), embedder.embed(&c.text)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embedder,
            index: VectorIndex::build(vectors)?,
            chunks: chunks.into_iter().map(|c| (c.id.clone(), c)).collect(),
        })
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<(&DocumentChunk, f64)>> {
        let q = self.embedder.embed(query)?;
        Ok(self
            .index
            .retrieve(&q, k)?
            .into_iter()
            .map(|(id, s)| (&self.chunks[&id], s))
            .collect())
    }
}

/// Maps a QA pair's mention to an entity.
pub trait Resolver: Send + Sync {
    fn resolve(&self, pair: &QaPair) -> Result<String>;
}

/// Fixed answers keyed by `qa_id`.
pub struct TableResolver(pub BTreeMap<String, String>);

impl Resolver for TableResolver {
    fn resolve(&self, pair: &QaPair) -> Result<String> {
        self.0.get(&pair.qa_id).cloned().ok_or_else(|| Error::Client {
            stage: "resolve".into(),
            message: format!("no resolution for `{}`", pair.qa_id),
        })
    }
}

/// Resolves a mention to the entity most often predicted for the same
/// surface form (case-insensitive) by the linker, preferring predictions from
/// the pair's own segment. Ties go to the smaller entity id.
pub struct SurfaceResolver {
    by_segment: BTreeMap<(String, String), BTreeMap<String, usize>>,
    overall: BTreeMap<String, BTreeMap<String, usize>>,
}

impl SurfaceResolver {
    pub fn new(predictions: &[PredictionRecord]) -> Self {
        let mut by_segment: BTreeMap<(String, String), BTreeMap<String, usize>> = BTreeMap::new();
        let mut overall: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for p in predictions {
            let surface = p.surface.to_lowercase();
            *by_segment
                .entry((p.segment.clone(), surface.clone()))
                .or_default()
                .entry(p.prediction.clone())
                .or_default() += 1;
            *overall
                .entry(surface)
                .or_default()
                .entry(p.prediction.clone())
                .or_default() += 1;
        }
        Self { by_segment, overall }
    }

    fn vote(counts: &BTreeMap<String, usize>) -> Option<String> {
        // max_by_key keeps the last maximum, so scan in reverse id order
        counts.iter().rev().max_by_key(|(_, &n)| n).map(|(e, _)| e.clone())
    }
}

impl Resolver for SurfaceResolver {
    fn resolve(&self, pair: &QaPair) -> Result<String> {
        let surface = pair.mention.to_lowercase();
        self.by_segment
            .get(&(pair.segment.clone(), surface.clone()))
            .or_else(|| self.overall.get(&surface))
            .and_then(Self::vote)
            .ok_or_else(|| Error::Client {
                stage: "resolve".into(),
                message: format!("no linked mention with surface {:?}", pair.mention),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaRunConfig {
    /// Retrieved chunks per question.
    pub k: usize,
    pub answer: GenerationParams,
    pub cot_first: GenerationParams,
    pub parallelism: usize,
}

impl Default for QaRunConfig {
    fn default() -> Self {
        Self {
            k: 3,
            answer: ANSWER_PARAMS,
            cot_first: COT_FIRST_PARAMS,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPrediction {
    pub qa_id: String,
    pub variant: PromptVariant,
    /// Hash of the final prompt sent for the answer.
    pub prompt_sha256: String,
    pub prediction: String,
    pub f1: f64,
    pub hit: Option<bool>,
    pub resolution_ok: Option<bool>,
    pub segment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_first: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QaPrediction {
    pub fn score(&self) -> QaScore {
        QaScore {
            segment: self.segment.clone(),
            variant: self.variant.name().to_string(),
            f1: self.f1,
            hit: self.hit,
            resolution_ok: self.resolution_ok,
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn tagged(stage: &str, e: Error) -> Error {
    match e {
        Error::Client { message, .. } => Error::Client {
            stage: stage.to_string(),
            message,
        },
        other => Error::Client {
            stage: stage.to_string(),
            message: other.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotOutcome {
    pub first: String,
    pub second_prompt: String,
    pub answer: String,
}

/// Two-stage chain of thought: resolve the mention, then answer with the
/// resolution spliced into the question.
pub fn run_cot(
    question: &str,
    mention: &str,
    context: &str,
    client: &dyn GenerationClient,
    config: &QaRunConfig,
) -> Result<CotOutcome> {
    let first_prompt = build_prompt(
        PromptVariant::RalmCot,
        &PromptFields {
            question,
            mention: Some(mention),
            context: Some(context),
            entity: None,
        },
    )?;
    let first = client
        .generate(&first_prompt, config.cot_first)
        .map_err(|e| tagged("cot-first", e))?;
    let second_prompt = build_cot_second(question, mention, context, &first);
    let answer = client
        .generate(&second_prompt, config.answer)
        .map_err(|e| tagged("cot-second", e))?;
    Ok(CotOutcome {
        first,
        second_prompt,
        answer,
    })
}

fn answer_pair(
    pair: &QaPair,
    variant: PromptVariant,
    generator: &dyn GenerationClient,
    retrieval: Option<&Retrieval<'_>>,
    resolver: Option<&dyn Resolver>,
    config: &QaRunConfig,
) -> QaPrediction {
    let mut out = QaPrediction {
        qa_id: pair.qa_id.clone(),
        variant,
        prompt_sha256: String::new(),
        prediction: String::new(),
        f1: 0.0,
        hit: None,
        resolution_ok: None,
        segment: pair.segment.clone(),
        cot_first: None,
        error: None,
    };
    let mut run = || -> Result<()> {
        let mut context = None;
        if let Some(r) = retrieval {
            let hits = r.search(&pair.question, config.k).map_err(|e| tagged("retrieve", e))?;
            out.hit = pair
                .evidence_doc
                .as_ref()
                .map(|doc| hits.iter().any(|(c, _)| c.id.doc_id == *doc));
            if variant.uses_context() {
                let texts: Vec<&str> = hits.iter().map(|(c, _)| c.text.as_str()).collect();
                context = Some(join_context(&texts));
            }
        }
        let mut entity = None;
        if let Some(r) = resolver {
            match r.resolve(pair) {
                Ok(e) => {
                    out.resolution_ok = Some(e == pair.gold_entity);
                    entity = Some(e);
                }
                Err(e) if variant.uses_resolution() => return Err(tagged("resolve", e)),
                Err(_) => {}
            }
        }
        if variant == PromptVariant::RalmCot {
            let context = context.as_deref().unwrap_or_default();
            let cot = run_cot(&pair.question, &pair.mention, context, generator, config)?;
            out.prompt_sha256 = sha256_hex(&cot.second_prompt);
            out.cot_first = Some(cot.first);
            out.prediction = cot.answer;
        } else {
            let prompt = build_prompt(
                variant,
                &PromptFields {
                    question: &pair.question,
                    mention: Some(&pair.mention),
                    entity: entity.as_deref(),
                    context: context.as_deref(),
                },
            )?;
            out.prompt_sha256 = sha256_hex(&prompt);
            out.prediction = generator
                .generate(&prompt, config.answer)
                .map_err(|e| tagged("answer", e))?;
        }
        out.f1 = qa_f1(&out.prediction, &pair.answer);
        Ok(())
    };
    if let Err(e) = run() {
        out.error = Some(e.to_string());
    }
    out
}

/// Answer every pair with one prompt variant. Failures are recorded per pair
/// in `error`; only missing prerequisites abort the run.
pub fn run_qa(
    pairs: &[QaPair],
    variant: PromptVariant,
    generator: &dyn GenerationClient,
    retrieval: Option<&Retrieval<'_>>,
    resolver: Option<&dyn Resolver>,
    config: &QaRunConfig,
) -> Result<Vec<QaPrediction>> {
    if variant.uses_context() && retrieval.is_none() {
        return Err(Error::MissingField {
            variant: variant.name(),
            field: "index",
        });
    }
    if variant.uses_resolution() && resolver.is_none() {
        return Err(Error::MissingField {
            variant: variant.name(),
            field: "resolver",
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(pool.install(|| {
        pairs
            .par_iter()
            .map(|p| answer_pair(p, variant, generator, retrieval, resolver, config))
            .collect()
    }))
}
