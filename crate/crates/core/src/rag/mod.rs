//! Entity-centric retrieval-augmented QA: chunking, inner-product retrieval,
//! prompt assembly for the five prompt variants, client interfaces and the
//! QA-set generation parsers.

pub mod chunk;
pub mod client;
pub mod index;
pub mod prompt;
pub mod qa;
pub mod qagen;

pub use chunk::{chunk_document, chunk_documents, ChunkId, DocumentChunk};
pub use client::{EmbeddingClient, GenerationClient, GoldEchoClient, HashingEmbedder, HttpGenerationClient};
pub use index::VectorIndex;
pub use prompt::{build_prompt, PromptFields, PromptVariant};
pub use qa::{run_qa, QaPrediction, QaRunConfig, Resolver, Retrieval};
pub use qagen::parse_qa_gen;
