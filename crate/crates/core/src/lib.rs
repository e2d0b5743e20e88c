//! Few-shot question generation from knowledge-base logical forms.
//!
//! The pipeline selects structurally diverse demonstrations from an
//! unlabeled pool, expands each into a nested subgraph / subquestion chain,
//! assembles a chain-of-thought prompt, queries a completion backend and
//! scores the extracted questions with BLEU-4, METEOR and ROUGE-L.

pub mod chain;
pub mod embed;
pub mod harness;
pub mod http;
pub mod llm;
pub mod logic_form;
pub mod metrics;
pub mod prompting;
pub mod retry;
pub mod select;
pub mod synthetic;

pub use embed::{cosine, embed_text, hash_embedder, EmbeddingProvider, EmbeddingVector, HashEmbedder};
pub use logic_form::{parse, serialize, skeletonize, substitute_entities, LogicalForm};
