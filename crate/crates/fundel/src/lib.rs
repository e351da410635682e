//! Entity linking for funding organizations.
//!
//! The crate implements a complete linking pipeline over a funder knowledge
//! base:
//!
//! 1. [`kb`] — the funder registry (entity ids, names, countries).
//! 2. [`corpus`] — annotated documents with character-offset mention spans
//!    and IOB conversion for sequence tagging.
//! 3. [`tokenizer`] — a WordPiece-style subword tokenizer with exact
//!    character alignment, built from a corpus.
//! 4. [`encoder`] — a small BERT-style transformer encoder plus masked
//!    language-model pretraining utilities.
//! 5. [`mention`] — mention detection: domain-adaptive MLM pretraining and
//!    IOB fine-tuning, windowed inference, and tag-sequence decoding.
//! 6. [`stats`] — surface-form statistics (link probability, commonness)
//!    and the commonness baseline.
//! 7. [`biencoder`] — the dual-encoder candidate scorer with round-based
//!    hard-negative mining and precomputed entity embeddings.
//! 8. [`linker`] — feature extraction and the gradient-boosted
//!    entity-or-NIL selector, combined into document-level linking.
//! 9. [`eval`] — strong-match evaluation for detection, disambiguation and
//!    end-to-end linking, plus a small timing harness.
//!
//! All span arithmetic is in Unicode scalar values ("chars"), never bytes;
//! see [`corpus`] for the conventions. Training is deterministic for a fixed
//! seed: all randomness flows from explicitly seeded ChaCha generators and
//! tensors are materialized on the CPU.

pub mod biencoder;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod gbm;
pub mod kb;
pub mod linker;
pub mod mention;
pub mod nn;
pub mod stats;
pub mod tokenizer;

mod error;
mod jsonl;
mod similarity;

pub use biencoder::{
    train_biencoder, BiEncoder, BiEncoderConfig, CandidateScore, EntityEmbeddings, RoundSummary,
    TrainedBiEncoder,
};
pub use config::{EncoderSettings, PathsConfig, PipelineConfig, ARTIFACTS_ENV};
pub use corpus::{CorpusLoad, Document, EntityLabel, GoldAnnotation, IobTag, Span};
pub use encoder::{EncoderCheckpoint, EncoderConfig, TransformerEncoder};
pub use error::{Error, Result};
pub use eval::{LabeledSpan, MetricsReport, PrF1, Setting, TimingReport};
pub use gbm::{Gbm, GbmConfig};
pub use kb::{FunderEntity, Registry};
pub use linker::{
    decide, extract_features, train_selector, FeatureVector, LinkDecision, LinkedMention, Linker,
    SelectorConfig, SelectorModel,
};
pub use mention::{MdConfig, MdModel, MdOutcome, MentionSpan, TaggedToken, TaptConfig, TaptOutcome};
pub use similarity::{levenshtein, max_label_similarity, normalized_similarity};
pub use stats::SurfaceFormTable;
pub use tokenizer::{Token, Vocab, WordPieceTokenizer};
