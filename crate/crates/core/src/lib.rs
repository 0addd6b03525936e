//! Entity-centric curation of image-text data and the matching training,
//! decoding and evaluation utilities.

pub mod dataset;
pub mod decode;
pub mod embedding;
pub mod eval;
pub mod fixtures;
pub mod kb;
pub mod matching;
pub mod objective;
pub mod pipeline;
pub mod refine;
pub mod shards;

pub use dataset::{Task, TrainingExample};
pub use embedding::{EmbeddingMatrix, EmbeddingProvider, TrigramEmbedder};
pub use kb::{EntityId, EntityRecord, EntityVocabulary};
pub use matching::{CandidateAssignment, CaptionedImage};
pub use refine::{RefinedRecord, Stage};
