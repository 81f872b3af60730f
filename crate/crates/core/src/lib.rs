//! Style descriptors learned with a multi-label contrastive objective,
//! together with the tooling around them: caption curation and
//! near-duplicate merging, handcrafted desk-scale features, retrieval
//! evaluation, and prototype-based style scoring.

pub mod analysis;
pub mod curation;
pub mod error;
pub mod features;
pub mod model;
pub mod retrieval;
pub mod training;

pub use error::{Error, Result};
pub use model::{Dataset, EmbeddingRecord, LabelSet, LabelVocabulary};
