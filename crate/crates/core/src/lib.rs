//! Two-stage multimodal deepfake detection over precomputed modality
//! embeddings: per-modality projection into a shared space, contrastive
//! cross-modal alignment, self-attention refinement over the three modality
//! tokens, fusion and a sigmoid classifier, with EER/AUC/ACC scoring.

pub mod ablation;
pub mod checkpoint;
pub mod checksum;
pub mod config;
pub mod contrastive;
pub mod dataio;
pub mod error;
pub mod fusion;
pub mod init;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod profile;
pub mod projection;
pub mod refiner;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, FormatError, FormatErrorKind, Result};
