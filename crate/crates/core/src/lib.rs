//! Cross-modal translation and alignment for multimodal survival analysis.
//!
//! Whole-slide-image patch embeddings and grouped genomic embeddings are
//! encoded per modality, bridged by a cross-modal attention module, translated
//! back by a pair of decoders and fused into discrete-time hazards. The crate
//! also carries the survival statistics needed to train and evaluate the
//! model (NLL survival loss, concordance, Kaplan-Meier, logrank), a cohort
//! file format with a synthetic generator, and the `cmta` command-line tool.

pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod fsio;
pub mod model;
pub mod survival;
pub mod tensor;
pub mod train;

pub use error::{CmtaError, Result};
pub use tensor::{GradientMap, Tensor};
