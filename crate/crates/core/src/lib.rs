//! Training and evaluation toolkit for low-bit quantized word embeddings.
//!
//! The library learns word vectors with the CBOW negative-sampling objective
//! and, optionally, a deterministic quantization function inserted into the
//! loss. Gradients pass through the quantizer unchanged (straight-through),
//! so the full-precision parameters keep training while the optimized
//! quantities — and the vectors finally written to disk — are constrained to
//! 2 or 4 representable values per parameter (1 or 2 bits).
//!
//! Modules:
//! - [`corpus`]: text normalization, vocabulary construction, subsampled
//!   training windows.
//! - [`sampler`]: smoothed unigram negative-sampling distribution.
//! - [`quantize`]: the 1- and 2-bit quantizers, straight-through gradient,
//!   and the bit-packed row codec.
//! - [`trainer`]: lock-free parallel SGD over the (quantized) CBOW objective.
//! - [`vectors`]: finalized word vectors with text and packed file formats.
//! - [`eval`]: word-similarity, word-analogy, and nearest-neighbor scoring.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod quantize;
pub mod sampler;
pub mod trainer;
pub mod vectors;

pub use corpus::{TrainingWindow, Vocabulary};
pub use error::{Error, Result};
pub use eval::{AnalogyDataset, AnalogyMethod, EvalResult, SimilarityDataset};
pub use quantize::{Bitlevel, QuantizationScheme};
pub use sampler::UnigramTable;
pub use trainer::{EmbeddingPair, TrainingConfig, TrainingReport};
pub use vectors::{Lexicon, WordVectors};
