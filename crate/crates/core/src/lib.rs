//! Query-by-example word spotting over binarized page images.
//!
//! Pages are segmented into word boxes and each word is described by a
//! 93-component feature vector. Queries are ranked by L1 distance, refined
//! with Rocchio relevance feedback, and optionally searched in a whitened
//! PCA subspace.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod feedback;
pub mod font;
pub mod raster;
pub mod retrieval;
pub mod subspace;
pub mod synth;

pub use corpus::{CorpusIndex, IndexBuilder, IndexError, IngestError, WordEntry};
pub use eval::{EvalConfig, EvalError, EvalReport, Method};
pub use features::{FeatureError, WordBox, WordDescriptor, DESCRIPTOR_LEN};
pub use feedback::{FeedbackError, FeedbackSession, Judgment, RocchioParams, Strategy};
pub use raster::{PageImage, RasterError};
pub use retrieval::{rank, QueryVector, RankError, RankedList, RankedResult, Space};
pub use subspace::{fit_pca, PcaError, PcaModel, Retention};
pub use synth::{generate_synthetic_corpus, GenerationError, SyntheticCorpus};
