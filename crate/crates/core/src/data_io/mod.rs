//! Dataset loading and mini-batching.

mod batches;
mod corpus;
mod idx;
pub mod synth;

pub use batches::{batches, Batch};
pub use corpus::{load_corpus, CharCorpus, Sequence};
pub use idx::{idx_paths, load_idx, write_idx, ImageDataset, CLASSES, IMAGE_MAGIC, LABEL_MAGIC};
