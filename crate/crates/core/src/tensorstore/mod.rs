//! Corpus manifests, binary activation dumps, token aggregation and
//! representation preprocessing.

mod dump;
mod format;
mod manifest;
mod preprocess;

pub use dump::{
    inspect_dump, read_dump, tensor_file_name, write_dump, ActivationSet, DumpMeta, DumpSummary,
    MANIFEST_FILE, META_FILE,
};
pub use format::{
    file_size, read_tensor, read_tensor_header, write_tensor, DType, TensorHeader, FORMAT_VERSION,
    MAGIC,
};
pub use manifest::{CorpusManifest, DatasetRole, Language, SentenceRecord, SentenceRole};
pub use preprocess::{
    aggregate, center_global, clip_and_normalize, clip_bounds_sorted, clip_quantiles, unit_normalize, Aggregation,
    RepresentationMatrix, CLIP_HI, CLIP_LO,
};
