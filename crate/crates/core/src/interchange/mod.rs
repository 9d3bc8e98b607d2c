//! Domain types and file formats shared by every stage of the pipeline.

pub mod manifest;
pub mod npy;
pub mod types;

pub use manifest::{
    DatasetKind, DatasetManifest, GroundTruth, LoadedManifest, ManifestEntry, Split,
    MANIFEST_VERSION,
};
pub use npy::{load_matrix, save_matrix, Precision};
pub use types::{
    DiscretizedMask, Label, MethodId, PhonemeSegmentation, Posteriorgram, SaliencyMap, Segment,
    Spectrogram,
};
