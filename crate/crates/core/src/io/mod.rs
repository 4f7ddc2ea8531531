//! On-disk formats: embedding containers, label manifests and dump-backed
//! corpora.

mod container;
mod dump;
mod manifest;

pub use container::{ContainerHeader, ContainerReader, ContainerWriter, Record, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use dump::{write_stack_dump, DumpCorpus, ReplayStack};
pub use manifest::{
    manifest_report, validate_manifest, ClassBalance, LabelManifest, ManifestReport, ManifestRow, MANIFEST_HEADER,
};
