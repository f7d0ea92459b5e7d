//! Synthetic ground-truth arches and "pre-treatment" training pairs.

mod arch;
mod dataset;
mod perturb;
pub mod template;

pub use arch::{arch_layout, generate_jaw, ArchSpec, ToothPlacement};
pub use dataset::{
    build_dataset, generate_dataset, load_dataset, manifest_json, plan_corpus, read_manifest, read_record,
    write_record, z0_string, CorpusSpec, Dataset, DatasetManifest, RecordEntry, Split, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use perturb::{perturb, DatasetRecord, PerturbSpec};
