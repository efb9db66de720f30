//! Synthetic benchmark domains, directory ingestion and evaluation.

pub mod eval;
pub mod handle;
pub mod ingest;
pub mod synth;

pub use eval::{evaluate, format_improvement, improvement_report, EvalReport};
pub use handle::{choose_subset, DatasetHandle, EpochSampler, LabelVisibility};
pub use ingest::{export_directory, ingest_directory, ingest_unlabeled, write_png};
pub use synth::{
    generate_domain, GazeRange, Illumination, ParametricEye, Renderer, SyntheticDomainSpec,
};
