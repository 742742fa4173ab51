//! Experiment drivers: datasets, CLS caching, evaluation tables,
//! distortions, similarity reports and the config-driven pipeline.

pub mod cache;
pub mod config;
pub mod dataset;
pub mod distort;
pub mod eval;
pub mod pipeline;
pub mod reports;

pub use cache::{cache_primitive_cls, BundleCache, CacheKey};
pub use config::ExperimentConfig;
pub use dataset::{generate_synthetic_dataset, load_manifest, split, Dataset, Split};
pub use eval::{error_breakdown, eval_accuracy, reweight_image, ErrorReport, EvalRow, Pathway, Reference};
pub use pipeline::{run_experiment, RunSummary};
