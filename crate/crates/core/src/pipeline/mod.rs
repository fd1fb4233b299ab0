pub mod config;
pub mod ingest;
pub mod report;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, PipelineConfig};
pub use ingest::{ingest_csv, IngestError};
pub use run::{
    evaluate, homogenize, prepare, run_pipeline, train_and_select, Evaluation, PipelineError, Prepared, RunOutput,
    Stage, Trained,
};
