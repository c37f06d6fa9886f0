//! Metrics, multi-seed experiments over the two cold-start protocols,
//! significance testing and embedding dumps.

mod experiment;
mod metrics;
mod stats;

pub use experiment::{
    compare, dump_embeddings, evaluate, make_split, read_embeddings, run_experiment, run_seed, train, write_embeddings,
    EmbeddingRecord, Evaluation, EventResult, EventSummary, ExperimentConfig, ExperimentReport, Method, Protocol,
    SeedResult, SplitTag, Summary, DEFAULT_SEEDS,
};
pub use metrics::{confusion, mean_std, metrics, ConfusionMatrix, Metrics};
pub use stats::{paired_t_test, regularized_incomplete_beta, student_t_two_sided, TTest};
