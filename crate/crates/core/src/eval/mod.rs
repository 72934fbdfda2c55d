//! Graded-relevance ranking metrics and the two retrieval harnesses.

mod metrics;
mod ranking;

use thiserror::Error;

pub use metrics::{
    binarize, evaluate_run, hits_at_k, ndcg_at_k, recall_at_k, write_evaluation_csv, Evaluation,
    Metric, MetricResult, MetricSpec, DEFAULT_BINARIZE_THRESHOLD,
};
pub use ranking::{full_rank, rerank};

use crate::geometry::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("document `{doc}` is ranked more than once for query `{query}`")]
    DuplicateDocument { query: String, doc: String },
    #[error("id `{0}` is not in the embedding table")]
    UnknownId(String),
    #[error("invalid metric `{0}`: expected ndcg@K, recall@K or hits@K")]
    InvalidMetric(String),
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mean nDCG@k of exhaustive cosine ranking over `doc_ids`.
pub fn full_rank_ndcg<Q, D>(
    table: &crate::trainer::EmbeddingTable,
    qrels: &crate::data::QrelsTable,
    query_ids: &[Q],
    doc_ids: &[D],
    k: usize,
) -> Result<f64>
where
    Q: AsRef<str>,
    D: AsRef<str>,
{
    let run = full_rank(table, query_ids, doc_ids, k)?;
    let eval = evaluate_run(&run, qrels, &[MetricSpec::ndcg(k)])?;
    Ok(eval.metrics[0].mean)
}
