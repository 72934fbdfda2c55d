//! Triplet, TREC qrels/run and synthetic corpus handling.

mod synthetic;
mod trec;
mod triplets;

use std::path::PathBuf;

use thiserror::Error;

pub use synthetic::{
    generate_synthetic, load_manifest, Manifest, Role, SyntheticCorpus, SyntheticSpec,
};
pub(crate) use trec::canonical_order;
pub use trec::{
    load_qrels, load_run, parse_qrels, parse_run, write_qrels, write_run, QrelsTable, RunFile,
    ScoredDoc, DEFAULT_MAX_GRADE,
};
pub use triplets::{load_triplets, parse_triplets, write_triplets, Triple, TripletDataset};

use crate::trainer::TableError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: positive and negative document are both `{doc}`")]
    SameDocument { line: usize, doc: String },
    #[error("duplicate judgment for query `{query}`, document `{doc}`")]
    DuplicateJudgment { query: String, doc: String },
    #[error(
        "grade {grade} for query `{query}`, document `{doc}` exceeds the declared maximum {max}"
    )]
    GradeOutOfRange {
        query: String,
        doc: String,
        grade: u32,
        max: u32,
    },
    #[error("query `{query}`: ranks are not contiguous from 1")]
    NonContiguousRanks { query: String },
    #[error("query `{query}`: document `{doc}` appears more than once")]
    DuplicateDocument { query: String, doc: String },
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn open(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create(path: &std::path::Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
}
