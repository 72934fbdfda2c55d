//! TREC qrels (`qid 0 docid grade`) and run (`qid Q0 docid rank score tag`) files.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{open, DataError, Result};

pub const DEFAULT_MAX_GRADE: u32 = 3;

/// Graded judgments keyed by query, then document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrelsTable {
    max_grade: u32,
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Default for QrelsTable {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_GRADE)
    }
}

impl QrelsTable {
    pub fn new(max_grade: u32) -> Self {
        Self {
            max_grade,
            judgments: BTreeMap::new(),
        }
    }

    pub fn max_grade(&self) -> u32 {
        self.max_grade
    }

    pub fn insert(&mut self, query: &str, doc: &str, grade: u32) -> Result<()> {
        if grade > self.max_grade {
            return Err(DataError::GradeOutOfRange {
                query: query.into(),
                doc: doc.into(),
                grade,
                max: self.max_grade,
            });
        }
        let docs = self.judgments.entry(query.to_string()).or_default();
        if docs.contains_key(doc) {
            return Err(DataError::DuplicateJudgment {
                query: query.into(),
                doc: doc.into(),
            });
        }
        docs.insert(doc.to_string(), grade);
        Ok(())
    }

    pub fn grade(&self, query: &str, doc: &str) -> Option<u32> {
        self.judgments.get(query)?.get(doc).copied()
    }

    pub fn query(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    pub fn contains_query(&self, query: &str) -> bool {
        self.judgments.contains_key(query)
    }

    /// Query ids in ascending order.
    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    /// Judgments of the listed queries only.
    pub fn restrict<S: AsRef<str>>(&self, queries: &[S]) -> Self {
        let keep: BTreeSet<&str> = queries.iter().map(AsRef::as_ref).collect();
        Self {
            max_grade: self.max_grade,
            judgments: self
                .judgments
                .iter()
                .filter(|(q, _)| keep.contains(q.as_str()))
                .map(|(q, d)| (q.clone(), d.clone()))
                .collect(),
        }
    }
}

pub fn parse_qrels<R: Read>(r: R, max_grade: u32) -> Result<QrelsTable> {
    let mut table = QrelsTable::new(max_grade);
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, doc, grade] = fields[..] else {
            return Err(DataError::Malformed {
                line: n + 1,
                message: format!(
                    "expected `qid 0 docid grade`, found {} fields",
                    fields.len()
                ),
            });
        };
        let grade: u32 = grade.parse().map_err(|_| DataError::Malformed {
            line: n + 1,
            message: format!("grade `{grade}` is not a non-negative integer"),
        })?;
        table.insert(q, doc, grade)?;
    }
    Ok(table)
}

pub fn load_qrels(path: &Path, max_grade: u32) -> Result<QrelsTable> {
    parse_qrels(open(path)?, max_grade)
}

pub fn write_qrels<W: Write>(qrels: &QrelsTable, mut w: W) -> std::io::Result<()> {
    for (q, docs) in &qrels.judgments {
        for (d, g) in docs {
            writeln!(w, "{q} 0 {d} {g}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Score descending, then doc id ascending.
pub(crate) fn canonical_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Ranked results per query, always held in canonical order; rank is the
/// 1-based position in each list.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    tag: String,
    queries: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Sets the ranking of `query`, sorting it canonically.
    pub fn insert(&mut self, query: impl Into<String>, mut docs: Vec<ScoredDoc>) {
        docs.sort_by(canonical_order);
        self.queries.insert(query.into(), docs);
    }

    pub fn ranking(&self, query: &str) -> Option<&[ScoredDoc]> {
        self.queries.get(query).map(Vec::as_slice)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d.as_slice()))
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Top-`k` documents of every query.
    pub fn truncate(&self, k: usize) -> Self {
        Self {
            tag: self.tag.clone(),
            queries: self
                .queries
                .iter()
                .map(|(q, d)| (q.clone(), d.iter().take(k).cloned().collect()))
                .collect(),
        }
    }
}

pub fn write_run<W: Write>(run: &RunFile, mut w: W) -> std::io::Result<()> {
    for (q, docs) in &run.queries {
        for (rank, d) in docs.iter().enumerate() {
            writeln!(
                w,
                "{q} Q0 {} {} {} {}",
                d.doc_id,
                rank + 1,
                d.score,
                run.tag
            )?;
        }
    }
    Ok(())
}

/// Parses a run file. Ranks must be contiguous from 1 within each query.
/// Rankings whose scores disagree with their ranks are re-sorted canonically
/// with a warning.
pub fn parse_run<R: Read>(r: R) -> Result<RunFile> {
    let mut tag: Option<String> = None;
    let mut rows: BTreeMap<String, Vec<(usize, ScoredDoc)>> = BTreeMap::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, doc, rank, score, row_tag] = fields[..] else {
            return Err(DataError::Malformed {
                line: lineno,
                message: format!(
                    "expected `qid Q0 docid rank score tag`, found {} fields",
                    fields.len()
                ),
            });
        };
        let rank: usize = rank.parse().map_err(|_| DataError::Malformed {
            line: lineno,
            message: format!("rank `{rank}` is not a positive integer"),
        })?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| DataError::Malformed {
                line: lineno,
                message: format!("score `{score}` is not a finite number"),
            })?;
        tag.get_or_insert_with(|| row_tag.to_string());
        rows.entry(q.to_string())
            .or_default()
            .push((rank, ScoredDoc::new(doc, score)));
    }

    let mut run = RunFile::new(tag.unwrap_or_default());
    for (q, mut docs) in rows {
        docs.sort_by_key(|(rank, _)| *rank);
        if docs.iter().enumerate().any(|(i, (rank, _))| *rank != i + 1) {
            return Err(DataError::NonContiguousRanks { query: q });
        }
        let mut seen = BTreeSet::new();
        for (_, d) in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(DataError::DuplicateDocument {
                    query: q.clone(),
                    doc: d.doc_id.clone(),
                });
            }
        }
        let docs: Vec<ScoredDoc> = docs.into_iter().map(|(_, d)| d).collect();
        let canonical = docs
            .windows(2)
            .all(|w| canonical_order(&w[0], &w[1]) != Ordering::Greater);
        if !canonical {
            log::warn!("query `{q}`: ranks disagree with scores, re-sorting by score");
        }
        run.insert(q, docs);
    }
    Ok(run)
}

pub fn load_run(path: &Path) -> Result<RunFile> {
    parse_run(open(path)?)
}
