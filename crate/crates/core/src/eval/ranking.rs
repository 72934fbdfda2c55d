use std::collections::BTreeSet;

use super::{EvalError, Result};
use crate::data::{RunFile, ScoredDoc};
use crate::geometry;
use crate::trainer::EmbeddingTable;

fn lookup<'t>(table: &'t EmbeddingTable, id: &str) -> Result<&'t [f64]> {
    table
        .get(id)
        .ok_or_else(|| EvalError::UnknownId(id.to_string()))
}

/// Exhaustive cosine ranking of `doc_ids` for every query, cut at `k`.
pub fn full_rank<Q, D>(
    table: &EmbeddingTable,
    query_ids: &[Q],
    doc_ids: &[D],
    k: usize,
) -> Result<RunFile>
where
    Q: AsRef<str>,
    D: AsRef<str>,
{
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    let mut seen = BTreeSet::new();
    let docs = doc_ids
        .iter()
        .map(|d| {
            let d = d.as_ref();
            if !seen.insert(d) {
                return Err(EvalError::DuplicateDocument {
                    query: String::new(),
                    doc: d.to_string(),
                });
            }
            Ok((d, lookup(table, d)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut run = RunFile::new("full");
    for q in query_ids {
        let q = q.as_ref();
        let qv = lookup(table, q)?;
        let mut scored = docs
            .iter()
            .map(|(d, dv)| Ok(ScoredDoc::new(*d, geometry::cosine(qv, dv)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(crate::data::canonical_order);
        scored.truncate(k);
        run.insert(q, scored);
    }
    Ok(run)
}

/// Re-scores the top `depth` candidates of each baseline query by cosine.
pub fn rerank(baseline: &RunFile, table: &EmbeddingTable, depth: usize) -> Result<RunFile> {
    let mut run = RunFile::new("rerank");
    for (q, docs) in baseline.iter() {
        let qv = lookup(table, q)?;
        let scored = docs
            .iter()
            .take(depth)
            .map(|d| {
                Ok(ScoredDoc::new(
                    d.doc_id.clone(),
                    geometry::cosine(qv, lookup(table, &d.doc_id)?)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        run.insert(q, scored);
    }
    Ok(run)
}
