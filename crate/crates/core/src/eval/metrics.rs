use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use super::{EvalError, Result};
use crate::data::{QrelsTable, RunFile};

/// Grades above this count as relevant for binary measures.
pub const DEFAULT_BINARIZE_THRESHOLD: u32 = 1;

pub fn binarize(grade: u32, threshold: u32) -> bool {
    grade > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Ndcg,
    Recall,
    Hits,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Recall => "recall",
            Metric::Hits => "hits",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetricSpec {
    pub metric: Metric,
    pub k: usize,
    /// Only used by recall and hits; nDCG uses the graded judgments.
    pub threshold: u32,
}

impl MetricSpec {
    pub fn ndcg(k: usize) -> Self {
        Self {
            metric: Metric::Ndcg,
            k,
            threshold: DEFAULT_BINARIZE_THRESHOLD,
        }
    }

    pub fn recall(k: usize, threshold: u32) -> Self {
        Self {
            metric: Metric::Recall,
            k,
            threshold,
        }
    }

    pub fn hits(k: usize, threshold: u32) -> Self {
        Self {
            metric: Metric::Hits,
            k,
            threshold,
        }
    }

    /// Parses `ndcg@10`, `recall@1000` or `hits@100` (case-insensitive).
    pub fn parse(text: &str, threshold: u32) -> Result<Self> {
        let invalid = || EvalError::InvalidMetric(text.to_string());
        let (name, k) = text.split_once('@').ok_or_else(invalid)?;
        let k: usize = k.parse().map_err(|_| invalid())?;
        if k == 0 {
            return Err(EvalError::ZeroCutoff);
        }
        let metric = match name.to_ascii_lowercase().as_str() {
            "ndcg" => Metric::Ndcg,
            "recall" | "r" => Metric::Recall,
            "hits" => Metric::Hits,
            _ => return Err(invalid()),
        };
        Ok(Self {
            metric,
            k,
            threshold,
        })
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.metric.name(), self.k)
    }
}

fn check_unique<S: AsRef<str>>(ranked: &[S]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for d in ranked {
        if !seen.insert(d.as_ref()) {
            return Err(EvalError::DuplicateDocument {
                query: String::new(),
                doc: d.as_ref().to_string(),
            });
        }
    }
    Ok(())
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// nDCG@k with gain `2^grade − 1` and discount `1/log2(rank + 1)`.
///
/// Returns `None` when the ideal DCG is zero (nothing with a positive grade
/// is judged), so the caller can leave the query out of the mean.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranked: &[S],
    judgments: &BTreeMap<String, u32>,
    k: usize,
) -> Result<Option<f64>> {
    check_unique(ranked)?;
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judgments.get(d.as_ref()).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judgments.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .sum();
    Ok((idcg > 0.0).then(|| dcg / idcg))
}

fn relevant_set(judgments: &BTreeMap<String, u32>, threshold: u32) -> BTreeSet<&str> {
    judgments
        .iter()
        .filter(|(_, &g)| binarize(g, threshold))
        .map(|(d, _)| d.as_str())
        .collect()
}

/// Fraction of relevant documents retrieved in the top `k`; `None` when the
/// query has no relevant documents.
pub fn recall_at_k<S: AsRef<str>>(
    ranked: &[S],
    judgments: &BTreeMap<String, u32>,
    k: usize,
    threshold: u32,
) -> Result<Option<f64>> {
    check_unique(ranked)?;
    let relevant = relevant_set(judgments, threshold);
    if relevant.is_empty() {
        return Ok(None);
    }
    let found = ranked
        .iter()
        .take(k)
        .filter(|d| relevant.contains(d.as_ref()))
        .count();
    Ok(Some(found as f64 / relevant.len() as f64))
}

/// Number of relevant documents in the top `k`.
pub fn hits_at_k<S: AsRef<str>>(
    ranked: &[S],
    judgments: &BTreeMap<String, u32>,
    k: usize,
    threshold: u32,
) -> Result<usize> {
    check_unique(ranked)?;
    Ok(ranked
        .iter()
        .take(k)
        .filter(|d| {
            judgments
                .get(d.as_ref())
                .is_some_and(|&g| binarize(g, threshold))
        })
        .count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    pub spec: MetricSpec,
    /// Evaluated queries in ascending id order.
    pub per_query: Vec<(String, f64)>,
    /// Mean over `per_query`, 0 when no query could be evaluated.
    pub mean: f64,
    /// Queries without any relevant (or positively graded) document.
    pub excluded: Vec<String>,
}

impl MetricResult {
    pub fn score(&self, query: &str) -> Option<f64> {
        self.per_query
            .iter()
            .find(|(q, _)| q == query)
            .map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Vec<MetricResult>,
    /// Run queries without judgments.
    pub skipped: Vec<String>,
}

/// Scores every judged query of `qrels`; queries absent from the run get an
/// empty ranking.
pub fn evaluate_run(run: &RunFile, qrels: &QrelsTable, specs: &[MetricSpec]) -> Result<Evaluation> {
    let skipped: Vec<String> = run
        .queries()
        .filter(|q| !qrels.contains_query(q))
        .map(str::to_string)
        .collect();
    for q in &skipped {
        log::warn!("query `{q}` is in the run but has no judgments; skipped");
    }

    let mut metrics = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut per_query = Vec::new();
        let mut excluded = Vec::new();
        for q in qrels.queries() {
            let judgments = qrels.query(q).expect("query listed by qrels");
            let ranked: Vec<&str> = run
                .ranking(q)
                .unwrap_or(&[])
                .iter()
                .map(|d| d.doc_id.as_str())
                .collect();
            let score = match spec.metric {
                Metric::Ndcg => ndcg_at_k(&ranked, judgments, spec.k),
                Metric::Recall => recall_at_k(&ranked, judgments, spec.k, spec.threshold),
                Metric::Hits => {
                    if relevant_set(judgments, spec.threshold).is_empty() {
                        Ok(None)
                    } else {
                        hits_at_k(&ranked, judgments, spec.k, spec.threshold)
                            .map(|h| Some(h as f64))
                    }
                }
            }
            .map_err(|e| match e {
                EvalError::DuplicateDocument { doc, .. } => EvalError::DuplicateDocument {
                    query: q.to_string(),
                    doc,
                },
                other => other,
            })?;
            match score {
                Some(s) => per_query.push((q.to_string(), s)),
                None => excluded.push(q.to_string()),
            }
        }
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.iter().map(|(_, s)| s).sum::<f64>() / per_query.len() as f64
        };
        metrics.push(MetricResult {
            spec: *spec,
            per_query,
            mean,
            excluded,
        });
    }
    Ok(Evaluation { metrics, skipped })
}

/// CSV `query_id,metric,k,score` with a trailing `ALL` row per metric.
pub fn write_evaluation_csv<W: Write>(eval: &Evaluation, mut w: W) -> std::io::Result<()> {
    writeln!(w, "query_id,metric,k,score")?;
    for m in &eval.metrics {
        let name = m.spec.metric.name();
        for (q, s) in &m.per_query {
            writeln!(w, "{q},{name},{},{s}", m.spec.k)?;
        }
        writeln!(w, "ALL,{name},{},{}", m.spec.k, m.mean)?;
    }
    Ok(())
}
