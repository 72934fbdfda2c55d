use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{open, DataError, Result};
use crate::trainer::table::valid_id;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub query: String,
    pub positive: String,
    pub negative: String,
}

impl Triple {
    pub fn new(
        query: impl Into<String>,
        positive: impl Into<String>,
        negative: impl Into<String>,
    ) -> Self {
        Self {
            query: query.into(),
            positive: positive.into(),
            negative: negative.into(),
        }
    }
}

/// Ordered training triples. Order is the file order and is never changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletDataset {
    triples: Vec<Triple>,
}

impl TripletDataset {
    pub fn new(triples: Vec<Triple>) -> Result<Self> {
        for (n, t) in triples.iter().enumerate() {
            check_triple(t, n + 1)?;
        }
        Ok(Self { triples })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }
}

fn check_triple(t: &Triple, line: usize) -> Result<()> {
    for id in [&t.query, &t.positive, &t.negative] {
        if !valid_id(id) {
            return Err(DataError::Malformed {
                line,
                message: format!("invalid id `{id}`"),
            });
        }
    }
    if t.positive == t.negative {
        return Err(DataError::SameDocument {
            line,
            doc: t.positive.clone(),
        });
    }
    Ok(())
}

/// Reads `qid<TAB>pos_id<TAB>neg_id` rows.
pub fn parse_triplets<R: Read>(r: R) -> Result<TripletDataset> {
    let mut triples = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [q, p, neg] = fields[..] else {
            return Err(DataError::Malformed {
                line: lineno,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let t = Triple::new(q, p, neg);
        check_triple(&t, lineno)?;
        triples.push(t);
    }
    Ok(TripletDataset { triples })
}

pub fn load_triplets(path: &Path) -> Result<TripletDataset> {
    parse_triplets(open(path)?)
}

pub fn write_triplets<W: Write>(data: &TripletDataset, mut w: W) -> std::io::Result<()> {
    for t in data.iter() {
        writeln!(w, "{}\t{}\t{}", t.query, t.positive, t.negative)?;
    }
    Ok(())
}
