//! Free embedding table: one trainable vector per query or document id.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("embedding table needs at least one id")]
    NoIds,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid id `{0}`: ids must be nonempty and contain no whitespace")]
    InvalidId(String),
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("row `{id}` has dimension {found}, expected {expected}")]
    Dimension {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("row `{0}` is a zero or non-finite vector")]
    Degenerate(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TableError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// i.i.d. normal entries with standard deviation `scale` (default `1/√D`).
    Gaussian { scale: Option<f64> },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Gaussian { scale: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    rows: IndexMap<String, Vec<f64>>,
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(char::is_whitespace)
}

impl EmbeddingTable {
    /// Deterministic table: rows are drawn in id order from a ChaCha stream
    /// seeded with `seed`.
    pub fn init<S: AsRef<str>>(
        ids: &[S],
        dim: usize,
        seed: u64,
        scheme: InitScheme,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(TableError::NoIds);
        }
        if dim == 0 {
            return Err(TableError::ZeroDim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = IndexMap::with_capacity(ids.len());
        match scheme {
            InitScheme::Gaussian { scale } => {
                let scale = scale.unwrap_or(1.0 / (dim as f64).sqrt());
                for id in ids {
                    let id = id.as_ref();
                    if !valid_id(id) {
                        return Err(TableError::InvalidId(id.to_string()));
                    }
                    let v: Vec<f64> = (0..dim)
                        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect();
                    if rows.insert(id.to_string(), v).is_some() {
                        return Err(TableError::DuplicateId(id.to_string()));
                    }
                }
            }
        }
        let table = Self { dim, seed, rows };
        table.check_rows()?;
        Ok(table)
    }

    pub fn from_rows<I>(dim: usize, seed: u64, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(TableError::ZeroDim);
        }
        let mut map = IndexMap::new();
        for (id, v) in rows {
            if !valid_id(&id) {
                return Err(TableError::InvalidId(id));
            }
            if v.len() != dim {
                return Err(TableError::Dimension {
                    id,
                    expected: dim,
                    found: v.len(),
                });
            }
            if map.contains_key(&id) {
                return Err(TableError::DuplicateId(id));
            }
            map.insert(id, v);
        }
        if map.is_empty() {
            return Err(TableError::NoIds);
        }
        let table = Self {
            dim,
            seed,
            rows: map,
        };
        table.check_rows()?;
        Ok(table)
    }

    fn check_rows(&self) -> Result<()> {
        for (id, v) in &self.rows {
            let n = crate::geometry::norm(v);
            if !(n > 0.0 && n.is_finite()) {
                return Err(TableError::Degenerate(id.clone()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.rows.get_index_of(id)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.rows[index]
    }

    pub fn id_at(&self, index: usize) -> &str {
        self.rows
            .get_index(index)
            .map(|(k, _)| k.as_str())
            .unwrap_or("")
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// TSV with a `#dim=D seed=S` header and one `id<TAB>v1<TAB>...<TAB>vD` row per id.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#dim={} seed={}", self.dim, self.seed)?;
        for (id, v) in &self.rows {
            write!(w, "{id}")?;
            for x in v {
                write!(w, "\t{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_tsv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("TSV output is UTF-8")
    }

    pub fn read_tsv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or(TableError::Parse {
            line: 1,
            message: "missing `#dim=D seed=S` header".into(),
        })??;
        let (dim, seed) = parse_header(&header)?;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let v = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|e| TableError::Parse {
                        line: lineno,
                        message: format!("bad value `{f}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((id, v));
        }
        Self::from_rows(dim, seed, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_tsv(File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn parse_header(header: &str) -> Result<(usize, u64)> {
    let bad = |message: String| TableError::Parse { line: 1, message };
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| bad(format!("expected `#dim=D seed=S`, got `{header}`")))?;
    let mut dim = None;
    let mut seed = None;
    for part in body.split_whitespace() {
        match part.split_once('=') {
            Some(("dim", v)) => dim = v.parse().ok(),
            Some(("seed", v)) => seed = v.parse().ok(),
            _ => return Err(bad(format!("unexpected header field `{part}`"))),
        }
    }
    match (dim, seed) {
        (Some(d), Some(s)) => Ok((d, s)),
        _ => Err(bad(format!("header `{header}` must carry dim and seed"))),
    }
}
