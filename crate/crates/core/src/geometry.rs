//! Cosine-similarity kernels and their analytic derivatives.
//!
//! Embeddings are kept unnormalized. Every kernel normalizes internally and
//! the gradients carry the full norm terms. All sums run sequentially in
//! `f64`, so repeated evaluations are bit-identical.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate vector: zero or non-finite norm")]
    DegenerateVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty similarity matrix")]
    Empty,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn checked_norm(a: &[f64]) -> Result<f64> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(GeometryError::DegenerateVector)
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GeometryError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
///
/// Zero-norm inputs are rejected instead of producing `NaN`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let na = checked_norm(a)?;
    let nb = checked_norm(b)?;
    Ok(dot(a, b) / (na * nb))
}

/// Partial derivatives of [`cosine`] with respect to both arguments.
///
/// `∂φ/∂a = b/(‖a‖‖b‖) − φ·a/‖a‖²`, and symmetrically for `b`.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    accumulate_cosine_grad(a, b, 1.0, &mut ga, &mut gb)?;
    Ok((ga, gb))
}

/// Adds `scale · ∂φ/∂a` into `ga` and `scale · ∂φ/∂b` into `gb`.
///
/// Returns the cosine itself so callers can reuse it.
pub fn accumulate_cosine_grad(
    a: &[f64],
    b: &[f64],
    scale: f64,
    ga: &mut [f64],
    gb: &mut [f64],
) -> Result<f64> {
    check_dims(a, b)?;
    check_dims(a, ga)?;
    check_dims(b, gb)?;
    let na = checked_norm(a)?;
    let nb = checked_norm(b)?;
    let inv = 1.0 / (na * nb);
    let phi = dot(a, b) * inv;
    let ca = phi / (na * na);
    let cb = phi / (nb * nb);
    for k in 0..a.len() {
        ga[k] += scale * (b[k] * inv - ca * a[k]);
        gb[k] += scale * (a[k] * inv - cb * b[k]);
    }
    Ok(phi)
}

/// Dense row-major matrix of cosine similarities between two vector lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl SimMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(GeometryError::DimensionMismatch {
                left: entries.len(),
                right: rows * cols,
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }
}

/// `entries[i][j] = cosine(rows[i], cols[j])`, computed with the scalar kernel.
pub fn pairwise_sim<R, C>(rows: &[R], cols: &[C]) -> Result<SimMatrix>
where
    R: AsRef<[f64]>,
    C: AsRef<[f64]>,
{
    let col_norms = cols
        .iter()
        .map(|c| checked_norm(c.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(rows.len() * cols.len());
    for r in rows {
        let r = r.as_ref();
        let nr = checked_norm(r)?;
        for (c, nc) in cols.iter().zip(&col_norms) {
            let c = c.as_ref();
            check_dims(r, c)?;
            entries.push(dot(r, c) / (nr * nc));
        }
    }
    Ok(SimMatrix {
        rows: rows.len(),
        cols: cols.len(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SimStats {
    /// Mean, minimum and maximum of a nonempty slice, folded left to right.
    pub fn of(values: &[f64]) -> Result<Self> {
        let (first, rest) = values.split_first().ok_or(GeometryError::Empty)?;
        let mut sum = *first;
        let mut min = *first;
        let mut max = *first;
        for &v in rest {
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        Ok(Self {
            mean: sum / values.len() as f64,
            min,
            max,
        })
    }
}

pub fn sim_stats(m: &SimMatrix) -> Result<SimStats> {
    SimStats::of(&m.entries)
}
