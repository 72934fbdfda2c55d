//! Paired TOST equivalence testing and Bonferroni adjustment.

use statrs::function::beta::beta_reg;
use thiserror::Error;

pub const DEFAULT_EPSILON_L: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least 2 paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("samples contain a non-finite value")]
    NonFinite,
    #[error("equivalence bound must be finite and positive, got {0}")]
    InvalidBound(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("p-value {0} lies outside [0, 1]")]
    InvalidPValue(f64),
    #[error("family size {m} is smaller than the {len} p-values supplied")]
    FamilySize { m: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// CDF of Student's t with `nu` degrees of freedom.
pub fn students_t_cdf(t: f64, nu: f64) -> f64 {
    assert!(nu > 0.0, "degrees of freedom must be positive");
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = nu / (nu + t * t);
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceResult {
    /// Mean of `x − y`.
    pub mean_diff: f64,
    /// p-value against H0: mean ≤ −ε.
    pub p_lower: f64,
    /// p-value against H0: mean ≥ +ε.
    pub p_upper: f64,
    pub p_tost: f64,
    pub equivalent: bool,
    pub n: usize,
    pub epsilon_l: f64,
}

/// Two one-sided paired t tests on `x − y` with `n − 1` degrees of freedom.
///
/// When every difference is identical the standard error is zero; the result
/// is then equivalent with p = 0 if `|mean| < ε` and not equivalent with
/// p = 1 otherwise.
pub fn paired_tost(x: &[f64], y: &[f64], epsilon_l: f64, alpha: f64) -> Result<EquivalenceResult> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    if !(epsilon_l.is_finite() && epsilon_l > 0.0) {
        return Err(StatsError::InvalidBound(epsilon_l));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;

    if d.iter().all(|&v| v == d[0]) {
        let inside = mean.abs() < epsilon_l;
        let (p_lower, p_upper) = if inside {
            (0.0, 0.0)
        } else if mean >= epsilon_l {
            (0.0, 1.0)
        } else {
            (1.0, 0.0)
        };
        return Ok(EquivalenceResult {
            mean_diff: mean,
            p_lower,
            p_upper,
            p_tost: if inside { 0.0 } else { 1.0 },
            equivalent: inside,
            n,
            epsilon_l,
        });
    }

    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let nu = nf - 1.0;
    let p_lower = 1.0 - students_t_cdf((mean + epsilon_l) / se, nu);
    let p_upper = students_t_cdf((mean - epsilon_l) / se, nu);
    let p_tost = p_lower.max(p_upper);
    Ok(EquivalenceResult {
        mean_diff: mean,
        p_lower,
        p_upper,
        p_tost,
        equivalent: p_tost < alpha,
        n,
        epsilon_l,
    })
}

/// Multiplies every p-value by the family size `m`, clamped at 1.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p_values.len() || m == 0 {
        return Err(StatsError::FamilySize {
            m,
            len: p_values.len(),
        });
    }
    p_values
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok((p * m as f64).min(1.0))
            } else {
                Err(StatsError::InvalidPValue(p))
            }
        })
        .collect()
}
