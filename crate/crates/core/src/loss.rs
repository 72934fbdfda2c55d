//! Relevance-margin losses over triplet batches.
//!
//! Three inner terms are supported:
//!
//! * **static**: `φ(q,d⁺) − φ(q,d⁻) − ε`
//! * **adaptive**: the target is the scaled document similarity `(1 + φ(d⁺,d⁻)) / 2`
//! * **distributed**: the margin stays at the triplet's own negative while the
//!   target sweeps over every negative in the batch
//!
//! Static and adaptive terms can additionally be expanded over in-batch
//! negatives, in which case both the margin and the target use `d⁻ⱼ`.
//! Terms are aggregated with a mean squared error over `B` instances, or over
//! `B²` instances whenever in-batch information is used.

use std::fmt;

use thiserror::Error;

use crate::geometry::{self, GeometryError, SimMatrix, SimStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("invalid loss configuration: {0}")]
    InvalidSpec(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch lists are misaligned: {queries} queries, {positives} positives, {negatives} negatives")]
    Misaligned {
        queries: usize,
        positives: usize,
        negatives: usize,
    },
    #[error("embedding dimension {found} does not match batch dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Margin target used by a loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossVariant {
    Static { epsilon: f64 },
    Adaptive,
    Distributed,
}

impl LossVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Static { .. } => "static",
            LossVariant::Adaptive => "adaptive",
            LossVariant::Distributed => "distributed",
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    variant: LossVariant,
    in_batch: bool,
}

impl LossSpec {
    pub fn new(variant: LossVariant, in_batch: bool) -> Result<Self> {
        match variant {
            LossVariant::Static { epsilon } if !(0.0..=1.0).contains(&epsilon) => Err(
                LossError::InvalidSpec(format!("epsilon must lie in [0, 1], got {epsilon}")),
            ),
            LossVariant::Distributed if !in_batch => Err(LossError::InvalidSpec(
                "the distributed loss always uses in-batch negatives".into(),
            )),
            _ => Ok(Self { variant, in_batch }),
        }
    }

    pub fn static_margin(epsilon: f64, in_batch: bool) -> Result<Self> {
        Self::new(LossVariant::Static { epsilon }, in_batch)
    }

    pub fn adaptive(in_batch: bool) -> Self {
        Self {
            variant: LossVariant::Adaptive,
            in_batch,
        }
    }

    pub fn distributed() -> Self {
        Self {
            variant: LossVariant::Distributed,
            in_batch: true,
        }
    }

    pub fn variant(&self) -> LossVariant {
        self.variant
    }

    pub fn in_batch(&self) -> bool {
        self.in_batch
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self.variant {
            LossVariant::Static { epsilon } => Some(epsilon),
            _ => None,
        }
    }

    /// Same spec with in-batch expansion switched on (distributed is unchanged).
    pub fn with_in_batch(self) -> Self {
        Self {
            in_batch: true,
            ..self
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            LossVariant::Static { epsilon } => write!(f, "static(eps={epsilon})")?,
            v => write!(f, "{}", v.name())?,
        }
        if self.in_batch && self.variant != LossVariant::Distributed {
            write!(f, "+in-batch")?;
        }
        Ok(())
    }
}

#[inline]
pub fn scaled_target(doc_sim: f64) -> f64 {
    (1.0 + doc_sim) / 2.0
}

/// `(φqp − φqn) − ε`
#[inline]
pub fn inner_static(sim_qp: f64, sim_qn: f64, epsilon: f64) -> f64 {
    (sim_qp - sim_qn) - epsilon
}

/// `(φqp − φqn) − (1 + φpn) / 2`
#[inline]
pub fn inner_adaptive(sim_qp: f64, sim_qn: f64, sim_pn: f64) -> f64 {
    (sim_qp - sim_qn) - scaled_target(sim_pn)
}

/// Distributed inner term for cell `(i, j)`: the margin uses the triplet's own
/// negative `d⁻ᵢ`, the target uses `φ(d⁺ᵢ, d⁻ⱼ)`.
#[inline]
pub fn inner_distributed(sim_qp_i: f64, sim_qn_ii: f64, sim_pn_ij: f64) -> f64 {
    (sim_qp_i - sim_qn_ii) - scaled_target(sim_pn_ij)
}

/// `B` aligned query/positive/negative embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl TripletBatch {
    pub fn new(
        queries: Vec<Vec<f64>>,
        positives: Vec<Vec<f64>>,
        negatives: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if queries.len() != positives.len() || queries.len() != negatives.len() {
            return Err(LossError::Misaligned {
                queries: queries.len(),
                positives: positives.len(),
                negatives: negatives.len(),
            });
        }
        let dim = queries.first().ok_or(LossError::EmptyBatch)?.len();
        for v in queries.iter().chain(&positives).chain(&negatives) {
            if v.len() != dim {
                return Err(LossError::Dimension {
                    expected: dim,
                    found: v.len(),
                });
            }
            let n = geometry::norm(v);
            if !(n > 0.0 && n.is_finite()) {
                return Err(GeometryError::DegenerateVector.into());
            }
        }
        Ok(Self {
            queries,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.queries[0].len()
    }
}

/// One `(i, j)` cell of the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceLoss {
    pub i: usize,
    pub j: usize,
    /// Relevance margin `φ(qᵢ,d⁺ᵢ) − φ(qᵢ,d⁻)`.
    pub margin: f64,
    pub target: f64,
    pub squared: f64,
}

impl InstanceLoss {
    pub fn inner(&self) -> f64 {
        self.margin - self.target
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub instances: Vec<InstanceLoss>,
    /// Distribution of the targets over all instances.
    pub target_stats: SimStats,
    /// Raw cosine statistics of the `D⁺ × D⁻` similarity matrix.
    pub doc_sim_stats: SimStats,
}

/// Gradient of the batch total, aligned with the batch lists.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

struct BatchSims {
    qp: Vec<f64>,
    qn: SimMatrix,
    pn: SimMatrix,
}

impl BatchSims {
    fn compute(batch: &TripletBatch) -> Result<Self> {
        let qp = batch
            .queries
            .iter()
            .zip(&batch.positives)
            .map(|(q, p)| geometry::cosine(q, p))
            .collect::<geometry::Result<Vec<_>>>()?;
        let qn = geometry::pairwise_sim(&batch.queries, &batch.negatives)?;
        let pn = geometry::pairwise_sim(&batch.positives, &batch.negatives)?;
        Ok(Self { qp, qn, pn })
    }
}

/// Which similarity entries feed cell `(i, j)`: the negative used in the
/// margin and, for similarity-derived targets, the negative used in the target.
#[derive(Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    margin_neg: usize,
    target_neg: Option<usize>,
}

fn cells(spec: &LossSpec, b: usize) -> Vec<Cell> {
    let similarity_target = !matches!(spec.variant, LossVariant::Static { .. });
    let mut out = Vec::with_capacity(if spec.in_batch { b * b } else { b });
    for i in 0..b {
        if !spec.in_batch {
            out.push(Cell {
                i,
                j: i,
                margin_neg: i,
                target_neg: similarity_target.then_some(i),
            });
            continue;
        }
        for j in 0..b {
            let margin_neg = match spec.variant {
                LossVariant::Distributed => i,
                _ => j,
            };
            out.push(Cell {
                i,
                j,
                margin_neg,
                target_neg: similarity_target.then_some(j),
            });
        }
    }
    out
}

fn evaluate(
    spec: &LossSpec,
    batch: &TripletBatch,
    sims: &BatchSims,
) -> Result<(LossReport, Vec<Cell>)> {
    let cells = cells(spec, batch.len());
    let mut instances = Vec::with_capacity(cells.len());
    let mut sum = 0.0;
    for c in &cells {
        let margin = sims.qp[c.i] - sims.qn.get(c.i, c.margin_neg);
        let target = match (spec.variant, c.target_neg) {
            (LossVariant::Static { epsilon }, _) => epsilon,
            (_, Some(t)) => scaled_target(sims.pn.get(c.i, t)),
            (_, None) => unreachable!("similarity targets always name a negative"),
        };
        let inner = margin - target;
        let squared = inner * inner;
        sum += squared;
        instances.push(InstanceLoss {
            i: c.i,
            j: c.j,
            margin,
            target,
            squared,
        });
    }
    let total = sum / cells.len() as f64;
    let targets: Vec<f64> = instances.iter().map(|x| x.target).collect();
    let report = LossReport {
        total,
        target_stats: SimStats::of(&targets)?,
        doc_sim_stats: geometry::sim_stats(&sims.pn)?,
        instances,
    };
    Ok((report, cells))
}

pub fn batch_loss(spec: &LossSpec, batch: &TripletBatch) -> Result<LossReport> {
    let sims = BatchSims::compute(batch)?;
    Ok(evaluate(spec, batch, &sims)?.0)
}

pub fn batch_loss_grad(spec: &LossSpec, batch: &TripletBatch) -> Result<BatchGrad> {
    Ok(loss_and_grad(spec, batch)?.1)
}

/// Loss report and exact analytic gradient in one pass.
pub fn loss_and_grad(spec: &LossSpec, batch: &TripletBatch) -> Result<(LossReport, BatchGrad)> {
    let b = batch.len();
    let d = batch.dim();
    let sims = BatchSims::compute(batch)?;
    let (report, cells) = evaluate(spec, batch, &sims)?;

    // dL/dφ for each similarity that appears in the loss.
    let norm = 2.0 / cells.len() as f64;
    let mut c_qp = vec![0.0; b];
    let mut c_qn = vec![0.0; b * b];
    let mut c_pn = vec![0.0; b * b];
    for (c, inst) in cells.iter().zip(&report.instances) {
        let g = norm * inst.inner();
        c_qp[c.i] += g;
        c_qn[c.i * b + c.margin_neg] -= g;
        if let Some(t) = c.target_neg {
            c_pn[c.i * b + t] -= 0.5 * g;
        }
    }

    let mut grad = BatchGrad {
        queries: vec![vec![0.0; d]; b],
        positives: vec![vec![0.0; d]; b],
        negatives: vec![vec![0.0; d]; b],
    };
    for i in 0..b {
        if c_qp[i] != 0.0 {
            geometry::accumulate_cosine_grad(
                &batch.queries[i],
                &batch.positives[i],
                c_qp[i],
                &mut grad.queries[i],
                &mut grad.positives[i],
            )?;
        }
    }
    for i in 0..b {
        for j in 0..b {
            let cq = c_qn[i * b + j];
            if cq != 0.0 {
                geometry::accumulate_cosine_grad(
                    &batch.queries[i],
                    &batch.negatives[j],
                    cq,
                    &mut grad.queries[i],
                    &mut grad.negatives[j],
                )?;
            }
            let cp = c_pn[i * b + j];
            if cp != 0.0 {
                geometry::accumulate_cosine_grad(
                    &batch.positives[i],
                    &batch.negatives[j],
                    cp,
                    &mut grad.positives[i],
                    &mut grad.negatives[j],
                )?;
            }
        }
    }
    Ok((report, grad))
}
