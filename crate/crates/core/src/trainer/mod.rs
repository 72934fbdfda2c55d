//! Deterministic training over a free embedding table.
//!
//! Batches are taken from the dataset in order, every embedding that appears
//! in a batch receives one ADAM update per step, and the learning rate decays
//! exponentially. An optional evaluation hook drives early stopping; the best
//! evaluated table is returned.

pub mod adam;
pub mod table;
mod telemetry;

use indexmap::IndexMap;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState, ShapeError};
pub use table::{EmbeddingTable, InitScheme, TableError};
pub use telemetry::{read_telemetry_csv, write_telemetry_csv, TelemetryRecord, TELEMETRY_HEADER};

use crate::data::TripletDataset;
use crate::eval::EvalError;
use crate::loss::{self, LossError, LossSpec, TripletBatch};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("id `{0}` from the dataset is missing in the embedding table")]
    UnknownId(String),
    #[error("loss diverged at step {}: loss = {}", .record.step, .record.loss)]
    Diverged {
        record: TelemetryRecord,
        telemetry: Vec<TelemetryRecord>,
    },
    #[error("step {step}: {source}")]
    Loss {
        step: usize,
        #[source]
        source: LossError,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("evaluation hook failed: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub adam: AdamConfig,
    pub eval_every: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let batch_size = 64;
        Self {
            batch_size,
            base_lr: 5e-6 / batch_size as f64,
            weight_decay: 1e-6,
            lr_gamma: 0.99999,
            adam: AdamConfig::default(),
            eval_every: 500,
            patience: 16,
            max_epochs: 1,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad(format!(
                "lr_gamma must lie in (0, 1], got {}",
                self.lr_gamma
            ));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.base_lr
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }
}

/// `base_lr · gamma^step`
pub fn lr_at(step: usize, base_lr: f64, gamma: f64) -> f64 {
    base_lr * gamma.powf(step as f64)
}

/// True when each of the last `patience` scores fails to beat the best score
/// seen before it.
pub fn early_stop(history: &[f64], patience: usize) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let mut best = history[..split]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    for &score in &history[split..] {
        if score > best {
            return false;
        }
        best = best.max(score);
    }
    true
}

/// Trailing mean over `min(k + 1, window)` values.
pub fn rolling_mean(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..series.len())
        .map(|k| {
            let start = (k + 1).saturating_sub(window);
            let slice = &series[start..=k];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    EarlyStop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best evaluated table, or the final one when no evaluation ran.
    pub table: EmbeddingTable,
    pub telemetry: Vec<TelemetryRecord>,
    pub steps: usize,
    pub best_step: Option<usize>,
    pub best_metric: Option<f64>,
    pub stop_reason: StopReason,
}

pub type EvalHook<'a> = dyn FnMut(&EmbeddingTable) -> Result<f64, EvalError> + 'a;

struct EvalTracker {
    history: Vec<f64>,
    best: Option<(usize, f64, EmbeddingTable)>,
}

impl EvalTracker {
    fn record(&mut self, step: usize, score: f64, table: &EmbeddingTable) {
        self.history.push(score);
        if self.best.as_ref().is_none_or(|(_, b, _)| score > *b) {
            self.best = Some((step, score, table.clone()));
        }
    }
}

pub fn train(
    config: &TrainConfig,
    spec: &LossSpec,
    dataset: &TripletDataset,
    mut table: EmbeddingTable,
    mut eval_hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let resolve = |id: &str| {
        table
            .index_of(id)
            .ok_or_else(|| TrainError::UnknownId(id.to_string()))
    };
    let rows: Vec<[usize; 3]> = dataset
        .iter()
        .map(|t| {
            Ok([
                resolve(&t.query)?,
                resolve(&t.positive)?,
                resolve(&t.negative)?,
            ])
        })
        .collect::<Result<_, TrainError>>()?;

    let dim = table.dim();
    let mut states: Vec<Option<AdamState>> = vec![None; table.len()];
    let mut telemetry = Vec::new();
    let mut tracker = EvalTracker {
        history: Vec::new(),
        best: None,
    };
    let mut step = 0usize;
    let mut last_eval_step = None;
    let mut stop_reason = StopReason::MaxEpochs;

    'epochs: for _epoch in 0..config.max_epochs {
        for chunk in rows.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                stop_reason = StopReason::MaxSteps;
                break 'epochs;
            }
            let gather = |slot: usize| chunk.iter().map(|r| table.row(r[slot]).to_vec()).collect();
            let batch = TripletBatch::new(gather(0), gather(1), gather(2)).map_err(|source| {
                TrainError::Loss {
                    step: step + 1,
                    source,
                }
            })?;
            let (report, grad) =
                loss::loss_and_grad(spec, &batch).map_err(|source| TrainError::Loss {
                    step: step + 1,
                    source,
                })?;

            let lr = lr_at(step, config.base_lr, config.lr_gamma);
            step += 1;
            let stats = report.doc_sim_stats;
            let mut record = TelemetryRecord {
                step,
                loss: report.total,
                lr,
                target_mean: stats.mean,
                target_min: stats.min,
                target_max: stats.max,
                eval_metric: None,
            };
            if !report.total.is_finite() {
                return Err(TrainError::Diverged { record, telemetry });
            }

            // Sum gradients of rows that occur several times in the batch.
            let mut acc: IndexMap<usize, Vec<f64>> = IndexMap::new();
            for (r, (gq, (gp, gn))) in chunk.iter().zip(
                grad.queries
                    .iter()
                    .zip(grad.positives.iter().zip(&grad.negatives)),
            ) {
                for (idx, g) in [(r[0], gq), (r[1], gp), (r[2], gn)] {
                    let slot = acc.entry(idx).or_insert_with(|| vec![0.0; dim]);
                    slot.iter_mut().zip(g).for_each(|(s, x)| *s += x);
                }
            }
            for (idx, g) in &acc {
                let state = states[*idx].get_or_insert_with(|| AdamState::new(dim));
                adam_step(
                    table.row_mut(*idx),
                    g,
                    state,
                    lr,
                    config.weight_decay,
                    &config.adam,
                )?;
            }

            let mut stop = false;
            if let Some(hook) = eval_hook.as_mut() {
                if step.is_multiple_of(config.eval_every) {
                    let score = hook(&table)?;
                    record.eval_metric = Some(score);
                    tracker.record(step, score, &table);
                    last_eval_step = Some(step);
                    stop = early_stop(&tracker.history, config.patience);
                }
            }
            telemetry.push(record);
            if stop {
                stop_reason = StopReason::EarlyStop;
                break 'epochs;
            }
        }
    }

    if let Some(hook) = eval_hook.as_mut() {
        if step > 0 && last_eval_step != Some(step) {
            let score = hook(&table)?;
            if let Some(last) = telemetry.last_mut() {
                last.eval_metric = Some(score);
            }
            tracker.record(step, score, &table);
        }
    }

    let (best_step, best_metric, table) = match tracker.best {
        Some((s, m, best)) => (Some(s), Some(m), best),
        None => (None, None, table),
    };
    Ok(TrainOutcome {
        table,
        telemetry,
        steps: step,
        best_step,
        best_metric,
        stop_reason,
    })
}
