use crate::error::{GpnError, Result};
use serde::{Deserialize, Serialize};

/// Optimization and data hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub final_lr_fraction: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub seq_len: usize,
    pub seed: u64,
    /// Validation cadence in steps; 0 disables periodic validation.
    pub eval_every: usize,
    /// Cap on validation tokens per measurement; 0 means the whole split.
    pub eval_tokens: usize,
    /// Batch rows per gradient chunk. Chunks run concurrently and are summed
    /// in order, so results depend on this value but not on thread count.
    pub chunk_rows: usize,
    pub val_fraction: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            peak_lr: 6e-4,
            warmup_steps: 100,
            total_steps: 2000,
            final_lr_fraction: 0.1,
            weight_decay: 0.1,
            betas: (0.9, 0.95),
            adam_eps: 1e-8,
            clip_norm: 1.0,
            batch: 16,
            seq_len: 256,
            seed: 0,
            eval_every: 200,
            eval_tokens: 100_000,
            chunk_rows: 16,
            val_fraction: 0.1,
        }
    }
}

impl TrainHyper {
    /// The published 130M recipe: peak 6e-4, 100-step warmup, cosine to 10%
    /// over 10k steps, weight decay 0.1, sequence 2048, batch 128.
    pub fn paper() -> Self {
        Self { total_steps: 10_000, batch: 128, seq_len: 2048, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GpnError::Config(m.to_string()));
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must be in (0, 1]");
        }
        if self.warmup_steps >= self.total_steps {
            return bad("warmup_steps must be below total_steps");
        }
        if self.batch == 0 || self.seq_len == 0 || self.chunk_rows == 0 {
            return bad("batch, seq_len and chunk_rows must be positive");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if self.clip_norm <= 0.0 || self.adam_eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("clip_norm and adam_eps must be positive, weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad("betas must be in [0, 1)");
        }
        Ok(())
    }

    /// Steps at which a checkpoint is written: every 10% of the run and the end.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        let mut v: Vec<usize> =
            (1..=10).map(|i| (self.total_steps * i) / 10).filter(|s| *s > 0).collect();
        v.dedup();
        v
    }
}

/// Linear warmup from 0 to the peak, then a cosine down to
/// `final_lr_fraction · peak` at `total_steps`.
pub fn lr_at(step: usize, h: &TrainHyper) -> f64 {
    let step = step.min(h.total_steps);
    if step < h.warmup_steps {
        return h.peak_lr * (step as f64 / h.warmup_steps as f64);
    }
    let span = (h.total_steps - h.warmup_steps) as f64;
    let progress = (step - h.warmup_steps) as f64 / span;
    let f = h.final_lr_fraction;
    h.peak_lr * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
