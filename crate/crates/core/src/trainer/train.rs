use super::batcher::Batcher;
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::corpus::{tokens_of, Corpus};
use super::hyper::{lr_at, TrainHyper};
use super::optim::{adamw_step, clip_global_norm, OptimizerState};
use crate::error::{GpnError, Result};
use crate::exec::{chunk_ranges, map_ordered, ExecPolicy};
use crate::model::{backward_weighted, forward_batch, init_params, ModelConfig, ParamGrads, Params, StateBundle, Stepper};
use crate::numerics::Real;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Loss and gradient of a batch, computed in chunks of `chunk_rows` rows that
/// may run concurrently and are summed in chunk order.
///
/// `weights[b][t]` scales the CE of row `b` at step `t`; `None` gives the mean
/// CE over every position. Returns `Σ w·CE` and its gradient.
pub fn batch_gradients<R: Real>(
    p: &Params<R>,
    seqs: &[Vec<u32>],
    weights: Option<&[Vec<f64>]>,
    chunk_rows: usize,
    policy: ExecPolicy,
) -> Result<(f64, ParamGrads<R>)> {
    if seqs.is_empty() {
        return Err(GpnError::Shape("empty batch".into()));
    }
    let steps = seqs[0].len().saturating_sub(1);
    let uniform = 1.0 / (seqs.len() * steps).max(1) as f64;
    let chunks = chunk_ranges(seqs.len(), chunk_rows);
    let results = map_ordered(policy, &chunks, |range| -> Result<(f64, ParamGrads<R>)> {
        let rows = &seqs[range.clone()];
        let fwd = forward_batch(p, StateBundle::initial(p, rows.len()), rows)?;
        let n = rows.len();
        let mut w = vec![R::zero(); steps * n];
        let mut loss = 0.0;
        for (b, row) in range.clone().enumerate() {
            for t in 0..steps {
                let wt = weights.map_or(uniform, |ws| ws[row][t]);
                w[t * n + b] = R::c(wt);
                loss += wt * fwd.ce[b * steps + t];
            }
        }
        let g = backward_weighted(p, &fwd.trace, &w, p.config.bptt_trunc)?;
        Ok((loss, g))
    });
    let mut total = 0.0;
    let mut grads = ParamGrads::<R>::zeros(&p.config);
    for r in results {
        let (l, g) = r?;
        total += l;
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

/// Held-out loss summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mean_ce: f64,
    pub ppl: f64,
    pub bits_per_token: f64,
    pub tokens: usize,
}

/// Rows of windows advanced together during evaluation.
pub const EVAL_ROWS: usize = 16;

/// Per-window summed CE over non-overlapping windows of `seq_len`
/// predictions, each starting from the initial state.
pub fn window_losses<R: Real>(p: &Params<R>, data: &[u32], seq_len: usize, policy: ExecPolicy) -> Result<Vec<f64>> {
    if seq_len == 0 || data.len() < seq_len + 1 {
        return Err(GpnError::Corpus(format!(
            "evaluation needs at least {} tokens, got {}",
            seq_len + 1,
            data.len()
        )));
    }
    let windows = (data.len() - 1) / seq_len;
    let groups = chunk_ranges(windows, EVAL_ROWS);
    let per_group = map_ordered(policy, &groups, |range| -> Result<Vec<f64>> {
        let n = range.len();
        let mut st = Stepper::new(p, n);
        let mut sums = vec![0.0; n];
        let mut inp = vec![0u32; n];
        let mut tgt = vec![0u32; n];
        for t in 0..seq_len {
            for (b, w) in range.clone().enumerate() {
                inp[b] = data[w * seq_len + t];
                tgt[b] = data[w * seq_len + t + 1];
            }
            for (s, c) in sums.iter_mut().zip(st.step(p, &inp, &tgt)?) {
                *s += c;
            }
        }
        Ok(sums)
    });
    let mut out = Vec::with_capacity(windows);
    for g in per_group {
        out.extend(g?);
    }
    Ok(out)
}

/// Mean CE over every position of the non-overlapping windows, with
/// perplexity and bits per token.
pub fn evaluate_ppl<R: Real>(p: &Params<R>, data: &[u32], seq_len: usize, policy: ExecPolicy) -> Result<EvalResult> {
    let sums = window_losses(p, data, seq_len, policy)?;
    let tokens = sums.len() * seq_len;
    let mean_ce = sums.iter().sum::<f64>() / tokens as f64;
    if !mean_ce.is_finite() {
        return Err(GpnError::NonFinite(format!("evaluation CE {mean_ce}")));
    }
    Ok(EvalResult { mean_ce, ppl: mean_ce.exp(), bits_per_token: mean_ce / std::f64::consts::LN_2, tokens })
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub lr: f64,
    pub train_ce: f64,
    pub grad_norm: f64,
    pub val_ce: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,lr,train_ce,grad_norm,val_ce";

impl MetricRecord {
    pub fn csv_line(&self) -> String {
        let val = self.val_ce.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.step, self.lr, self.train_ce, self.grad_norm, val)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for `metrics.csv` and checkpoints; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    pub policy: ExecPolicy,
    /// Stop after this many total updates (the schedule still spans `total_steps`).
    pub stop_after: Option<usize>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params<f32>,
    pub optimizer: OptimizerState<f32>,
    pub metrics: Vec<MetricRecord>,
    pub checkpoints: Vec<PathBuf>,
    /// State after the last update, resumable.
    pub last: Checkpoint,
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint-{step:06}.gpn"))
}

/// AdamW training on byte windows of the training split with periodic
/// validation. Deterministic given the config, hyperparameters and corpus.
pub fn train_loop(cfg: &ModelConfig, h: &TrainHyper, corpus: &Corpus, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    h.validate()?;
    let batcher = Batcher::new(tokens_of(corpus.train()), h.batch, h.seq_len, h.seed.wrapping_add(1))?;
    let mut val = tokens_of(corpus.val());
    if h.eval_tokens > 0 {
        val.truncate(h.eval_tokens + 1);
    }
    if h.eval_every > 0 && val.len() < h.seq_len + 1 {
        return Err(GpnError::Corpus(format!(
            "validation split has {} tokens, need {}",
            val.len(),
            h.seq_len + 1
        )));
    }

    let (mut params, mut opt, start) = match &opts.resume {
        Some(ck) => {
            if ck.config != *cfg {
                return Err(GpnError::Config("resume checkpoint has a different model config".into()));
            }
            let opt = ck.optimizer.clone().ok_or_else(|| {
                GpnError::CheckpointFormat("resume checkpoint carries no optimizer state".into())
            })?;
            (ck.params.clone(), opt, ck.step as usize)
        }
        None => {
            let p = init_params::<f32>(cfg, h.seed)?;
            let o = OptimizerState::new(&p);
            (p, o, 0)
        }
    };
    let end = opts.stop_after.unwrap_or(h.total_steps).min(h.total_steps);

    let mut log = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("metrics.csv");
            let append = start > 0 && path.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(&path)?;
            if !append {
                writeln!(f, "{METRICS_HEADER}")?;
            }
            Some(f)
        }
        None => None,
    };

    let ckpt_steps = h.checkpoint_steps();
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let snapshot = |params: &Params<f32>, opt: &OptimizerState<f32>, step: usize| Checkpoint {
        config: *cfg,
        hyper: Some(h.clone()),
        step: step as u64,
        params: params.clone(),
        optimizer: Some(opt.clone()),
    };

    for step in start + 1..=end {
        let seqs = batcher.batch((step - 1) as u64);
        let (loss, mut grads) = batch_gradients(&params, &seqs, None, h.chunk_rows, opts.policy)?;
        if !loss.is_finite() {
            return Err(GpnError::NonFinite(format!("training CE {loss} at step {step}")));
        }
        let grad_norm = clip_global_norm(&mut grads, h.clip_norm)?;
        let lr = lr_at(step, h);
        adamw_step(&mut params, &grads, &mut opt, h, lr)?;
        if !params.is_finite() {
            return Err(GpnError::NonFinite(format!("parameters after step {step}")));
        }
        let val_ce = if h.eval_every > 0 && (step % h.eval_every == 0 || step == h.total_steps) {
            Some(evaluate_ppl(&params, &val, h.seq_len, opts.policy)?.mean_ce)
        } else {
            None
        };
        let rec = MetricRecord { step, lr, train_ce: loss, grad_norm, val_ce };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", rec.csv_line())?;
            f.flush()?;
        }
        if opts.verbose && (val_ce.is_some() || step % 50 == 0 || step == 1) {
            eprintln!(
                "step {step:>6}  lr {lr:.3e}  train_ce {loss:.4}  grad_norm {grad_norm:.3e}{}",
                val_ce.map(|v| format!("  val_ce {v:.4}")).unwrap_or_default()
            );
        }
        metrics.push(rec);
        if let Some(dir) = &opts.out_dir {
            if ckpt_steps.contains(&step) {
                let path = checkpoint_path(dir, step);
                save_checkpoint(&path, &snapshot(&params, &opt, step))?;
                checkpoints.push(path);
            }
        }
    }
    let last = snapshot(&params, &opt, end.max(start));
    Ok(TrainOutcome { params, optimizer: opt, metrics, checkpoints, last })
}
