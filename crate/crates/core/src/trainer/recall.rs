//! Synthetic associative recall: `n` key/value pairs, a query marker, one of
//! the keys again, then its value.

use super::hyper::{lr_at, TrainHyper};
use super::optim::{adamw_step, clip_global_norm, OptimizerState};
use super::train::batch_gradients;
use crate::error::{GpnError, Result};
use crate::exec::{chunk_ranges, map_ordered, ExecPolicy};
use crate::model::{count_params, forward_batch, init_params, Mode, ModelConfig, Params, StateBundle};
use crate::numerics::Real;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Token layout: keys `0..key_vocab`, values `key_vocab..key_vocab+val_vocab`,
/// then the query marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallTask {
    pub n_pairs: usize,
    pub key_vocab: usize,
    pub val_vocab: usize,
}

impl RecallTask {
    pub fn query_marker(&self) -> u32 {
        (self.key_vocab + self.val_vocab) as u32
    }

    /// Tokens the model vocabulary must cover.
    pub fn vocab(&self) -> usize {
        self.key_vocab + self.val_vocab + 1
    }

    pub fn seq_len(&self) -> usize {
        2 * self.n_pairs + 3
    }

    /// Index of the answer token within a sequence.
    pub fn answer_pos(&self) -> usize {
        2 * self.n_pairs + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.val_vocab == 0 {
            return Err(GpnError::Config("n_pairs and val_vocab must be positive".into()));
        }
        if self.key_vocab < self.n_pairs {
            return Err(GpnError::Config(format!(
                "{} distinct keys needed, key_vocab is {}",
                self.n_pairs, self.key_vocab
            )));
        }
        if self.vocab() > 256 {
            return Err(GpnError::Config(format!(
                "keys, values and the query marker need {} token ids, at most 256 fit in a byte",
                self.vocab()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallDataset {
    pub task: RecallTask,
    pub sequences: Vec<Vec<u32>>,
    /// Position of the scored answer in each sequence.
    pub answer_pos: Vec<usize>,
}

impl RecallDataset {
    pub fn answers(&self) -> impl Iterator<Item = u32> + '_ {
        self.sequences.iter().zip(&self.answer_pos).map(|(s, &p)| s[p])
    }
}

/// Generates `seq_count` sequences. Keys within a sequence are distinct;
/// values and the queried pair are uniform.
pub fn gen_assoc_recall(
    n_pairs: usize,
    key_vocab: usize,
    val_vocab: usize,
    seq_count: usize,
    seed: u64,
) -> Result<RecallDataset> {
    let task = RecallTask { n_pairs, key_vocab, val_vocab };
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(seq_count);
    for _ in 0..seq_count {
        let keys = sample(&mut rng, key_vocab, n_pairs);
        let mut seq = Vec::with_capacity(task.seq_len());
        let mut pairs = Vec::with_capacity(n_pairs);
        for k in keys.iter() {
            let v = key_vocab + rng.random_range(0..val_vocab);
            seq.extend([k as u32, v as u32]);
            pairs.push((k as u32, v as u32));
        }
        let (qk, qv) = pairs[rng.random_range(0..n_pairs)];
        seq.extend([task.query_marker(), qk, qv]);
        sequences.push(seq);
    }
    Ok(RecallDataset { task, answer_pos: vec![task.answer_pos(); seq_count], sequences })
}

/// Fraction of sequences whose answer is the argmax prediction at the query key.
pub fn recall_accuracy<R: Real>(p: &Params<R>, data: &RecallDataset, policy: ExecPolicy) -> Result<f64> {
    if data.sequences.is_empty() {
        return Err(GpnError::Config("empty recall dataset".into()));
    }
    let vocab = p.config.vocab;
    let groups = chunk_ranges(data.sequences.len(), 64);
    let hits = map_ordered(policy, &groups, |range| -> Result<usize> {
        let seqs = &data.sequences[range.clone()];
        let fwd = forward_batch(p, StateBundle::initial(p, seqs.len()), seqs)?;
        let mut hits = 0;
        for (b, i) in range.clone().enumerate() {
            let t = data.answer_pos[i] - 1;
            let probs = &fwd.trace.at(&fwd.trace.probs, t)[b * vocab..(b + 1) * vocab];
            let best = (0..vocab).fold(0, |m, j| if probs[j] > probs[m] { j } else { m });
            hits += usize::from(best as u32 == data.sequences[i][data.answer_pos[i]]);
        }
        Ok(hits)
    });
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / data.sequences.len() as f64)
}

#[derive(Debug, Clone)]
pub struct RecallOutcome {
    pub params: Params<f32>,
    /// Answer-token CE per step.
    pub losses: Vec<f64>,
}

/// Trains on freshly generated batches with the loss restricted to the
/// answer position. Batch `s` is generated from `seed + s` and holds
/// `1 + (s - 1) % n_pairs` pairs, so every step count from one pair up to the
/// full task is seen throughout training.
pub fn train_recall(
    cfg: &ModelConfig,
    h: &TrainHyper,
    task: RecallTask,
    policy: ExecPolicy,
) -> Result<RecallOutcome> {
    task.validate()?;
    h.validate()?;
    if task.vocab() > cfg.vocab {
        return Err(GpnError::Config(format!("task needs vocab {}, model has {}", task.vocab(), cfg.vocab)));
    }
    let mut params = init_params::<f32>(cfg, h.seed)?;
    let mut opt = OptimizerState::new(&params);
    let weights: Vec<Vec<Vec<f64>>> = (1..=task.n_pairs)
        .map(|n| {
            let t = RecallTask { n_pairs: n, ..task };
            let mut w = vec![vec![0.0; t.seq_len() - 1]; h.batch];
            for row in &mut w {
                row[t.answer_pos() - 1] = 1.0 / h.batch as f64;
            }
            w
        })
        .collect();
    let mut losses = Vec::with_capacity(h.total_steps);
    for step in 1..=h.total_steps {
        let n = 1 + (step - 1) % task.n_pairs;
        let data = gen_assoc_recall(n, task.key_vocab, task.val_vocab, h.batch, h.seed.wrapping_add(1_000_000 + step as u64))?;
        let (loss, mut g) = batch_gradients(&params, &data.sequences, Some(&weights[n - 1]), h.chunk_rows, policy)?;
        if !loss.is_finite() {
            return Err(GpnError::NonFinite(format!("recall CE {loss} at step {step}")));
        }
        clip_global_norm(&mut g, h.clip_norm)?;
        adamw_step(&mut params, &g, &mut opt, h, lr_at(step, h))?;
        losses.push(loss);
    }
    Ok(RecallOutcome { params, losses })
}

/// A memory-free config whose parameter count is closest to `cfg`'s, found
/// by widening the state (with `d_ffn ≈ 8d/3`).
pub fn matched_gpn_config(cfg: &ModelConfig) -> ModelConfig {
    let target = count_params(cfg) as i64;
    let make = |d: usize| ModelConfig {
        d,
        d_emb: d,
        d_ffn: ((8 * d) as f64 / 3.0).round() as usize,
        mode: Mode::Gpn,
        ..*cfg
    };
    (1..=4 * cfg.d.max(8))
        .map(make)
        .min_by_key(|c| (count_params(c) as i64 - target).abs())
        .expect("non-empty search range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_determinism() {
        let a = gen_assoc_recall(4, 10, 6, 50, 3).unwrap();
        assert_eq!(a, gen_assoc_recall(4, 10, 6, 50, 3).unwrap());
        assert_ne!(a, gen_assoc_recall(4, 10, 6, 50, 4).unwrap());
        for (s, &p) in a.sequences.iter().zip(&a.answer_pos) {
            assert_eq!(s.len(), 11);
            assert_eq!(s[8], 16);
            let pairs: Vec<(u32, u32)> = s[..8].chunks(2).map(|c| (c[0], c[1])).collect();
            assert!(pairs.iter().all(|(k, v)| *k < 10 && (10..16).contains(v)));
            let mut keys: Vec<u32> = pairs.iter().map(|p| p.0).collect();
            keys.sort_unstable();
            keys.dedup();
            assert_eq!(keys.len(), 4);
            assert!(pairs.contains(&(s[9], s[p])));
        }
    }

    #[test]
    fn one_pair_is_a_copy_task() {
        let d = gen_assoc_recall(1, 5, 5, 20, 1).unwrap();
        for s in &d.sequences {
            assert_eq!((s[0], s[1]), (s[3], s[4]));
        }
    }

    #[test]
    fn answers_are_uniform_over_values() {
        // Chi-square with 7 degrees of freedom; 24.32 is the 0.999 quantile.
        let d = gen_assoc_recall(8, 16, 8, 8000, 11).unwrap();
        let mut counts = [0f64; 8];
        for a in d.answers() {
            counts[(a - 16) as usize] += 1.0;
        }
        let e = 1000.0;
        let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
        assert!(chi2 < 24.32, "chi2 {chi2}");
    }

    #[test]
    fn invalid_tasks_rejected() {
        assert!(gen_assoc_recall(5, 4, 4, 1, 0).is_err());
        assert!(gen_assoc_recall(0, 4, 4, 1, 0).is_err());
        assert!(gen_assoc_recall(4, 200, 56, 1, 0).is_err());
        assert!(gen_assoc_recall(4, 200, 55, 1, 0).is_ok());
    }

    #[test]
    fn matched_config_is_close_in_size() {
        let cfg = ModelConfig { d: 32, d_ffn: 85, d_emb: 32, vocab: 33, heads: 4, d_k: 8, d_v: 8, ..ModelConfig::desk(Mode::GpnM) };
        let g = matched_gpn_config(&cfg);
        assert_eq!(g.mode, Mode::Gpn);
        let (a, b) = (count_params(&cfg) as f64, count_params(&g) as f64);
        assert!((a - b).abs() / a < 0.03, "{a} vs {b}");
        assert!(g.d > cfg.d);
    }

    #[test]
    fn short_recall_run_is_deterministic() {
        let task = RecallTask { n_pairs: 3, key_vocab: 4, val_vocab: 4 };
        let cfg = ModelConfig { d: 8, d_ffn: 16, d_emb: 8, vocab: task.vocab(), heads: 2, d_k: 4, d_v: 4, ..ModelConfig::desk(Mode::GpnM) };
        let h = TrainHyper { peak_lr: 1e-2, warmup_steps: 2, total_steps: 6, batch: 4, seq_len: task.seq_len(), eval_every: 0, chunk_rows: 2, ..TrainHyper::default() };
        let a = train_recall(&cfg, &h, task, ExecPolicy::Auto).unwrap();
        let b = train_recall(&cfg, &h, task, ExecPolicy::Sequential).unwrap();
        assert_eq!(a.losses.len(), 6);
        assert!(a.losses.iter().all(|l| l.is_finite()));
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params.flatten(), b.params.flatten());
    }
}
