use super::states::StateMatrix;
use super::stats::{cosine, norm, spearman};
use crate::error::{GpnError, Result};
use crate::model::Params;
use crate::numerics::{rmsnorm, Real};

/// Time-averaged state and what the decoder makes of it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDirectionReport {
    pub mean_state: Vec<f64>,
    /// `‖s̄‖`
    pub mean_norm: f64,
    /// `E‖s‖`
    pub expected_norm: f64,
    /// `‖s̄‖ / E‖s‖`
    pub ratio: f64,
    /// Logits of `decode(s̄)` over the whole vocabulary.
    pub logits: Vec<f64>,
    /// Highest-logit tokens, best first.
    pub top_tokens: Vec<(u32, f64)>,
    /// Spearman correlation of `softmax(decode(s̄))` with the unigram.
    pub spearman_unigram: f64,
    /// Pairwise cosines between the means of disjoint batches of sequences.
    pub batch_cosines: Vec<f64>,
    /// `(t, cos(mean of the first t states, s̄))`.
    pub running_cosines: Vec<(usize, f64)>,
    /// Top-k overlap between `decode(ē)` and `decode(s̄)`, where `ē` is the
    /// unigram-weighted mean embedding.
    pub control_overlap: usize,
    /// `cos(ē, s̄)`
    pub control_cosine: f64,
}

/// Logits of `W_dec · RMSNorm(s) [+ b]`, in f64.
pub fn decode_logits<R: Real>(p: &Params<R>, s: &[f64]) -> Vec<f64> {
    let gain: Vec<f64> = p.dec_gain.data.iter().map(|g| g.f64()).collect();
    let n = rmsnorm(s, p.config.eps_norm, Some(&gain));
    (0..p.config.vocab)
        .map(|v| {
            let row = p.dec_w.row(v);
            let dot: f64 = row.iter().zip(&n).map(|(w, x)| w.f64() * x).sum();
            dot + p.dec_bias.as_ref().map_or(0.0, |b| b.data[v].f64())
        })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn top_k(logits: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i as u32, logits[i])).collect()
}

fn mean_rows(s: &StateMatrix, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut m = vec![0.0; s.d];
    let mut n = 0usize;
    for i in rows {
        for (a, v) in m.iter_mut().zip(s.row(i)) {
            *a += v;
        }
        n += 1;
    }
    m.iter_mut().for_each(|a| *a /= n.max(1) as f64);
    m
}

/// Running-mean checkpoints reported by default.
pub const RUNNING_CHECKPOINTS: [usize; 3] = [10, 100, 1000];

/// `unigram` is the training-split byte distribution; sequences are split
/// into `n_batches` contiguous disjoint groups for the batch cosines.
pub fn mean_direction_report<R: Real>(
    s: &StateMatrix,
    p: &Params<R>,
    unigram: &[f64],
    n_batches: usize,
    top: usize,
) -> Result<MeanDirectionReport> {
    if unigram.len() != p.config.vocab || s.d != p.config.d {
        return Err(GpnError::Shape("unigram or state width does not match the model".into()));
    }
    let seqs: Vec<_> = s.sequences().collect();
    if n_batches < 2 || seqs.len() < n_batches {
        return Err(GpnError::Config(format!(
            "{n_batches} batches need at least as many sequences, have {}",
            seqs.len()
        )));
    }
    let mean_state = mean_rows(s, 0..s.rows);
    let mean_norm = norm(&mean_state);
    let expected_norm = (0..s.rows).map(|i| norm(s.row(i))).sum::<f64>() / s.rows as f64;
    let logits = decode_logits(p, &mean_state);
    let spearman_unigram = spearman(&softmax(&logits), unigram)?;

    let per = seqs.len() / n_batches;
    let means: Vec<Vec<f64>> = (0..n_batches)
        .map(|b| mean_rows(s, seqs[b * per..(b + 1) * per].iter().flat_map(|r| r.clone())))
        .collect();
    let mut batch_cosines = Vec::new();
    for i in 0..n_batches {
        for j in i + 1..n_batches {
            batch_cosines.push(cosine(&means[i], &means[j]));
        }
    }

    let mut running_cosines = Vec::new();
    let mut acc = vec![0.0; s.d];
    for t in 0..s.rows {
        for (a, v) in acc.iter_mut().zip(s.row(t)) {
            *a += v;
        }
        if RUNNING_CHECKPOINTS.contains(&(t + 1)) {
            running_cosines.push((t + 1, cosine(&acc, &mean_state)));
        }
    }

    let d_emb = p.config.d_emb;
    let mut mean_emb = vec![0.0; d_emb];
    for (v, w) in unigram.iter().enumerate() {
        for (m, e) in mean_emb.iter_mut().zip(p.emb.row(v)) {
            *m += w * e.f64();
        }
    }
    let top_tokens = top_k(&logits, top);
    let (control_overlap, control_cosine) = if d_emb == s.d {
        let control = top_k(&decode_logits(p, &mean_emb), top);
        let overlap = control.iter().filter(|(t, _)| top_tokens.iter().any(|(u, _)| u == t)).count();
        (overlap, cosine(&mean_emb, &mean_state))
    } else {
        (0, 0.0)
    };

    Ok(MeanDirectionReport {
        ratio: mean_norm / expected_norm,
        mean_state,
        mean_norm,
        expected_norm,
        logits,
        top_tokens,
        spearman_unigram,
        batch_cosines,
        running_cosines,
        control_overlap,
        control_cosine,
    })
}
