use super::states::StateMatrix;
use super::stats::cosine;
use crate::error::{GpnError, Result};
use crate::exec::{map_ordered, ExecPolicy};
use crate::model::DecayLog;
use serde::Serialize;

/// Mean cosine between states `k` apart, raw and after subtracting each
/// sequence's own mean state.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineCurves {
    pub lags: Vec<usize>,
    pub raw: Vec<f64>,
    pub centered: Vec<f64>,
    /// Some centered state was exactly zero (its cosines count as 0).
    pub degenerate: bool,
}

/// Powers of two from 1 up to `max_lag`.
pub fn log_lags(max_lag: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| k.checked_mul(2)).take_while(|k| *k <= max_lag).collect()
}

/// Pairs never cross a sequence boundary; every sequence must be longer than
/// the largest lag.
pub fn centered_cosine_curve(s: &StateMatrix, lags: &[usize], policy: ExecPolicy) -> Result<CosineCurves> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if let Some(short) = s.sequences().map(|r| r.len()).filter(|l| *l <= max_lag).min() {
        return Err(GpnError::Config(format!(
            "lag {max_lag} needs sequences of at least {} states, shortest has {short}",
            max_lag + 1
        )));
    }
    let d = s.d;
    let mut centered = s.data.clone();
    let mut degenerate = false;
    for seq in s.sequences() {
        let len = seq.len() as f64;
        let mut mean = vec![0.0; d];
        for i in seq.clone() {
            for (m, v) in mean.iter_mut().zip(s.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= len);
        for i in seq {
            let row = &mut centered[i * d..(i + 1) * d];
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
            degenerate |= row.iter().all(|v| *v == 0.0);
        }
    }
    let seqs: Vec<_> = s.sequences().collect();
    let curve = |data: &[f64]| -> Vec<f64> {
        map_ordered(policy, lags, |&k| {
            let (mut sum, mut count) = (0.0, 0usize);
            for seq in &seqs {
                for t in seq.start..seq.end - k {
                    sum += cosine(&data[t * d..(t + 1) * d], &data[(t + k) * d..(t + k + 1) * d]);
                    count += 1;
                }
            }
            sum / count as f64
        })
    };
    Ok(CosineCurves { lags: lags.to_vec(), raw: curve(&s.data), centered: curve(&centered), degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Fast,
    Slow,
}

impl std::fmt::Display for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pool::Fast => "fast",
            Pool::Slow => "slow",
        })
    }
}

/// Per-head memory retention.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionReport {
    /// Every lag `0..=max_lag`.
    pub lags: Vec<usize>,
    /// `curves[h][k]` is `R_h(k)`.
    pub curves: Vec<Vec<f64>>,
    /// Fractional lag where `R_h` reaches `1/e`; `None` if it never does
    /// within `max_lag`.
    pub half_lives: Vec<Option<f64>>,
    pub pools: Vec<Pool>,
    pub pool_threshold: f64,
    /// Start positions averaged over.
    pub starts: usize,
}

/// `R_h(k)`: the mean over start positions `t` of `∏_{τ=t+1..t+k} α_τ`, at
/// every lag up to `max_lag`. The same starts (those with `max_lag` steps
/// after them in their sequence) serve every lag.
pub fn retention_curves(
    log: &DecayLog,
    max_lag: usize,
    pool_threshold: f64,
    policy: ExecPolicy,
) -> Result<RetentionReport> {
    let h = log.heads;
    if h == 0 {
        return Err(GpnError::Config("decay log has no heads".into()));
    }
    let seqs: Vec<_> = log.sequences().filter(|r| r.len() > max_lag).collect();
    let starts: usize = seqs.iter().map(|r| r.len() - max_lag).sum();
    if starts == 0 {
        return Err(GpnError::Config(format!(
            "retention to lag {max_lag} needs a sequence of at least {} steps",
            max_lag + 1
        )));
    }
    let heads: Vec<usize> = (0..h).collect();
    let curves = map_ordered(policy, &heads, |&hh| {
        let mut sums = vec![0.0; max_lag + 1];
        for r in &seqs {
            // prefix[i] = Σ_{j < i} γ_j over this sequence.
            let mut prefix = Vec::with_capacity(r.len() + 1);
            let mut acc = 0.0;
            prefix.push(acc);
            for t in r.clone() {
                acc += log.log_alpha[t * h + hh];
                prefix.push(acc);
            }
            for t in 0..r.len() - max_lag {
                sums[0] += 1.0;
                for k in 1..=max_lag {
                    sums[k] += (prefix[t + k + 1] - prefix[t + 1]).exp();
                }
            }
        }
        sums.iter().map(|s| s / starts as f64).collect::<Vec<f64>>()
    });
    let half_lives: Vec<Option<f64>> = curves.iter().map(|c| half_life(c)).collect();
    let pools = half_lives
        .iter()
        .map(|hl| match hl {
            Some(k) if *k < pool_threshold => Pool::Fast,
            _ => Pool::Slow,
        })
        .collect();
    Ok(RetentionReport { lags: (0..=max_lag).collect(), curves, half_lives, pools, pool_threshold, starts })
}

/// First crossing of `1/e` in a curve sampled at every integer lag,
/// interpolated linearly in `ln R`.
pub fn half_life(curve: &[f64]) -> Option<f64> {
    let target = -1.0;
    let k = curve.iter().position(|r| *r <= (-1.0f64).exp())?;
    if k == 0 {
        return Some(0.0);
    }
    let (a, b) = (curve[k - 1].ln(), curve[k].ln());
    if !b.is_finite() || a == b {
        return Some(k as f64);
    }
    Some((k - 1) as f64 + (target - a) / (b - a))
}
