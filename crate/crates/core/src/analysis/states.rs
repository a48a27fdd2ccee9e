use crate::error::{GpnError, Result};
use crate::exec::{chunk_ranges, map_ordered, ExecPolicy};
use crate::model::{DecayLog, Params, Stepper};
use crate::numerics::Real;
use crate::trainer::EVAL_ROWS;

/// Predicted states `s^p_t`, one row per step, with sequence boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub rows: usize,
    pub d: usize,
    /// Row-major `rows × d`.
    pub data: Vec<f64>,
    /// Start row of each sequence plus the total row count.
    pub boundaries: Vec<usize>,
}

impl StateMatrix {
    pub fn from_rows(d: usize, data: Vec<f64>, boundaries: Vec<usize>) -> Result<Self> {
        if d == 0 || !data.len().is_multiple_of(d) {
            return Err(GpnError::Shape(format!("{} values do not form rows of {d}", data.len())));
        }
        let rows = data.len() / d;
        if boundaries.first() != Some(&0)
            || boundaries.last() != Some(&rows)
            || boundaries.windows(2).any(|w| w[0] > w[1])
        {
            return Err(GpnError::Shape("sequence boundaries must run from 0 to the row count".into()));
        }
        if rows < 2 {
            return Err(GpnError::Shape("at least two state rows are required".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GpnError::NonFinite("state matrix".into()));
        }
        Ok(Self { rows, d, data, boundaries })
    }

    /// A single sequence.
    pub fn single(d: usize, data: Vec<f64>) -> Result<Self> {
        let rows = data.len().checked_div(d).unwrap_or(0);
        Self::from_rows(d, data, vec![0, rows])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn sequences(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }
}

/// Forward-only pass over consecutive windows of `window` tokens taken from
/// `data`, each starting from the initial state, recording every predicted
/// state and every per-head decay. Uses `n_tokens / window` windows.
pub fn collect_states<R: Real>(
    p: &Params<R>,
    data: &[u32],
    n_tokens: usize,
    window: usize,
    policy: ExecPolicy,
) -> Result<(StateMatrix, DecayLog)> {
    if window == 0 || n_tokens < window {
        return Err(GpnError::Config(format!("cannot cut {n_tokens} tokens into windows of {window}")));
    }
    let windows = n_tokens / window;
    let needed = windows * window + 1;
    if data.len() < needed {
        return Err(GpnError::Corpus(format!("state collection needs {needed} tokens, got {}", data.len())));
    }
    let d = p.config.d;
    let h = p.config.heads;
    let groups = chunk_ranges(windows, EVAL_ROWS);
    let parts = map_ordered(policy, &groups, |range| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let n = range.len();
        let mut st = Stepper::new(p, n);
        let mut states = vec![Vec::with_capacity(window * d); n];
        let mut decays = vec![Vec::with_capacity(window * h); n];
        let mut inp = vec![0u32; n];
        let mut tgt = vec![0u32; n];
        for t in 0..window {
            for (b, w) in range.clone().enumerate() {
                inp[b] = data[w * window + t];
                tgt[b] = data[w * window + t + 1];
            }
            st.step(p, &inp, &tgt)?;
            let gamma = st.last_log_decay(p);
            for b in 0..n {
                states[b].extend(st.state.state(b).iter().map(|v| v.f64()));
                if !gamma.is_empty() {
                    decays[b].extend_from_slice(&gamma[b * h..(b + 1) * h]);
                }
            }
        }
        Ok((states, decays))
    });
    let mut data_out = Vec::with_capacity(windows * window * d);
    let mut boundaries = vec![0];
    let mut log = DecayLog::new(if p.config.has_memory() { h } else { 0 });
    for part in parts {
        let (states, decays) = part?;
        for (s, g) in states.into_iter().zip(decays) {
            data_out.extend(s);
            boundaries.push(data_out.len() / d);
            if p.config.has_memory() {
                log.push_sequence(&g);
            }
        }
    }
    Ok((StateMatrix::from_rows(d, data_out, boundaries)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_sequence, random_params, Mode, ModelConfig};

    #[test]
    fn states_and_decays_match_the_training_forward() {
        let cfg = ModelConfig { d: 8, d_ffn: 12, d_emb: 8, vocab: 16, heads: 3, d_k: 2, d_v: 2, ..ModelConfig::desk(Mode::GpnM) };
        let p = random_params::<f64>(&cfg, 1, 0.3).unwrap();
        let data: Vec<u32> = (0..61).map(|i| (i * 7 % 16) as u32).collect();
        let (s, log) = collect_states(&p, &data, 60, 20, ExecPolicy::Auto).unwrap();
        assert_eq!((s.rows, s.d), (60, 8));
        assert_eq!(s.boundaries, vec![0, 20, 40, 60]);
        assert_eq!((log.steps(), log.heads), (60, 3));
        let fwd = forward_sequence(&p, &data[20..41]).unwrap();
        let last = fwd.state.state(0);
        for (a, b) in s.row(39).iter().zip(last) {
            assert!((a - b).abs() < 1e-12);
        }
        for t in 0..20 {
            for hh in 0..3 {
                assert!((log.log_alpha[(20 + t) * 3 + hh] - fwd.decay.log_alpha[t * 3 + hh]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_little_data_is_an_error() {
        let cfg = ModelConfig { d: 4, d_ffn: 4, d_emb: 4, vocab: 8, heads: 1, d_k: 1, d_v: 1, ..ModelConfig::desk(Mode::Gpn) };
        let p = random_params::<f32>(&cfg, 1, 0.3).unwrap();
        assert!(collect_states(&p, &[1, 2, 3], 10, 5, ExecPolicy::Auto).is_err());
    }
}
