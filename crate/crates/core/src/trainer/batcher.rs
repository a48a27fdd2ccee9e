use crate::error::{GpnError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic batches of `seq_len + 1`-token windows.
///
/// Windows start at multiples of `seq_len` and are visited in a fresh
/// shuffled order every epoch. Batch `k` is a pure function of
/// `(seed, k)`, so resuming at any step reproduces the same stream.
#[derive(Debug, Clone)]
pub struct Batcher {
    tokens: Vec<u32>,
    batch: usize,
    seq_len: usize,
    seed: u64,
    windows: usize,
}

impl Batcher {
    pub fn new(tokens: Vec<u32>, batch: usize, seq_len: usize, seed: u64) -> Result<Self> {
        if batch == 0 || seq_len == 0 {
            return Err(GpnError::Config("batch and seq_len must be positive".into()));
        }
        if tokens.len() < seq_len + 2 {
            return Err(GpnError::Corpus(format!(
                "{} training tokens is too short for windows of {}",
                tokens.len(),
                seq_len + 1
            )));
        }
        let windows = (tokens.len() - 1) / seq_len;
        Ok(Self { tokens, batch, seq_len, seed, windows })
    }

    pub fn windows_per_epoch(&self) -> usize {
        self.windows
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.windows).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Start offsets of the windows in batch `step`.
    pub fn offsets(&self, step: u64) -> Vec<usize> {
        let first = step * self.batch as u64;
        let mut out = Vec::with_capacity(self.batch);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for i in first..first + self.batch as u64 {
            let epoch = i / self.windows as u64;
            let pos = (i % self.windows as u64) as usize;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, self.permutation(epoch)));
            }
            out.push(cached.as_ref().unwrap().1[pos] * self.seq_len);
        }
        out
    }

    /// Batch `step`: each row holds `seq_len + 1` tokens; row `t` is fed at
    /// step `t` and `t + 1` is its target.
    pub fn batch(&self, step: u64) -> Vec<Vec<u32>> {
        self.offsets(step)
            .into_iter()
            .map(|o| self.tokens[o..o + self.seq_len + 1].to_vec())
            .collect()
    }
}
