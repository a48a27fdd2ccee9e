use crate::error::{GpnError, Result};
use std::path::Path;

/// A byte stream with a contiguous validation tail.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub bytes: Vec<u8>,
    /// Index of the first validation byte.
    pub split: usize,
}

impl Corpus {
    /// Splits `bytes` so that the last `val_fraction` of the stream is validation.
    pub fn from_bytes(bytes: Vec<u8>, val_fraction: f64) -> Result<Self> {
        if bytes.is_empty() {
            return Err(GpnError::Corpus("corpus is empty".into()));
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(GpnError::Config(format!("val_fraction {val_fraction} not in [0, 1)")));
        }
        let val = (bytes.len() as f64 * val_fraction).round() as usize;
        let split = bytes.len() - val;
        Ok(Self { bytes, split })
    }

    pub fn train(&self) -> &[u8] {
        &self.bytes[..self.split]
    }

    pub fn val(&self) -> &[u8] {
        &self.bytes[self.split..]
    }
}

/// Reads a file of raw bytes and splits off the validation tail.
pub fn load_corpus(path: &Path, val_fraction: f64) -> Result<Corpus> {
    let bytes = std::fs::read(path)
        .map_err(|e| GpnError::Corpus(format!("cannot read {}: {e}", path.display())))?;
    if bytes.is_empty() {
        return Err(GpnError::Corpus(format!("{} is empty", path.display())));
    }
    Corpus::from_bytes(bytes, val_fraction)
}

/// Bytes as token ids.
pub fn tokens_of(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| b as u32).collect()
}

/// Normalized byte frequencies (vocab 256).
pub fn unigram_counts(split: &[u8]) -> Result<Vec<f64>> {
    if split.is_empty() {
        return Err(GpnError::Corpus("cannot count an empty split".into()));
    }
    let mut counts = [0u64; 256];
    for &b in split {
        counts[b as usize] += 1;
    }
    let n = split.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / n).collect())
}

/// Entropy in nats of a distribution, skipping zero-probability entries.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn split_sizes() {
        let c = Corpus::from_bytes(vec![7; 1000], 0.1).unwrap();
        assert_eq!((c.train().len(), c.val().len()), (900, 100));
        let c = Corpus::from_bytes(vec![7; 1000], 0.0).unwrap();
        assert_eq!((c.train().len(), c.val().len()), (1000, 0));
    }

    #[test]
    fn validation_is_the_tail() {
        let bytes: Vec<u8> = (0..=255).collect();
        let c = Corpus::from_bytes(bytes, 0.25).unwrap();
        assert_eq!(c.val()[0], 192);
        assert_eq!(*c.train().last().unwrap(), 191);
    }

    #[test]
    fn empty_or_missing_file_is_an_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(load_corpus(f.path(), 0.1), Err(GpnError::Corpus(_))));
        f.write_all(b"abc").unwrap();
        assert_eq!(load_corpus(f.path(), 0.0).unwrap().bytes, b"abc");
        assert!(load_corpus(Path::new("/nonexistent/corpus.txt"), 0.1).is_err());
    }

    #[test]
    fn unigram_properties() {
        let one = unigram_counts(&[65; 50]).unwrap();
        assert_eq!(one[65], 1.0);
        assert_eq!(one.iter().filter(|p| **p > 0.0).count(), 1);
        let all: Vec<u8> = (0..=255).cycle().take(256 * 40).collect();
        let u = unigram_counts(&all).unwrap();
        assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(u.iter().all(|p| (p - 1.0 / 256.0).abs() < 1e-12));
        assert!((entropy(&u) - 256f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&one), 0.0);
    }
}
