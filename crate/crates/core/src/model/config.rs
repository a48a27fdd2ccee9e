use crate::error::{GpnError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Whether Predict includes the matrix-memory read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "gpn")]
    Gpn,
    #[serde(rename = "gpn+m")]
    GpnM,
}

impl FromStr for Mode {
    type Err = GpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gpn" => Ok(Mode::Gpn),
            "gpn+m" | "gpnm" | "gpn-m" => Ok(Mode::GpnM),
            other => Err(GpnError::Usage(format!("unknown mode {other:?} (expected gpn or gpn+m)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gpn => "gpn",
            Mode::GpnM => "gpn+m",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub d_ffn: usize,
    pub d_emb: usize,
    pub vocab: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub mode: Mode,
    pub decoder_bias: bool,
    pub eps_norm: f64,
    /// Truncated-BPTT window; `None` backpropagates through the whole sequence.
    pub bptt_trunc: Option<usize>,
}

impl ModelConfig {
    /// Byte-level desk-scale model.
    pub fn desk(mode: Mode) -> Self {
        Self {
            d: 256,
            d_ffn: 682,
            d_emb: 256,
            vocab: 256,
            heads: 4,
            d_k: 32,
            d_v: 64,
            mode,
            decoder_bias: false,
            eps_norm: crate::numerics::DEFAULT_EPS,
            bptt_trunc: None,
        }
    }

    /// The 1-layer 130M-parameter configuration.
    pub fn paper_1l() -> Self {
        Self {
            d: 2496,
            d_ffn: 6656,
            d_emb: 2496,
            vocab: 32000,
            heads: 15,
            d_k: 128,
            d_v: 256,
            mode: Mode::GpnM,
            decoder_bias: false,
            eps_norm: crate::numerics::DEFAULT_EPS,
            bptt_trunc: None,
        }
    }

    pub fn has_memory(&self) -> bool {
        self.mode == Mode::GpnM
    }

    pub fn key_width(&self) -> usize {
        self.heads * self.d_k
    }

    pub fn value_width(&self) -> usize {
        self.heads * self.d_v
    }

    pub fn memory_cells(&self) -> usize {
        if self.has_memory() {
            self.heads * self.d_k * self.d_v
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("d_ffn", self.d_ffn),
            ("d_emb", self.d_emb),
            ("vocab", self.vocab),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(GpnError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab > u32::MAX as usize {
            return Err(GpnError::Config("vocab exceeds u32 token ids".into()));
        }
        if !(self.eps_norm > 0.0) {
            return Err(GpnError::Config("eps_norm must be positive".into()));
        }
        if self.bptt_trunc == Some(0) {
            return Err(GpnError::Config("bptt_trunc must be at least 1".into()));
        }
        Ok(())
    }
}
