//! Post-hoc measurements on a trained model: state geometry, the mean
//! direction, and the temporal horizons of states and memory heads.
//!
//! Everything runs on states collected once by [`collect_states`]; the
//! reports are pure functions of that matrix, the decay log and the weights.

mod geometry;
mod horizon;
mod mean_direction;
mod states;
mod stats;

pub use geometry::{geometry_report, GeometryReport};
pub use horizon::{
    centered_cosine_curve, half_life, log_lags, retention_curves, CosineCurves, Pool, RetentionReport,
};
pub use mean_direction::{decode_logits, mean_direction_report, softmax, MeanDirectionReport, RUNNING_CHECKPOINTS};
pub use states::{collect_states, StateMatrix};
pub use stats::{average_ranks, cosine, mean, norm, pearson, spearman};

use std::fmt::Write as _;

/// Default lag between fast and slow memory heads, in tokens.
pub const DEFAULT_POOL_THRESHOLD: f64 = 4.0;

/// State cosine curves plus, for memory models, per-head retention.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReport {
    pub state: CosineCurves,
    pub memory: Option<RetentionReport>,
}

/// `dim,std` sorted by decreasing std.
pub fn geometry_csv(r: &GeometryReport) -> String {
    let mut s = String::from("dim,std\n");
    for (dim, sd) in &r.std_sorted {
        writeln!(s, "{dim},{sd}").unwrap();
    }
    s
}

/// Full correlation matrix with a `dim` column and one column per dimension.
pub fn corr_csv(r: &GeometryReport) -> String {
    let mut s = String::from("dim");
    for j in 0..r.d {
        write!(s, ",{j}").unwrap();
    }
    s.push('\n');
    for i in 0..r.d {
        write!(s, "{i}").unwrap();
        for j in 0..r.d {
            write!(s, ",{}", r.corr[i * r.d + j]).unwrap();
        }
        s.push('\n');
    }
    s
}

/// `component,cumvar`, components numbered from 1.
pub fn pca_csv(r: &GeometryReport) -> String {
    let mut s = String::from("component,cumvar\n");
    for (i, c) in r.cumvar.iter().enumerate() {
        writeln!(s, "{},{c}", i + 1).unwrap();
    }
    s
}

/// `token_id,logit,unigram_rank`, ordered by token id. Rank 1 is the most
/// frequent token; ties share their average rank.
pub fn mean_direction_csv(r: &MeanDirectionReport, unigram: &[f64]) -> String {
    let neg: Vec<f64> = unigram.iter().map(|p| -p).collect();
    let ranks = average_ranks(&neg);
    let mut s = String::from("token_id,logit,unigram_rank\n");
    for (t, l) in r.logits.iter().enumerate() {
        writeln!(s, "{t},{l},{}", ranks[t]).unwrap();
    }
    s
}

/// `lag,raw,centered`
pub fn horizons_state_csv(c: &CosineCurves) -> String {
    let mut s = String::from("lag,raw,centered\n");
    for ((k, r), c) in c.lags.iter().zip(&c.raw).zip(&c.centered) {
        writeln!(s, "{k},{r},{c}").unwrap();
    }
    s
}

/// `lag,head,retention`, lag-major.
pub fn horizons_memory_csv(r: &RetentionReport) -> String {
    let mut s = String::from("lag,head,retention\n");
    for &k in &r.lags {
        for (h, curve) in r.curves.iter().enumerate() {
            writeln!(s, "{k},{h},{}", curve[k]).unwrap();
        }
    }
    s
}

/// `head,k_1e,pool`; `k_1e` is empty when the curve never reaches `1/e`.
pub fn halflives_csv(r: &RetentionReport) -> String {
    let mut s = String::from("head,k_1e,pool\n");
    for (h, (hl, pool)) in r.half_lives.iter().zip(&r.pools).enumerate() {
        match hl {
            Some(k) => writeln!(s, "{h},{k},{pool}").unwrap(),
            None => writeln!(s, "{h},,{pool}").unwrap(),
        }
    }
    s
}
