use super::states::StateMatrix;
use super::stats::norm;
use crate::error::{GpnError, Result};
use crate::numerics::Real;
use nalgebra::{DMatrix, SymmetricEigen};

/// Spectral and marginal statistics of a state matrix.
///
/// Standard deviations and covariances are population statistics (divide by
/// the row count). Correlations involving a constant dimension are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    pub rows: usize,
    pub d: usize,
    /// Per-dimension standard deviation, indexed by dimension.
    pub std_by_dim: Vec<f64>,
    /// `(dim, std)` sorted by decreasing std.
    pub std_sorted: Vec<(usize, f64)>,
    /// `d × d` Pearson correlation matrix.
    pub corr: Vec<f64>,
    pub mean_abs_offdiag_corr: f64,
    pub max_abs_offdiag_corr: f64,
    /// Covariance eigenvalues of the centered rows, decreasing, clamped at 0.
    pub eigenvalues: Vec<f64>,
    /// Cumulative explained-variance fraction over `eigenvalues`.
    pub cumvar: Vec<f64>,
    pub n_components_90: usize,
    pub n_components_99: usize,
    /// `‖X‖_F² / σ_max²` of the raw rows.
    pub stable_rank_raw: f64,
    /// `‖X_c‖_F² / σ_max²` of the per-dimension centered rows.
    pub stable_rank_centered: f64,
    /// `(Σλ)² / Σλ²` of the centered covariance spectrum.
    pub participation_ratio: f64,
    pub mean_norm: f64,
    pub std_norm: f64,
    /// Fewer rows than dimensions: the spectrum is rank-deficient.
    pub underdetermined: bool,
}

/// `XᵀX` for a row-major `rows × d` matrix.
fn gram(x: &[f64], rows: usize, d: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    // SAFETY: strides describe `x` as rows × d (read as its transpose) and
    // `g` as d × d, both fully in bounds.
    unsafe {
        f64::gemm(d, rows, d, 1.0, x.as_ptr(), 1, d as isize, x.as_ptr(), d as isize, 1, 0.0, g.as_mut_ptr(), d as isize, 1);
    }
    g
}

fn symmetric_eigenvalues(m: Vec<f64>, d: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &m)).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

fn stable_rank(x: &[f64], rows: usize, d: usize) -> f64 {
    let fro: f64 = x.iter().map(|v| v * v).sum();
    if fro == 0.0 {
        return 0.0;
    }
    let top = symmetric_eigenvalues(gram(x, rows, d), d)[0];
    fro / top
}

fn count_to(cumvar: &[f64], level: f64) -> usize {
    cumvar.iter().position(|c| *c >= level - 1e-12).map_or(cumvar.len(), |i| i + 1)
}

pub fn geometry_report(s: &StateMatrix) -> Result<GeometryReport> {
    let (n, d) = (s.rows, s.d);
    if n < 2 {
        return Err(GpnError::Shape("geometry needs at least two rows".into()));
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(s.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut centered = s.data.clone();
    for row in centered.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    let cov: Vec<f64> = gram(&centered, n, d).into_iter().map(|v| v / nf).collect();
    let std_by_dim: Vec<f64> = (0..d).map(|i| cov[i * d + i].max(0.0).sqrt()).collect();
    let mut std_sorted: Vec<(usize, f64)> = std_by_dim.iter().copied().enumerate().collect();
    std_sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut corr = vec![0.0; d * d];
    let (mut sum_abs, mut max_abs) = (0.0f64, 0.0f64);
    for i in 0..d {
        for j in 0..d {
            let c = if i == j {
                1.0
            } else if std_by_dim[i] > 0.0 && std_by_dim[j] > 0.0 {
                (cov[i * d + j] / (std_by_dim[i] * std_by_dim[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            corr[i * d + j] = c;
            if i != j {
                sum_abs += c.abs();
                max_abs = max_abs.max(c.abs());
            }
        }
    }
    let pairs = (d * d - d).max(1) as f64;

    let eigenvalues: Vec<f64> = symmetric_eigenvalues(cov, d).into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let (cumvar, participation_ratio) = if total > 0.0 {
        let mut acc = 0.0;
        let cv = eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                acc / total
            })
            .collect();
        (cv, total * total / eigenvalues.iter().map(|l| l * l).sum::<f64>())
    } else {
        (vec![1.0; d], 0.0)
    };
    let (n90, n99) = if total > 0.0 { (count_to(&cumvar, 0.9), count_to(&cumvar, 0.99)) } else { (0, 0) };

    let norms: Vec<f64> = (0..n).map(|i| norm(s.row(i))).collect();
    let mean_norm = norms.iter().sum::<f64>() / nf;
    let std_norm = (norms.iter().map(|v| (v - mean_norm).powi(2)).sum::<f64>() / nf).sqrt();

    Ok(GeometryReport {
        rows: n,
        d,
        std_by_dim,
        std_sorted,
        corr,
        mean_abs_offdiag_corr: sum_abs / pairs,
        max_abs_offdiag_corr: max_abs,
        eigenvalues,
        cumvar,
        n_components_90: n90,
        n_components_99: n99,
        stable_rank_raw: stable_rank(&s.data, n, d),
        stable_rank_centered: stable_rank(&centered, n, d),
        participation_ratio,
        mean_norm,
        std_norm,
        underdetermined: n < d,
    })
}
