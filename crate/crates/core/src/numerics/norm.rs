use super::Real;

pub const DEFAULT_EPS: f64 = 1e-6;

/// RMS-normalizes one row into `out` and returns `1/sqrt(mean(x²) + eps)`.
pub fn rmsnorm_row<R: Real>(x: &[R], gain: Option<&[R]>, eps: R, out: &mut [R]) -> R {
    let d = R::c(x.len() as f64);
    let ms = x.iter().fold(R::zero(), |acc, v| acc + *v * *v) / d;
    let inv = R::one() / (ms + eps).sqrt();
    match gain {
        Some(g) => {
            for ((o, v), gi) in out.iter_mut().zip(x).zip(g) {
                *o = *gi * *v * inv;
            }
        }
        None => {
            for (o, v) in out.iter_mut().zip(x) {
                *o = *v * inv;
            }
        }
    }
    inv
}

/// Adds the input adjoint of [`rmsnorm_row`] into `dx` and, when a gain is
/// present, its adjoint into `dgain`.
pub fn rmsnorm_row_backward<R: Real>(
    x: &[R],
    gain: Option<&[R]>,
    inv: R,
    dy: &[R],
    dx: &mut [R],
    dgain: Option<&mut [R]>,
) {
    let d = R::c(x.len() as f64);
    let mut proj = R::zero();
    match gain {
        Some(g) => {
            for ((v, gi), dyi) in x.iter().zip(g).zip(dy) {
                proj += *gi * *dyi * *v;
            }
        }
        None => {
            for (v, dyi) in x.iter().zip(dy) {
                proj += *dyi * *v;
            }
        }
    }
    let coef = proj * inv * inv * inv / d;
    for i in 0..x.len() {
        let gdy = match gain {
            Some(g) => g[i] * dy[i],
            None => dy[i],
        };
        dx[i] += gdy * inv - x[i] * coef;
    }
    if let Some(dg) = dgain {
        for i in 0..x.len() {
            dg[i] += dy[i] * x[i] * inv;
        }
    }
}

/// `gain ⊙ v / sqrt(mean(v²) + eps)`.
pub fn rmsnorm<R: Real>(v: &[R], eps: R, gain: Option<&[R]>) -> Vec<R> {
    let mut out = vec![R::zero(); v.len()];
    rmsnorm_row(v, gain, eps, &mut out);
    out
}

/// ReLU followed by ℓ2 normalization of one row; returns the pre-clamp norm.
pub fn relu_l2norm_row<R: Real>(v: &[R], eps: R, out: &mut [R]) -> R {
    let mut ss = R::zero();
    for (o, x) in out.iter_mut().zip(v) {
        *o = if *x > R::zero() { *x } else { R::zero() };
        ss += *o * *o;
    }
    let norm = ss.sqrt();
    let denom = norm.max(eps);
    for o in out.iter_mut() {
        *o /= denom;
    }
    norm
}

/// Adds the input adjoint of [`relu_l2norm_row`] into `dv`.
pub fn relu_l2norm_backward<R: Real>(v: &[R], y: &[R], norm: R, eps: R, dy: &[R], dv: &mut [R]) {
    if norm >= eps {
        let yd = y.iter().zip(dy).fold(R::zero(), |a, (p, q)| a + *p * *q);
        for i in 0..v.len() {
            if v[i] > R::zero() {
                dv[i] += (dy[i] - y[i] * yd) / norm;
            }
        }
    } else {
        for i in 0..v.len() {
            if v[i] > R::zero() {
                dv[i] += dy[i] / eps;
            }
        }
    }
}

/// `relu(v) / max(‖relu(v)‖₂, eps)`.
pub fn relu_l2norm<R: Real>(v: &[R], eps: R) -> Vec<R> {
    let mut out = vec![R::zero(); v.len()];
    relu_l2norm_row(v, eps, &mut out);
    out
}
