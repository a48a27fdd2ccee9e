use super::{silu, Real};

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = R::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// `y (+)= x · Wᵀ` for `rows` stacked inputs; `w` is `out × inp`.
pub fn linear<R: Real>(
    x: &[R],
    w: &[R],
    rows: usize,
    inp: usize,
    out: usize,
    y: &mut [R],
    accumulate: bool,
) {
    assert_eq!(x.len(), rows * inp, "linear: input shape");
    assert_eq!(w.len(), out * inp, "linear: weight shape");
    assert_eq!(y.len(), rows * out, "linear: output shape");
    if rows == 0 || out == 0 {
        return;
    }
    if inp == 0 {
        if !accumulate {
            y.fill(R::zero());
        }
        return;
    }
    let beta = if accumulate { R::one() } else { R::zero() };
    // SAFETY: shapes asserted above; y is a distinct &mut borrow.
    unsafe {
        R::gemm(
            rows,
            inp,
            out,
            R::one(),
            x.as_ptr(),
            inp as isize,
            1,
            w.as_ptr(),
            1,
            inp as isize,
            beta,
            y.as_mut_ptr(),
            out as isize,
            1,
        );
    }
}

/// `dx (+)= dy · W` — the input adjoint of [`linear`].
pub fn linear_input_grad<R: Real>(
    dy: &[R],
    w: &[R],
    rows: usize,
    inp: usize,
    out: usize,
    dx: &mut [R],
    accumulate: bool,
) {
    assert_eq!(dy.len(), rows * out, "linear_input_grad: dy shape");
    assert_eq!(w.len(), out * inp, "linear_input_grad: weight shape");
    assert_eq!(dx.len(), rows * inp, "linear_input_grad: dx shape");
    if rows == 0 || inp == 0 {
        return;
    }
    if out == 0 {
        if !accumulate {
            dx.fill(R::zero());
        }
        return;
    }
    let beta = if accumulate { R::one() } else { R::zero() };
    // SAFETY: shapes asserted above.
    unsafe {
        R::gemm(
            rows,
            out,
            inp,
            R::one(),
            dy.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            beta,
            dx.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

/// `dw += dyᵀ · x` summed over `n` rows — the weight adjoint of [`linear`].
pub fn linear_weight_grad<R: Real>(
    dy: &[R],
    x: &[R],
    n: usize,
    inp: usize,
    out: usize,
    dw: &mut [R],
) {
    assert_eq!(dy.len(), n * out, "linear_weight_grad: dy shape");
    assert_eq!(x.len(), n * inp, "linear_weight_grad: x shape");
    assert_eq!(dw.len(), out * inp, "linear_weight_grad: dw shape");
    if n == 0 || inp == 0 || out == 0 {
        return;
    }
    // SAFETY: shapes asserted above.
    unsafe {
        R::gemm(
            out,
            n,
            inp,
            R::one(),
            dy.as_ptr(),
            1,
            out as isize,
            x.as_ptr(),
            inp as isize,
            1,
            R::one(),
            dw.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

/// SwiGLU feed-forward `(silu(W1g x) ⊙ W1v x) W2` for one input vector.
///
/// The caller applies any pre-norm. Weight shapes: `w1g`, `w1v` are
/// `d_ffn × d`, `w2` is `d × d_ffn`.
pub fn swiglu_ffn<R: Real>(x: &[R], w1g: &[R], w1v: &[R], w2: &[R], d_ffn: usize) -> Vec<R> {
    let d = x.len();
    let mut hg = vec![R::zero(); d_ffn];
    let mut hv = vec![R::zero(); d_ffn];
    linear(x, w1g, 1, d, d_ffn, &mut hg, false);
    linear(x, w1v, 1, d, d_ffn, &mut hv, false);
    let h: Vec<R> = hg.iter().zip(&hv).map(|(g, v)| silu(*g) * *v).collect();
    let mut out = vec![R::zero(); d];
    linear(&h, w2, 1, d_ffn, d, &mut out, false);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_linear(x: &[f64], w: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            for o in 0..out {
                for i in 0..inp {
                    y[r * out + o] += x[r * inp + i] * w[o * inp + i];
                }
            }
        }
        y
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7 + 3) % 11) as f64 * scale - 0.4).collect()
    }

    #[test]
    fn linear_and_adjoints_match_naive() {
        let (rows, inp, out) = (3, 5, 4);
        let x = seq(rows * inp, 0.1);
        let w = seq(out * inp, 0.07);
        let mut y = vec![0.0; rows * out];
        linear(&x, &w, rows, inp, out, &mut y, false);
        let y_ref = naive_linear(&x, &w, rows, inp, out);
        for (a, b) in y.iter().zip(&y_ref) {
            assert!((a - b).abs() < 1e-12);
        }

        let dy = seq(rows * out, 0.05);
        let mut dx = vec![0.0; rows * inp];
        linear_input_grad(&dy, &w, rows, inp, out, &mut dx, false);
        for r in 0..rows {
            for i in 0..inp {
                let want: f64 = (0..out).map(|o| dy[r * out + o] * w[o * inp + i]).sum();
                assert!((dx[r * inp + i] - want).abs() < 1e-12);
            }
        }

        let mut dw = vec![1.0; out * inp];
        linear_weight_grad(&dy, &x, rows, inp, out, &mut dw);
        for o in 0..out {
            for i in 0..inp {
                let want: f64 = 1.0 + (0..rows).map(|r| dy[r * out + o] * x[r * inp + i]).sum::<f64>();
                assert!((dw[o * inp + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_adds_onto_existing_output() {
        let x = [1.0f64, 2.0];
        let w = [3.0f64, 4.0];
        let mut y = [10.0f64];
        linear(&x, &w, 1, 2, 1, &mut y, true);
        assert_eq!(y[0], 21.0);
    }

    #[test]
    fn swiglu_zero_input_and_closed_gate() {
        let d = 3;
        let dffn = 4;
        let w1g = seq(dffn * d, 0.2);
        let w1v = seq(dffn * d, 0.3);
        let w2 = seq(d * dffn, 0.1);
        assert!(swiglu_ffn(&[0.0; 3], &w1g, &w1v, &w2, dffn).iter().all(|v| *v == 0.0));
        let zeros = vec![0.0; dffn * d];
        let x = [0.5, -1.0, 2.0];
        assert!(swiglu_ffn(&x, &zeros, &w1v, &w2, dffn).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn swiglu_matches_scalar_evaluation() {
        // 3-dim input, hidden width 2, every term expanded by hand.
        let x = [0.3f64, -0.8, 1.1];
        let w1g = [0.5, -0.2, 0.1, -0.4, 0.9, 0.3];
        let w1v = [1.0, 0.0, -0.5, 0.2, 0.2, 0.2];
        let w2 = [0.7, -1.0, 0.0, 0.5, 1.5, 0.25];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let g0 = 0.5 * 0.3 + -0.2 * -0.8 + 0.1 * 1.1;
        let g1 = -0.4 * 0.3 + 0.9 * -0.8 + 0.3 * 1.1;
        let v0 = 1.0 * 0.3 + 0.0 * -0.8 + -0.5 * 1.1;
        let v1 = 0.2 * 0.3 + 0.2 * -0.8 + 0.2 * 1.1;
        let h0 = g0 * sig(g0) * v0;
        let h1 = g1 * sig(g1) * v1;
        let want = [0.7 * h0 - 1.0 * h1, 0.0 * h0 + 0.5 * h1, 1.5 * h0 + 0.25 * h1];
        let got = swiglu_ffn(&x, &w1g, &w1v, &w2, 2);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
}
