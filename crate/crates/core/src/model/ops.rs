//! Single-sequence building blocks of one step, written directly from the
//! formulas with plain per-row dot products. The batched kernel in
//! `forward` is checked against these.

use super::forward::{step_into, StateBundle, Trace};
use super::params::Params;
use crate::error::{GpnError, Result};
use crate::numerics::{
    dot, relu_l2norm, rmsnorm, sigmoid, silu, softplus, swiglu_ffn, HeadTensor, Real, Tensor,
};

fn matvec<R: Real>(w: &Tensor<R>, x: &[R]) -> Vec<R> {
    (0..w.shape[0]).map(|i| dot(w.row(i), x)).collect()
}

fn check_token(token: u32, vocab: usize) -> Result<usize> {
    let t = token as usize;
    if t >= vocab {
        Err(GpnError::TokenOutOfRange { token: t, vocab })
    } else {
        Ok(t)
    }
}

/// `σ(W_f · rms(s^p)) ⊙ s^p + W_fuse · emb(x)`.
pub fn ground<R: Real>(s_p_prev: &[R], token: u32, p: &Params<R>) -> Result<Vec<R>> {
    let tok = check_token(token, p.config.vocab)?;
    let eps = R::c(p.config.eps_norm);
    let gate = matvec(&p.fuse_w, &rmsnorm(s_p_prev, eps, Some(&p.fuse_gain.data)));
    let fused = matvec(&p.w_fuse, p.emb.row(tok));
    Ok(s_p_prev
        .iter()
        .zip(&gate)
        .zip(&fused)
        .map(|((s, g), u)| sigmoid(*g) * *s + *u)
        .collect())
}

/// Per-head keys or queries: `relu_l2norm` applied to each head's slice.
fn head_vectors<R: Real>(w: &Tensor<R>, x: &[R], heads: usize, width: usize, eps: R) -> Vec<Vec<R>> {
    let pre = matvec(w, x);
    (0..heads).map(|h| relu_l2norm(&pre[h * width..(h + 1) * width], eps)).collect()
}

/// Gated delta-rule write. Returns the updated memory and the per-head
/// decay `α = exp(−e^A · softplus(W_a s^g))`.
pub fn mem_write<R: Real>(
    m_prev: &HeadTensor<R>,
    s_g_prev: &[R],
    s_g: &[R],
    p: &Params<R>,
) -> Result<(HeadTensor<R>, Vec<R>)> {
    let mp = p.mem.as_ref().ok_or_else(|| GpnError::Config("model has no memory".into()))?;
    let cfg = &p.config;
    let eps = R::c(cfg.eps_norm);
    let keys = head_vectors(&mp.w_k, s_g_prev, cfg.heads, cfg.d_k, eps);
    let v = matvec(&mp.w_v, s_g);
    let beta: Vec<R> = matvec(&mp.w_beta, s_g).into_iter().map(sigmoid).collect();
    let a_pre = matvec(&mp.w_a, s_g);
    let mut m = m_prev.clone();
    let mut alphas = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let alpha = (-mp.a.data[h].exp() * softplus(a_pre[h])).exp();
        m.write(h, &keys[h], &v[h * cfg.d_v..(h + 1) * cfg.d_v], alpha, beta[h]);
        alphas.push(alpha);
    }
    Ok((m, alphas))
}

/// The pre-gate read: per-head contraction of `M` with the query, concatenated.
pub fn mem_read_raw<R: Real>(m: &HeadTensor<R>, s_g: &[R], p: &Params<R>) -> Result<Vec<R>> {
    let mp = p.mem.as_ref().ok_or_else(|| GpnError::Config("model has no memory".into()))?;
    let cfg = &p.config;
    let queries = head_vectors(&mp.w_q, s_g, cfg.heads, cfg.d_k, R::c(cfg.eps_norm));
    Ok((0..cfg.heads).flat_map(|h| m.read(h, &queries[h])).collect())
}

/// `silu(W_rg s^g) ⊙ rms(M q) · W_o`.
pub fn mem_read<R: Real>(m: &HeadTensor<R>, s_g: &[R], p: &Params<R>) -> Result<Vec<R>> {
    let mp = p.mem.as_ref().ok_or_else(|| GpnError::Config("model has no memory".into()))?;
    let raw = mem_read_raw(m, s_g, p)?;
    let normed = rmsnorm(&raw, R::c(p.config.eps_norm), Some(&mp.read_gain.data));
    let gate = matvec(&mp.w_rg, s_g);
    let z: Vec<R> = gate.iter().zip(&normed).map(|(g, r)| silu(*g) * *r).collect();
    Ok(matvec(&mp.w_o, &z))
}

/// `σ(W_p · rms(s^g)) ⊙ s^g + FFN(rms(s^g))`, plus the memory read when the
/// model has memory (`m_post` is the memory after this step's write).
pub fn predict<R: Real>(s_g: &[R], m_post: Option<&HeadTensor<R>>, p: &Params<R>) -> Result<Vec<R>> {
    let cfg = &p.config;
    let eps = R::c(cfg.eps_norm);
    let gate = matvec(&p.pred_w, &rmsnorm(s_g, eps, Some(&p.pred_gain.data)));
    let ffn = swiglu_ffn(
        &rmsnorm(s_g, eps, Some(&p.ffn_gain.data)),
        &p.w1g.data,
        &p.w1v.data,
        &p.w2.data,
        cfg.d_ffn,
    );
    let mut out: Vec<R> = s_g
        .iter()
        .zip(&gate)
        .zip(&ffn)
        .map(|((s, g), f)| sigmoid(*g) * *s + *f)
        .collect();
    if p.mem.is_some() {
        let m = m_post.ok_or_else(|| GpnError::Config("gpn+m predict needs the memory".into()))?;
        for (o, r) in out.iter_mut().zip(mem_read(m, s_g, p)?) {
            *o += r;
        }
    }
    Ok(out)
}

/// Logits `W_dec · rms(s^p) [+ b]` and the cross-entropy against `target`.
pub fn decode_loss<R: Real>(s_p: &[R], target: u32, p: &Params<R>) -> Result<(Vec<R>, f64)> {
    let tgt = check_token(target, p.config.vocab)?;
    let mut logits = matvec(&p.dec_w, &rmsnorm(s_p, R::c(p.config.eps_norm), Some(&p.dec_gain.data)));
    if let Some(b) = &p.dec_bias {
        for (l, bb) in logits.iter_mut().zip(&b.data) {
            *l += *bb;
        }
    }
    let ce = cross_entropy(&logits, tgt);
    Ok((logits, ce))
}

/// `−log softmax(logits)[target]` with max subtraction.
pub fn cross_entropy<R: Real>(logits: &[R], target: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let lse = max + logits.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
    lse - logits[target].f64()
}

/// One full step on a single-row bundle: Ground, MemWrite, Predict, Decode.
/// Returns the next bundle, the step's CE, and its recorded activations.
pub fn step<R: Real>(
    bundle: &StateBundle<R>,
    token: u32,
    target: u32,
    p: &Params<R>,
) -> Result<(StateBundle<R>, f64, Trace<R>)> {
    if bundle.rows != 1 {
        return Err(GpnError::Shape("step takes a single-row bundle".into()));
    }
    let mut next = bundle.clone();
    let mut tr = Trace::new(p, 1, 1);
    tr.starts_fresh = *bundle == StateBundle::initial(p, 1);
    step_into(p, &mut next, &[token], &[target], &mut tr, 0)?;
    let ce = tr.ce[0];
    Ok((next, ce, tr))
}
