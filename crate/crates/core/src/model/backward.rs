//! Reverse-mode BPTT over a recorded [`Trace`].
//!
//! Adjoints flow backwards through three recurrent edges: the predicted state
//! `s^p`, the matrix memory `M`, and the grounded state `s^g` (which feeds the
//! next step's key). Weight gradients are deferred: each step only stores the
//! adjoint of every linear layer's output, and after the sweep one GEMM per
//! weight matrix sums `δᵀ·x` over all steps and rows.

use super::forward::{slot, Trace};
use super::params::{ParamGrads, Params};
use crate::error::{GpnError, Result};
use crate::numerics::{
    linear_input_grad, linear_weight_grad, relu_l2norm_backward, rmsnorm_row_backward, sigmoid,
    silu, silu_grad, Real,
};

/// Gradient of the mean per-step CE over every row and step of the trace.
pub fn backward_bptt<R: Real>(p: &Params<R>, tr: &Trace<R>, trunc: Option<usize>) -> Result<ParamGrads<R>> {
    let n = tr.len * tr.rows;
    let w = vec![R::one() / R::c(n.max(1) as f64); n];
    backward_weighted(p, tr, &w, trunc)
}

/// Gradient of `Σ w[t,b] · CE[t,b]`; `weights` is time-major (`t·rows + b`).
///
/// With `trunc = Some(L)`, recurrent adjoints are cut every `L` steps while
/// every loss term still contributes.
pub fn backward_weighted<R: Real>(
    p: &Params<R>,
    tr: &Trace<R>,
    weights: &[R],
    trunc: Option<usize>,
) -> Result<ParamGrads<R>> {
    if !tr.matches(p) {
        return Err(GpnError::Shape("trace was recorded with a different model shape".into()));
    }
    let rows = tr.rows;
    let steps = tr.len;
    if weights.len() != steps * rows {
        return Err(GpnError::Shape(format!(
            "{} loss weights for {} positions",
            weights.len(),
            steps * rows
        )));
    }
    if trunc == Some(0) {
        return Err(GpnError::Config("truncation window must be positive".into()));
    }
    let dm = tr.dims;
    let (d, vocab, dffn) = (dm.d, dm.vocab, dm.d_ffn);
    let rd = rows * d;
    let n = steps * rows;
    let eps = R::c(p.config.eps_norm);
    let zero = R::zero();
    let one = R::one();

    let mut g = ParamGrads::<R>::zeros(&p.config);

    // Output adjoints of every linear layer, kept for the deferred weight GEMMs.
    let mut d_logits = vec![zero; n * vocab];
    let mut d_sp = vec![zero; n * d];
    let mut d_ap = vec![zero; n * d];
    let mut d_hg = vec![zero; n * dffn];
    let mut d_hv = vec![zero; n * dffn];
    let mut d_af = vec![zero; n * d];
    let mut d_u = vec![zero; n * d];
    let has_mem = tr.mem.is_some();
    let mw = |w: usize| if has_mem { vec![zero; n * w] } else { Vec::new() };
    let mut d_kpre = mw(dm.kw);
    let mut d_v = mw(dm.vw);
    let mut d_bpre = mw(dm.heads);
    let mut d_apre = mw(dm.heads);
    let mut d_qpre = mw(dm.kw);
    let mut d_gpre = mw(dm.vw);

    // Recurrent carries into step t from step t + 1.
    let mut c_sp = vec![zero; rd];
    let mut c_sg = vec![zero; rd];
    let mut c_m = vec![zero; rows * dm.cells];

    let mut dn = vec![zero; rd];
    let mut ds_g = vec![zero; rd];
    let mut dh = vec![zero; rows * dffn];
    let mut dz = vec![zero; rows * dm.vw];
    let mut drn = vec![zero; rows * dm.vw];
    let mut dr = vec![zero; rows * dm.vw];
    let mut dq = vec![zero; rows * dm.kw];
    let mut dk = vec![zero; rows * dm.kw];

    for t in (0..steps).rev() {
        let probs = tr.at(&tr.probs, t);
        let targets = &tr.targets[t * rows..(t + 1) * rows];
        let w = &weights[t * rows..(t + 1) * rows];
        let sp = tr.at(&tr.sp, t);
        let sg = tr.at(&tr.sg, t);

        // Decode.
        let dl = slot(&mut d_logits, t, rows * vocab);
        for b in 0..rows {
            let row = &mut dl[b * vocab..(b + 1) * vocab];
            for (o, pr) in row.iter_mut().zip(&probs[b * vocab..(b + 1) * vocab]) {
                *o = w[b] * *pr;
            }
            row[targets[b] as usize] -= w[b];
        }
        if let Some(gb) = &mut g.dec_bias {
            for b in 0..rows {
                for (o, x) in gb.data.iter_mut().zip(&dl[b * vocab..(b + 1) * vocab]) {
                    *o += *x;
                }
            }
        }
        linear_input_grad(dl, &p.dec_w.data, rows, d, vocab, &mut dn, false);
        let dsp = slot(&mut d_sp, t, rd);
        dsp.copy_from_slice(&c_sp);
        let inv_d = tr.at(&tr.inv_d, t);
        for b in 0..rows {
            let s = b * d..(b + 1) * d;
            rmsnorm_row_backward(
                &sp[s.clone()],
                Some(&p.dec_gain.data),
                inv_d[b],
                &dn[s.clone()],
                &mut dsp[s],
                Some(&mut g.dec_gain.data),
            );
        }

        // Predict gate: s^p = p ⊙ s^g + ...
        let pg = tr.at(&tr.p, t);
        let dap = slot(&mut d_ap, t, rd);
        for i in 0..rd {
            ds_g[i] = dsp[i] * pg[i] + c_sg[i];
            dap[i] = dsp[i] * sg[i] * pg[i] * (one - pg[i]);
        }
        linear_input_grad(dap, &p.pred_w.data, rows, d, d, &mut dn, false);
        let inv_p = tr.at(&tr.inv_p, t);
        for b in 0..rows {
            let s = b * d..(b + 1) * d;
            rmsnorm_row_backward(
                &sg[s.clone()],
                Some(&p.pred_gain.data),
                inv_p[b],
                &dn[s.clone()],
                &mut ds_g[s],
                Some(&mut g.pred_gain.data),
            );
        }

        // SwiGLU FFN.
        linear_input_grad(dsp, &p.w2.data, rows, dffn, d, &mut dh, false);
        let hg = tr.at(&tr.hg, t);
        let hv = tr.at(&tr.hv, t);
        let dhg = slot(&mut d_hg, t, rows * dffn);
        let dhv = slot(&mut d_hv, t, rows * dffn);
        for i in 0..rows * dffn {
            dhg[i] = dh[i] * hv[i] * silu_grad(hg[i]);
            dhv[i] = dh[i] * silu(hg[i]);
        }
        linear_input_grad(dhg, &p.w1g.data, rows, d, dffn, &mut dn, false);
        linear_input_grad(dhv, &p.w1v.data, rows, d, dffn, &mut dn, true);
        let inv_ffn = tr.at(&tr.inv_ffn, t);
        for b in 0..rows {
            let s = b * d..(b + 1) * d;
            rmsnorm_row_backward(
                &sg[s.clone()],
                Some(&p.ffn_gain.data),
                inv_ffn[b],
                &dn[s.clone()],
                &mut ds_g[s],
                Some(&mut g.ffn_gain.data),
            );
        }

        if let (Some(mp), Some(mt), Some(gm)) = (&p.mem, &tr.mem, &mut g.mem) {
            let (h, dkw, dvw) = (dm.heads, dm.d_k, dm.d_v);
            let (kw, vw, cell) = (dm.kw, dm.vw, dm.d_k * dm.d_v);

            // MemRead: silu(W_rg s^g) ⊙ rms(M q) · W_o
            linear_input_grad(dsp, &mp.w_o.data, rows, vw, d, &mut dz, false);
            let rn = tr.at(&mt.rn, t);
            let gt = tr.at(&mt.gt, t);
            let gpre = tr.at(&mt.gpre, t);
            let dgp = slot(&mut d_gpre, t, rows * vw);
            for i in 0..rows * vw {
                drn[i] = dz[i] * gt[i];
                dgp[i] = dz[i] * rn[i] * silu_grad(gpre[i]);
            }
            linear_input_grad(dgp, &mp.w_rg.data, rows, d, vw, &mut ds_g, true);
            dr.fill(zero);
            let r = tr.at(&mt.r, t);
            let inv_r = tr.at(&mt.inv_r, t);
            for b in 0..rows {
                let s = b * vw..(b + 1) * vw;
                rmsnorm_row_backward(
                    &r[s.clone()],
                    Some(&mp.read_gain.data),
                    inv_r[b],
                    &drn[s.clone()],
                    &mut dr[s],
                    Some(&mut gm.read_gain.data),
                );
            }
            let m_post = tr.m_post(t).expect("memory trace");
            let q = tr.at(&mt.q, t);
            for bh in 0..rows * h {
                let mh = &m_post[bh * cell..(bh + 1) * cell];
                let dmh = &mut c_m[bh * cell..(bh + 1) * cell];
                let qh = &q[bh * dkw..(bh + 1) * dkw];
                let drh = &dr[bh * dvw..(bh + 1) * dvw];
                for i in 0..dkw {
                    let mut acc = zero;
                    for j in 0..dvw {
                        dmh[i * dvw + j] += qh[i] * drh[j];
                        acc += mh[i * dvw + j] * drh[j];
                    }
                    dq[bh * dkw + i] = acc;
                }
            }
            let qpre = tr.at(&mt.qpre, t);
            let qnorm = tr.at(&mt.qnorm, t);
            let dqp = slot(&mut d_qpre, t, rows * kw);
            for bh in 0..rows * h {
                let s = bh * dkw..(bh + 1) * dkw;
                relu_l2norm_backward(&qpre[s.clone()], &q[s.clone()], qnorm[bh], eps, &dq[s.clone()], &mut dqp[s]);
            }
            linear_input_grad(dqp, &mp.w_q.data, rows, d, kw, &mut ds_g, true);

            // MemWrite: M = α·M_prev + β·k ⊗ (v − M_prevᵀk)
            let m_prev = tr.at(&mt.m_prev, t);
            let k = tr.at(&mt.k, t);
            let err = tr.at(&mt.err, t);
            let alpha = tr.at(&mt.alpha, t);
            let beta = tr.at(&mt.beta, t);
            let gamma = tr.at(&mt.gamma, t);
            let apre = tr.at(&mt.apre, t);
            let dvt = slot(&mut d_v, t, rows * vw);
            let dbp = slot(&mut d_bpre, t, rows * h);
            let dapr = slot(&mut d_apre, t, rows * h);
            for bh in 0..rows * h {
                let head = bh % h;
                let mp_h = &m_prev[bh * cell..(bh + 1) * cell];
                let dmh = &mut c_m[bh * cell..(bh + 1) * cell];
                let kh = &k[bh * dkw..(bh + 1) * dkw];
                let eh = &err[bh * dvw..(bh + 1) * dvw];
                let (a, bt) = (alpha[bh], beta[bh]);
                let derr = &mut dvt[bh * dvw..(bh + 1) * dvw];
                let dkh = &mut dk[bh * dkw..(bh + 1) * dkw];
                let mut d_alpha = zero;
                let mut d_beta = zero;
                for i in 0..dkw {
                    let mut u = zero;
                    for j in 0..dvw {
                        let g_ij = dmh[i * dvw + j];
                        d_alpha += g_ij * mp_h[i * dvw + j];
                        u += g_ij * eh[j];
                        derr[j] += g_ij * kh[i];
                    }
                    d_beta += kh[i] * u;
                    dkh[i] = bt * u;
                }
                for e in derr.iter_mut() {
                    *e *= bt;
                }
                for i in 0..dkw {
                    let mut acc = zero;
                    for j in 0..dvw {
                        acc += mp_h[i * dvw + j] * derr[j];
                        dmh[i * dvw + j] = a * dmh[i * dvw + j] - kh[i] * derr[j];
                    }
                    dkh[i] -= acc;
                }
                let d_gamma = d_alpha * a;
                gm.a.data[head] += d_gamma * gamma[bh];
                dapr[bh] = -mp.a.data[head].exp() * d_gamma * sigmoid(apre[bh]);
                dbp[bh] = d_beta * bt * (one - bt);
            }
            linear_input_grad(dvt, &mp.w_v.data, rows, d, vw, &mut ds_g, true);
            linear_input_grad(dbp, &mp.w_beta.data, rows, d, h, &mut ds_g, true);
            linear_input_grad(dapr, &mp.w_a.data, rows, d, h, &mut ds_g, true);
            let kpre = tr.at(&mt.kpre, t);
            let knorm = tr.at(&mt.knorm, t);
            let dkp = slot(&mut d_kpre, t, rows * kw);
            for bh in 0..rows * h {
                let s = bh * dkw..(bh + 1) * dkw;
                relu_l2norm_backward(&kpre[s.clone()], &k[s.clone()], knorm[bh], eps, &dk[s.clone()], &mut dkp[s]);
            }
            linear_input_grad(dkp, &mp.w_k.data, rows, d, kw, &mut c_sg, false);
        }

        // Ground: s^g = f ⊙ s^p_prev + W_fuse·emb(x)
        let sp_prev = tr.at(&tr.sp_prev, t);
        let f = tr.at(&tr.f, t);
        let daf = slot(&mut d_af, t, rd);
        slot(&mut d_u, t, rd).copy_from_slice(&ds_g);
        for i in 0..rd {
            daf[i] = ds_g[i] * sp_prev[i] * f[i] * (one - f[i]);
            c_sp[i] = ds_g[i] * f[i];
        }
        linear_input_grad(daf, &p.fuse_w.data, rows, d, d, &mut dn, false);
        let inv_f = tr.at(&tr.inv_f, t);
        for b in 0..rows {
            let s = b * d..(b + 1) * d;
            rmsnorm_row_backward(
                &sp_prev[s.clone()],
                Some(&p.fuse_gain.data),
                inv_f[b],
                &dn[s.clone()],
                &mut c_sp[s],
                Some(&mut g.fuse_gain.data),
            );
        }

        if let Some(window) = trunc {
            if t > 0 && t % window == 0 {
                c_sp.fill(zero);
                c_sg.fill(zero);
                c_m.fill(zero);
            }
        }
    }

    if tr.starts_fresh {
        for b in 0..rows {
            for i in 0..d {
                g.s0.data[i] += c_sp[b * d + i] + c_sg[b * d + i];
            }
        }
    }

    linear_weight_grad(&d_logits, &tr.n_d[..n * d], n, d, vocab, &mut g.dec_w.data);
    linear_weight_grad(&d_ap, &tr.n_p[..n * d], n, d, d, &mut g.pred_w.data);
    linear_weight_grad(&d_hg, &tr.n_ffn[..n * d], n, d, dffn, &mut g.w1g.data);
    linear_weight_grad(&d_hv, &tr.n_ffn[..n * d], n, d, dffn, &mut g.w1v.data);
    linear_weight_grad(&d_sp, &tr.h[..n * dffn], n, dffn, d, &mut g.w2.data);
    linear_weight_grad(&d_af, &tr.n_f[..n * d], n, d, d, &mut g.fuse_w.data);

    let de = dm.d_emb;
    let mut emb_in = vec![zero; n * de];
    for (i, tok) in tr.tokens[..n].iter().enumerate() {
        emb_in[i * de..(i + 1) * de].copy_from_slice(p.emb.row(*tok as usize));
    }
    linear_weight_grad(&d_u, &emb_in, n, de, d, &mut g.w_fuse.data);
    let mut d_emb_rows = emb_in;
    linear_input_grad(&d_u, &p.w_fuse.data, n, de, d, &mut d_emb_rows, false);
    for (i, tok) in tr.tokens[..n].iter().enumerate() {
        let dst = &mut g.emb.data[*tok as usize * de..(*tok as usize + 1) * de];
        for (o, x) in dst.iter_mut().zip(&d_emb_rows[i * de..(i + 1) * de]) {
            *o += *x;
        }
    }

    if let (Some(mt), Some(gm)) = (&tr.mem, &mut g.mem) {
        let (kw, vw, h) = (dm.kw, dm.vw, dm.heads);
        let sg_all = &tr.sg[..n * d];
        linear_weight_grad(&d_sp, &mt.z[..n * vw], n, vw, d, &mut gm.w_o.data);
        linear_weight_grad(&d_gpre, sg_all, n, d, vw, &mut gm.w_rg.data);
        linear_weight_grad(&d_qpre, sg_all, n, d, kw, &mut gm.w_q.data);
        linear_weight_grad(&d_v, sg_all, n, d, vw, &mut gm.w_v.data);
        linear_weight_grad(&d_bpre, sg_all, n, d, h, &mut gm.w_beta.data);
        linear_weight_grad(&d_apre, sg_all, n, d, h, &mut gm.w_a.data);
        linear_weight_grad(&d_kpre, &mt.sg_prev[..n * d], n, d, kw, &mut gm.w_k.data);
    }

    Ok(g)
}
