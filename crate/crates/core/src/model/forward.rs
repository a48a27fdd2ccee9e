//! Batched Ground → MemWrite → Predict → Decode step.
//!
//! A batch of independent sequences advances in lockstep so every linear map
//! is a single GEMM over the batch rows. Rows never interact; a batch of one
//! row is exactly the single-sequence recurrence.

use super::params::Params;
use crate::error::{GpnError, Result};
use crate::numerics::{
    contract_keys, delta_update, linear, relu_l2norm_row, rmsnorm_row, sigmoid, silu, softplus,
    HeadTensor, Real,
};

/// Recurrent carry for `rows` sequences: the predicted state, the matrix
/// memory, and the previous grounded state (the next key's source).
#[derive(Debug, Clone, PartialEq)]
pub struct StateBundle<R> {
    pub rows: usize,
    pub d: usize,
    /// `rows × d`
    pub s_p: Vec<R>,
    /// `rows × heads × d_k × d_v`; empty without memory.
    pub mem: Vec<R>,
    /// `rows × d`
    pub s_g_prev: Vec<R>,
}

impl<R: Real> StateBundle<R> {
    /// Sequence-start state: `s^p = s0`, zero memory, and `s^g_0 = s0`.
    pub fn initial(p: &Params<R>, rows: usize) -> Self {
        let cfg = &p.config;
        let mut s_p = Vec::with_capacity(rows * cfg.d);
        for _ in 0..rows {
            s_p.extend_from_slice(&p.s0.data);
        }
        Self {
            rows,
            d: cfg.d,
            s_g_prev: s_p.clone(),
            s_p,
            mem: vec![R::zero(); rows * cfg.memory_cells()],
        }
    }

    pub fn state(&self, row: usize) -> &[R] {
        &self.s_p[row * self.d..(row + 1) * self.d]
    }

    pub fn grounded_prev(&self, row: usize) -> &[R] {
        &self.s_g_prev[row * self.d..(row + 1) * self.d]
    }

    pub fn memory(&self, row: usize, heads: usize, dk: usize, dv: usize) -> HeadTensor<R> {
        let n = heads * dk * dv;
        HeadTensor { heads, dk, dv, data: self.mem[row * n..(row + 1) * n].to_vec() }
    }

    /// Selects a subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let n = self.mem.len().checked_div(self.rows).unwrap_or(0);
        let mut out = Self {
            rows: rows.len(),
            d: self.d,
            s_p: Vec::with_capacity(rows.len() * self.d),
            mem: Vec::with_capacity(rows.len() * n),
            s_g_prev: Vec::with_capacity(rows.len() * self.d),
        };
        for &r in rows {
            out.s_p.extend_from_slice(self.state(r));
            out.s_g_prev.extend_from_slice(self.grounded_prev(r));
            out.mem.extend_from_slice(&self.mem[r * n..(r + 1) * n]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dims {
    pub d: usize,
    pub d_emb: usize,
    pub d_ffn: usize,
    pub vocab: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub kw: usize,
    pub vw: usize,
    pub cells: usize,
}

impl Dims {
    fn of<R: Real>(p: &Params<R>) -> Self {
        let c = &p.config;
        Self {
            d: c.d,
            d_emb: c.d_emb,
            d_ffn: c.d_ffn,
            vocab: c.vocab,
            heads: c.heads,
            d_k: c.d_k,
            d_v: c.d_v,
            kw: c.key_width(),
            vw: c.value_width(),
            cells: c.memory_cells(),
        }
    }
}

/// Memory-path activations of every recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct MemTrace<R> {
    pub sg_prev: Vec<R>,
    pub kpre: Vec<R>,
    pub k: Vec<R>,
    pub knorm: Vec<R>,
    pub v: Vec<R>,
    pub beta: Vec<R>,
    pub apre: Vec<R>,
    /// `γ = −e^A · softplus(W_a s^g)`, so the decay is `α = e^γ`.
    pub gamma: Vec<R>,
    pub alpha: Vec<R>,
    pub err: Vec<R>,
    /// Memory before the step's write.
    pub m_prev: Vec<R>,
    /// Memory after the most recent write.
    pub m_last: Vec<R>,
    pub qpre: Vec<R>,
    pub q: Vec<R>,
    pub qnorm: Vec<R>,
    pub r: Vec<R>,
    pub inv_r: Vec<R>,
    pub rn: Vec<R>,
    pub gpre: Vec<R>,
    pub gt: Vec<R>,
    pub z: Vec<R>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Scratch<R> {
    emb: Vec<R>,
    read: Vec<R>,
    logits: Vec<R>,
}

/// Per-step activations kept for reverse-mode BPTT, stored time-major:
/// buffer `x` holds step `t`, row `b` at `x[(t·rows + b)·width ..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<R> {
    pub rows: usize,
    pub capacity: usize,
    pub len: usize,
    pub(crate) dims: Dims,
    /// Whether step 0 started from the learned initial state.
    pub starts_fresh: bool,
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub ce: Vec<f64>,
    pub sp_prev: Vec<R>,
    pub n_f: Vec<R>,
    pub inv_f: Vec<R>,
    pub f: Vec<R>,
    pub sg: Vec<R>,
    pub n_p: Vec<R>,
    pub inv_p: Vec<R>,
    pub p: Vec<R>,
    pub n_ffn: Vec<R>,
    pub inv_ffn: Vec<R>,
    pub hg: Vec<R>,
    pub hv: Vec<R>,
    pub h: Vec<R>,
    pub sp: Vec<R>,
    pub n_d: Vec<R>,
    pub inv_d: Vec<R>,
    pub probs: Vec<R>,
    pub mem: Option<MemTrace<R>>,
    scratch: Scratch<R>,
}

impl<R: Real> Trace<R> {
    pub fn new(p: &Params<R>, rows: usize, capacity: usize) -> Self {
        let dm = Dims::of(p);
        let z = |w: usize| vec![R::zero(); capacity * rows * w];
        let mem = p.config.has_memory().then(|| MemTrace {
            sg_prev: z(dm.d),
            kpre: z(dm.kw),
            k: z(dm.kw),
            knorm: z(dm.heads),
            v: z(dm.vw),
            beta: z(dm.heads),
            apre: z(dm.heads),
            gamma: z(dm.heads),
            alpha: z(dm.heads),
            err: z(dm.vw),
            m_prev: z(dm.cells),
            m_last: vec![R::zero(); rows * dm.cells],
            qpre: z(dm.kw),
            q: z(dm.kw),
            qnorm: z(dm.heads),
            r: z(dm.vw),
            inv_r: z(1),
            rn: z(dm.vw),
            gpre: z(dm.vw),
            gt: z(dm.vw),
            z: z(dm.vw),
        });
        Self {
            rows,
            capacity,
            len: 0,
            dims: dm,
            starts_fresh: true,
            tokens: vec![0; capacity * rows],
            targets: vec![0; capacity * rows],
            ce: vec![0.0; capacity * rows],
            sp_prev: z(dm.d),
            n_f: z(dm.d),
            inv_f: z(1),
            f: z(dm.d),
            sg: z(dm.d),
            n_p: z(dm.d),
            inv_p: z(1),
            p: z(dm.d),
            n_ffn: z(dm.d),
            inv_ffn: z(1),
            hg: z(dm.d_ffn),
            hv: z(dm.d_ffn),
            h: z(dm.d_ffn),
            sp: z(dm.d),
            n_d: z(dm.d),
            inv_d: z(1),
            probs: z(dm.vocab),
            mem,
            scratch: Scratch {
                emb: vec![R::zero(); rows * dm.d_emb],
                read: vec![R::zero(); rows * dm.d],
                logits: vec![R::zero(); rows * dm.vocab],
            },
        }
    }

    pub(crate) fn matches(&self, p: &Params<R>) -> bool {
        self.dims == Dims::of(p) && self.mem.is_some() == p.mem.is_some()
    }

    /// Rows of buffer `buf` belonging to step `t`.
    pub fn at<'a>(&self, buf: &'a [R], t: usize) -> &'a [R] {
        let w = buf.len() / (self.capacity * self.rows).max(1);
        &buf[t * self.rows * w..(t + 1) * self.rows * w]
    }

    /// Memory after step `t`'s write.
    pub fn m_post(&self, t: usize) -> Option<&[R]> {
        let mt = self.mem.as_ref()?;
        let n = self.rows * self.dims.cells;
        Some(if t + 1 < self.len { &mt.m_prev[(t + 1) * n..(t + 2) * n] } else { &mt.m_last })
    }
}

pub(crate) fn slot<R>(buf: &mut [R], t: usize, n: usize) -> &mut [R] {
    &mut buf[t * n..(t + 1) * n]
}

fn slot_ref<R>(buf: &[R], t: usize, n: usize) -> &[R] {
    &buf[t * n..(t + 1) * n]
}

fn check_tokens(tokens: &[u32], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&x| x as usize >= vocab) {
        Some(&bad) => Err(GpnError::TokenOutOfRange { token: bad as usize, vocab }),
        None => Ok(()),
    }
}

/// Runs one step for every row and records it in slot `t` of `tr`.
pub(crate) fn step_into<R: Real>(
    p: &Params<R>,
    st: &mut StateBundle<R>,
    tokens: &[u32],
    targets: &[u32],
    tr: &mut Trace<R>,
    t: usize,
) -> Result<()> {
    let dm = tr.dims;
    let rows = st.rows;
    if !tr.matches(p) || tr.rows != rows || st.d != dm.d {
        return Err(GpnError::Shape("trace, state and params disagree".into()));
    }
    if tokens.len() != rows || targets.len() != rows {
        return Err(GpnError::Shape(format!("expected {rows} tokens and targets per step")));
    }
    check_tokens(tokens, dm.vocab)?;
    check_tokens(targets, dm.vocab)?;
    let eps = R::c(p.config.eps_norm);
    let (d, rd) = (dm.d, rows * dm.d);

    slot(&mut tr.tokens, t, rows).copy_from_slice(tokens);
    slot(&mut tr.targets, t, rows).copy_from_slice(targets);

    // Ground: s^g = σ(W_f·rms(s^p)) ⊙ s^p + W_fuse·emb(x)
    let sp_prev = slot(&mut tr.sp_prev, t, rd);
    sp_prev.copy_from_slice(&st.s_p);
    let n_f = slot(&mut tr.n_f, t, rd);
    let inv_f = slot(&mut tr.inv_f, t, rows);
    for b in 0..rows {
        inv_f[b] = rmsnorm_row(&sp_prev[b * d..(b + 1) * d], Some(&p.fuse_gain.data), eps, &mut n_f[b * d..(b + 1) * d]);
    }
    let f = slot(&mut tr.f, t, rd);
    linear(n_f, &p.fuse_w.data, rows, d, d, f, false);
    f.iter_mut().for_each(|x| *x = sigmoid(*x));
    let emb = &mut tr.scratch.emb;
    for (b, tok) in tokens.iter().enumerate() {
        emb[b * dm.d_emb..(b + 1) * dm.d_emb].copy_from_slice(p.emb.row(*tok as usize));
    }
    let sg = slot(&mut tr.sg, t, rd);
    linear(emb, &p.w_fuse.data, rows, dm.d_emb, d, sg, false);
    for i in 0..rd {
        sg[i] = f[i] * sp_prev[i] + sg[i];
    }

    // MemWrite: gated delta rule, key from s^g_{t-1}, value from s^g_t.
    if let (Some(mp), Some(mt)) = (&p.mem, &mut tr.mem) {
        let (h, dk, dv) = (dm.heads, dm.d_k, dm.d_v);
        let sg_prev = slot(&mut mt.sg_prev, t, rd);
        sg_prev.copy_from_slice(&st.s_g_prev);
        let kpre = slot(&mut mt.kpre, t, rows * dm.kw);
        linear(sg_prev, &mp.w_k.data, rows, d, dm.kw, kpre, false);
        let k = slot(&mut mt.k, t, rows * dm.kw);
        let knorm = slot(&mut mt.knorm, t, rows * h);
        for bh in 0..rows * h {
            knorm[bh] = relu_l2norm_row(&kpre[bh * dk..(bh + 1) * dk], eps, &mut k[bh * dk..(bh + 1) * dk]);
        }
        let v = slot(&mut mt.v, t, rows * dm.vw);
        linear(sg, &mp.w_v.data, rows, d, dm.vw, v, false);
        let beta = slot(&mut mt.beta, t, rows * h);
        linear(sg, &mp.w_beta.data, rows, d, h, beta, false);
        beta.iter_mut().for_each(|x| *x = sigmoid(*x));
        let apre = slot(&mut mt.apre, t, rows * h);
        linear(sg, &mp.w_a.data, rows, d, h, apre, false);
        let gamma = slot(&mut mt.gamma, t, rows * h);
        let alpha = slot(&mut mt.alpha, t, rows * h);
        for b in 0..rows {
            for hh in 0..h {
                let i = b * h + hh;
                gamma[i] = -mp.a.data[hh].exp() * softplus(apre[i]);
                alpha[i] = gamma[i].exp();
            }
        }
        slot(&mut mt.m_prev, t, rows * dm.cells).copy_from_slice(&st.mem);
        let err = slot(&mut mt.err, t, rows * dm.vw);
        let cell = dk * dv;
        for bh in 0..rows * h {
            delta_update(
                &mut st.mem[bh * cell..(bh + 1) * cell],
                &k[bh * dk..(bh + 1) * dk],
                &v[bh * dv..(bh + 1) * dv],
                alpha[bh],
                beta[bh],
                &mut err[bh * dv..(bh + 1) * dv],
            );
        }
        mt.m_last.copy_from_slice(&st.mem);
    }

    // Predict: s^p = σ(W_p·rms(s^g)) ⊙ s^g + FFN(rms(s^g)) [+ MemRead(s^g, M)]
    let n_p = slot(&mut tr.n_p, t, rd);
    let inv_p = slot(&mut tr.inv_p, t, rows);
    let n_ffn = slot(&mut tr.n_ffn, t, rd);
    let inv_ffn = slot(&mut tr.inv_ffn, t, rows);
    for b in 0..rows {
        let x = &sg[b * d..(b + 1) * d];
        inv_p[b] = rmsnorm_row(x, Some(&p.pred_gain.data), eps, &mut n_p[b * d..(b + 1) * d]);
        inv_ffn[b] = rmsnorm_row(x, Some(&p.ffn_gain.data), eps, &mut n_ffn[b * d..(b + 1) * d]);
    }
    let pg = slot(&mut tr.p, t, rd);
    linear(n_p, &p.pred_w.data, rows, d, d, pg, false);
    pg.iter_mut().for_each(|x| *x = sigmoid(*x));
    let rf = rows * dm.d_ffn;
    let hg = slot(&mut tr.hg, t, rf);
    let hv = slot(&mut tr.hv, t, rf);
    let hh_ = slot(&mut tr.h, t, rf);
    linear(n_ffn, &p.w1g.data, rows, d, dm.d_ffn, hg, false);
    linear(n_ffn, &p.w1v.data, rows, d, dm.d_ffn, hv, false);
    for i in 0..rf {
        hh_[i] = silu(hg[i]) * hv[i];
    }
    let sp = slot(&mut tr.sp, t, rd);
    linear(hh_, &p.w2.data, rows, dm.d_ffn, d, sp, false);
    for i in 0..rd {
        sp[i] = pg[i] * sg[i] + sp[i];
    }

    if let (Some(mp), Some(mt)) = (&p.mem, &mut tr.mem) {
        let (h, dk, dv) = (dm.heads, dm.d_k, dm.d_v);
        let qpre = slot(&mut mt.qpre, t, rows * dm.kw);
        linear(sg, &mp.w_q.data, rows, d, dm.kw, qpre, false);
        let q = slot(&mut mt.q, t, rows * dm.kw);
        let qnorm = slot(&mut mt.qnorm, t, rows * h);
        for bh in 0..rows * h {
            qnorm[bh] = relu_l2norm_row(&qpre[bh * dk..(bh + 1) * dk], eps, &mut q[bh * dk..(bh + 1) * dk]);
        }
        let r = slot(&mut mt.r, t, rows * dm.vw);
        let cell = dk * dv;
        for bh in 0..rows * h {
            contract_keys(
                &st.mem[bh * cell..(bh + 1) * cell],
                &q[bh * dk..(bh + 1) * dk],
                dv,
                &mut r[bh * dv..(bh + 1) * dv],
            );
        }
        let inv_r = slot(&mut mt.inv_r, t, rows);
        let rn = slot(&mut mt.rn, t, rows * dm.vw);
        for b in 0..rows {
            let span = b * dm.vw..(b + 1) * dm.vw;
            inv_r[b] = rmsnorm_row(&r[span.clone()], Some(&mp.read_gain.data), eps, &mut rn[span]);
        }
        let gpre = slot(&mut mt.gpre, t, rows * dm.vw);
        linear(sg, &mp.w_rg.data, rows, d, dm.vw, gpre, false);
        let gt = slot(&mut mt.gt, t, rows * dm.vw);
        let z = slot(&mut mt.z, t, rows * dm.vw);
        for i in 0..rows * dm.vw {
            gt[i] = silu(gpre[i]);
            z[i] = gt[i] * rn[i];
        }
        let read = &mut tr.scratch.read;
        linear(z, &mp.w_o.data, rows, dm.vw, d, read, false);
        for i in 0..rd {
            sp[i] += read[i];
        }
    }

    // Decode: logits = W_dec·rms(s^p) [+ b], CE against the target.
    let n_d = slot(&mut tr.n_d, t, rd);
    let inv_d = slot(&mut tr.inv_d, t, rows);
    for b in 0..rows {
        inv_d[b] = rmsnorm_row(&sp[b * d..(b + 1) * d], Some(&p.dec_gain.data), eps, &mut n_d[b * d..(b + 1) * d]);
    }
    let logits = &mut tr.scratch.logits;
    linear(n_d, &p.dec_w.data, rows, d, dm.vocab, logits, false);
    if let Some(bias) = &p.dec_bias {
        for b in 0..rows {
            for (l, bb) in logits[b * dm.vocab..(b + 1) * dm.vocab].iter_mut().zip(&bias.data) {
                *l += *bb;
            }
        }
    }
    let probs = slot(&mut tr.probs, t, rows * dm.vocab);
    let ce = slot(&mut tr.ce, t, rows);
    for b in 0..rows {
        let l = &logits[b * dm.vocab..(b + 1) * dm.vocab];
        let (lp, c) = softmax_ce(l, targets[b] as usize, &mut probs[b * dm.vocab..(b + 1) * dm.vocab]);
        let _ = lp;
        ce[b] = c;
    }

    st.s_p.copy_from_slice(sp);
    if p.mem.is_some() {
        st.s_g_prev.copy_from_slice(sg);
    }
    tr.len = tr.len.max(t + 1);
    Ok(())
}

/// Softmax into `probs` and cross-entropy against `target`, with the
/// log-sum-exp taken in f64 after max subtraction. Returns `(lse, ce)`.
pub(crate) fn softmax_ce<R: Real>(logits: &[R], target: usize, probs: &mut [R]) -> (f64, f64) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let mut sum = 0.0f64;
    for (pr, l) in probs.iter_mut().zip(logits) {
        let e = (l.f64() - max).exp();
        *pr = R::c(e);
        sum += e;
    }
    for pr in probs.iter_mut() {
        *pr = R::c(pr.f64() / sum);
    }
    let lse = max + sum.ln();
    (lse, lse - logits[target].f64())
}

/// Per-step, per-head log decay factors `γ = ln α` for one or more sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecayLog {
    pub heads: usize,
    /// `N × heads`, sequences concatenated.
    pub log_alpha: Vec<f64>,
    /// Start offset of each sequence plus the final length.
    pub boundaries: Vec<usize>,
}

impl DecayLog {
    pub fn new(heads: usize) -> Self {
        Self { heads, log_alpha: Vec::new(), boundaries: vec![0] }
    }

    pub fn steps(&self) -> usize {
        self.log_alpha.len().checked_div(self.heads).unwrap_or(0)
    }

    pub fn alpha(&self, t: usize, h: usize) -> f64 {
        self.log_alpha[t * self.heads + h].exp()
    }

    /// Appends one sequence of `steps × heads` log decays.
    pub fn push_sequence(&mut self, log_alpha: &[f64]) {
        self.log_alpha.extend_from_slice(log_alpha);
        self.boundaries.push(self.steps());
    }

    pub fn sequences(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    /// Builds a log from per-step decay values (`α`, not `ln α`).
    pub fn from_alphas(heads: usize, alphas: &[f64], boundaries: Vec<usize>) -> Self {
        Self { heads, log_alpha: alphas.iter().map(|a| a.ln()).collect(), boundaries }
    }

    /// Appends every row of a trace as its own sequence. `γ` is recomputed
    /// in f64 from the recorded pre-activation so that it stays strictly
    /// negative even where the working precision rounds it to zero.
    pub(crate) fn append_trace_rows<R: Real>(&mut self, p: &Params<R>, tr: &Trace<R>) {
        let (Some(mt), Some(mp)) = (&tr.mem, &p.mem) else { return };
        let h = tr.dims.heads;
        for b in 0..tr.rows {
            let mut seq = Vec::with_capacity(tr.len * h);
            for t in 0..tr.len {
                let a = slot_ref(&mt.apre, t, tr.rows * h);
                seq.extend((0..h).map(|hh| log_decay(mp.a.data[hh].f64(), a[b * h + hh].f64())));
            }
            self.push_sequence(&seq);
        }
    }
}

/// `γ = −e^A · softplus(a)`, the log of the per-head decay factor.
pub fn log_decay(a: f64, pre: f64) -> f64 {
    -a.exp() * softplus(pre)
}

/// Result of running a batch of sequences forward.
#[derive(Debug, Clone)]
pub struct BatchForward<R> {
    /// Per-step CE, `rows × T` (row-major by sequence).
    pub ce: Vec<f64>,
    pub trace: Trace<R>,
    pub decay: DecayLog,
    pub state: StateBundle<R>,
}

impl<R> BatchForward<R> {
    pub fn mean_ce(&self) -> f64 {
        self.ce.iter().sum::<f64>() / self.ce.len().max(1) as f64
    }
}

/// Runs equal-length token sequences forward from `state`, recording a full
/// trace. Sequence `b` feeds `seqs[b][t]` and predicts `seqs[b][t + 1]`.
pub fn forward_batch<R: Real, S: AsRef<[u32]>>(
    p: &Params<R>,
    state: StateBundle<R>,
    seqs: &[S],
) -> Result<BatchForward<R>> {
    let rows = seqs.len();
    if rows == 0 || state.rows != rows {
        return Err(GpnError::Shape(format!("{rows} sequences for a state of {} rows", state.rows)));
    }
    let len = seqs[0].as_ref().len();
    if len < 2 || seqs.iter().any(|s| s.as_ref().len() != len) {
        return Err(GpnError::Shape("sequences must share a length of at least 2".into()));
    }
    let steps = len - 1;
    let fresh = state == StateBundle::initial(p, rows);
    let mut st = state;
    let mut tr = Trace::new(p, rows, steps);
    tr.starts_fresh = fresh;
    let mut inp = vec![0u32; rows];
    let mut tgt = vec![0u32; rows];
    for t in 0..steps {
        for (b, s) in seqs.iter().enumerate() {
            inp[b] = s.as_ref()[t];
            tgt[b] = s.as_ref()[t + 1];
        }
        step_into(p, &mut st, &inp, &tgt, &mut tr, t)?;
    }
    let mut ce = vec![0.0; rows * steps];
    for t in 0..steps {
        for b in 0..rows {
            ce[b * steps + t] = tr.ce[t * rows + b];
        }
    }
    let mut decay = DecayLog::new(p.config.heads);
    decay.append_trace_rows(p, &tr);
    Ok(BatchForward { ce, trace: tr, decay, state: st })
}

/// Single-sequence forward from the learned initial state:
/// `tokens` has `T + 1` entries and yields `T` per-step losses.
pub fn forward_sequence<R: Real>(p: &Params<R>, tokens: &[u32]) -> Result<BatchForward<R>> {
    forward_batch(p, StateBundle::initial(p, 1), &[tokens])
}

/// Forward-only runner that keeps no history, for evaluation and analysis.
pub struct Stepper<R> {
    pub state: StateBundle<R>,
    trace: Trace<R>,
}

impl<R: Real> Stepper<R> {
    pub fn new(p: &Params<R>, rows: usize) -> Self {
        Self { state: StateBundle::initial(p, rows), trace: Trace::new(p, rows, 1) }
    }

    /// Advances every row by one token; returns per-row CE.
    pub fn step(&mut self, p: &Params<R>, tokens: &[u32], targets: &[u32]) -> Result<&[f64]> {
        self.trace.len = 0;
        step_into(p, &mut self.state, tokens, targets, &mut self.trace, 0)?;
        Ok(&self.trace.ce)
    }

    /// `γ = ln α` of the last step in f64, `rows × heads`; empty without memory.
    pub fn last_log_decay(&self, p: &Params<R>) -> Vec<f64> {
        let mut log = DecayLog::new(p.config.heads);
        log.append_trace_rows(p, &self.trace);
        log.log_alpha
    }

    pub fn last_trace(&self) -> &Trace<R> {
        &self.trace
    }
}
