use super::hyper::TrainHyper;
use crate::error::{GpnError, Result};
use crate::model::{param_specs, ParamGrads, Params};
use crate::numerics::Real;

/// AdamW first and second moments plus the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<R> {
    pub m: Params<R>,
    pub v: Params<R>,
    pub step: u64,
}

impl<R: Real> OptimizerState<R> {
    pub fn new(p: &Params<R>) -> Self {
        Self { m: Params::zeros(&p.config), v: Params::zeros(&p.config), step: 0 }
    }
}

/// Scales `grads` down to `max_norm` when their global ℓ2 norm exceeds it.
/// Returns the norm before clipping.
pub fn clip_global_norm<R: Real>(grads: &mut ParamGrads<R>, max_norm: f64) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(GpnError::NonFinite(format!("gradient norm {norm}")));
    }
    if norm > max_norm {
        grads.scale(R::c(max_norm / norm));
    }
    Ok(norm)
}

/// One decoupled-weight-decay Adam update. Decay touches matrices only.
pub fn adamw_step<R: Real>(
    p: &mut Params<R>,
    g: &ParamGrads<R>,
    opt: &mut OptimizerState<R>,
    h: &TrainHyper,
    lr: f64,
) -> Result<()> {
    if p.config != g.config || p.config != opt.m.config {
        return Err(GpnError::Shape("parameter, gradient and optimizer shapes differ".into()));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = h.betas;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let specs = param_specs(&p.config);
    let mut ms = opt.m.tensors_mut();
    let mut vs = opt.v.tensors_mut();
    let gs = g.tensors();
    for (i, (_, w)) in p.tensors_mut().into_iter().enumerate() {
        let decay = if specs[i].decays() { h.weight_decay } else { 0.0 };
        let (m, v, gr) = (&mut ms[i].1.data, &mut vs[i].1.data, &gs[i].1.data);
        for j in 0..w.data.len() {
            let gj = gr[j].f64();
            let mj = b1 * m[j].f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].f64() + (1.0 - b2) * gj * gj;
            m[j] = R::c(mj);
            v[j] = R::c(vj);
            let wj = w.data[j].f64();
            let update = (mj / c1) / ((vj / c2).sqrt() + h.adam_eps) + decay * wj;
            w.data[j] = R::c(wj - lr * update);
        }
    }
    Ok(())
}
