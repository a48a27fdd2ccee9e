use super::config::ModelConfig;
use crate::error::{GpnError, Result};
use crate::numerics::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const INIT_STD: f64 = 0.02;

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    /// Matrices take weight decay; gains, biases, `A` and `s0` do not.
    pub fn decays(&self) -> bool {
        self.shape.len() == 2
    }
}

/// Canonical tensor list for a config; every traversal of [`Params`] follows
/// this order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let damped = INIT_STD / std::f64::consts::SQRT_2;
    let spec = |name, shape: &[usize], init| ParamSpec { name, shape: shape.to_vec(), init };
    let (d, v) = (cfg.d, cfg.vocab);
    let mut out = vec![
        spec("emb", &[v, cfg.d_emb], Init::Normal(INIT_STD)),
        spec("w_fuse", &[d, cfg.d_emb], Init::Normal(INIT_STD)),
        spec("fuse_gate.w", &[d, d], Init::Zeros),
        spec("fuse_gate.gain", &[d], Init::Ones),
        spec("predict_gate.w", &[d, d], Init::Zeros),
        spec("predict_gate.gain", &[d], Init::Ones),
        spec("ffn.gain", &[d], Init::Ones),
        spec("ffn.w1g", &[cfg.d_ffn, d], Init::Normal(INIT_STD)),
        spec("ffn.w1v", &[cfg.d_ffn, d], Init::Normal(INIT_STD)),
        spec("ffn.w2", &[d, cfg.d_ffn], Init::Normal(damped)),
        spec("dec.gain", &[d], Init::Ones),
        spec("dec.w", &[v, d], Init::Normal(INIT_STD)),
    ];
    if cfg.decoder_bias {
        out.push(spec("dec.bias", &[v], Init::Zeros));
    }
    if cfg.has_memory() {
        let (kw, vw, h) = (cfg.key_width(), cfg.value_width(), cfg.heads);
        out.extend([
            spec("mem.w_k", &[kw, d], Init::Normal(INIT_STD)),
            spec("mem.w_v", &[vw, d], Init::Normal(INIT_STD)),
            spec("mem.w_q", &[kw, d], Init::Normal(INIT_STD)),
            spec("mem.w_beta", &[h, d], Init::Normal(INIT_STD)),
            spec("mem.w_a", &[h, d], Init::Normal(INIT_STD)),
            spec("mem.a", &[h], Init::Zeros),
            spec("mem.w_rg", &[vw, d], Init::Normal(INIT_STD)),
            spec("mem.w_o", &[d, vw], Init::Normal(damped)),
            spec("mem.read_gain", &[vw], Init::Ones),
        ]);
    }
    out.push(spec("s0", &[d], Init::Zeros));
    out
}

/// Exact number of scalar parameters.
pub fn count_params(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryParams<R> {
    pub w_k: Tensor<R>,
    pub w_v: Tensor<R>,
    pub w_q: Tensor<R>,
    pub w_beta: Tensor<R>,
    pub w_a: Tensor<R>,
    /// Per-head log decay scale `A`; the decay is `exp(−e^A · softplus(·))`.
    pub a: Tensor<R>,
    pub w_rg: Tensor<R>,
    pub w_o: Tensor<R>,
    pub read_gain: Tensor<R>,
}

/// Every weight of a GPN / GPN+M model. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<R> {
    pub config: ModelConfig,
    pub emb: Tensor<R>,
    pub w_fuse: Tensor<R>,
    pub fuse_w: Tensor<R>,
    pub fuse_gain: Tensor<R>,
    pub pred_w: Tensor<R>,
    pub pred_gain: Tensor<R>,
    pub ffn_gain: Tensor<R>,
    pub w1g: Tensor<R>,
    pub w1v: Tensor<R>,
    pub w2: Tensor<R>,
    pub dec_gain: Tensor<R>,
    pub dec_w: Tensor<R>,
    pub dec_bias: Option<Tensor<R>>,
    pub mem: Option<MemoryParams<R>>,
    pub s0: Tensor<R>,
}

/// Gradients share the parameter layout; absent tensors stay absent.
pub type ParamGrads<R> = Params<R>;

impl<R: Real> Params<R> {
    /// All-zero tensors with the config's shapes.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let specs = param_specs(cfg);
        let mut it = specs.iter().map(|s| Tensor::zeros(&s.shape));
        let mut p = |_: &str| it.next().expect("spec count");
        let emb = p("emb");
        let w_fuse = p("w_fuse");
        let fuse_w = p("fuse_gate.w");
        let fuse_gain = p("fuse_gate.gain");
        let pred_w = p("predict_gate.w");
        let pred_gain = p("predict_gate.gain");
        let ffn_gain = p("ffn.gain");
        let w1g = p("ffn.w1g");
        let w1v = p("ffn.w1v");
        let w2 = p("ffn.w2");
        let dec_gain = p("dec.gain");
        let dec_w = p("dec.w");
        let dec_bias = cfg.decoder_bias.then(|| p("dec.bias"));
        let mem = cfg.has_memory().then(|| MemoryParams {
            w_k: p("mem.w_k"),
            w_v: p("mem.w_v"),
            w_q: p("mem.w_q"),
            w_beta: p("mem.w_beta"),
            w_a: p("mem.w_a"),
            a: p("mem.a"),
            w_rg: p("mem.w_rg"),
            w_o: p("mem.w_o"),
            read_gain: p("mem.read_gain"),
        });
        let s0 = p("s0");
        Self {
            config: *cfg,
            emb,
            w_fuse,
            fuse_w,
            fuse_gain,
            pred_w,
            pred_gain,
            ffn_gain,
            w1g,
            w1v,
            w2,
            dec_gain,
            dec_w,
            dec_bias,
            mem,
            s0,
        }
    }

    /// Tensors in canonical order, paired with their names.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<R>)> {
        let mut v = vec![
            ("emb", &self.emb),
            ("w_fuse", &self.w_fuse),
            ("fuse_gate.w", &self.fuse_w),
            ("fuse_gate.gain", &self.fuse_gain),
            ("predict_gate.w", &self.pred_w),
            ("predict_gate.gain", &self.pred_gain),
            ("ffn.gain", &self.ffn_gain),
            ("ffn.w1g", &self.w1g),
            ("ffn.w1v", &self.w1v),
            ("ffn.w2", &self.w2),
            ("dec.gain", &self.dec_gain),
            ("dec.w", &self.dec_w),
        ];
        if let Some(b) = &self.dec_bias {
            v.push(("dec.bias", b));
        }
        if let Some(m) = &self.mem {
            v.extend([
                ("mem.w_k", &m.w_k),
                ("mem.w_v", &m.w_v),
                ("mem.w_q", &m.w_q),
                ("mem.w_beta", &m.w_beta),
                ("mem.w_a", &m.w_a),
                ("mem.a", &m.a),
                ("mem.w_rg", &m.w_rg),
                ("mem.w_o", &m.w_o),
                ("mem.read_gain", &m.read_gain),
            ]);
        }
        v.push(("s0", &self.s0));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<R>)> {
        let mut v = vec![
            ("emb", &mut self.emb),
            ("w_fuse", &mut self.w_fuse),
            ("fuse_gate.w", &mut self.fuse_w),
            ("fuse_gate.gain", &mut self.fuse_gain),
            ("predict_gate.w", &mut self.pred_w),
            ("predict_gate.gain", &mut self.pred_gain),
            ("ffn.gain", &mut self.ffn_gain),
            ("ffn.w1g", &mut self.w1g),
            ("ffn.w1v", &mut self.w1v),
            ("ffn.w2", &mut self.w2),
            ("dec.gain", &mut self.dec_gain),
            ("dec.w", &mut self.dec_w),
        ];
        if let Some(b) = &mut self.dec_bias {
            v.push(("dec.bias", b));
        }
        if let Some(m) = &mut self.mem {
            v.extend([
                ("mem.w_k", &mut m.w_k),
                ("mem.w_v", &mut m.w_v),
                ("mem.w_q", &mut m.w_q),
                ("mem.w_beta", &mut m.w_beta),
                ("mem.w_a", &mut m.w_a),
                ("mem.a", &mut m.a),
                ("mem.w_rg", &mut m.w_rg),
                ("mem.w_o", &mut m.w_o),
                ("mem.read_gain", &mut m.read_gain),
            ]);
        }
        v.push(("s0", &mut self.s0));
        v
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.tensors().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.tensors_mut().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Concatenation of every tensor in canonical order.
    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, t) in self.tensors() {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Inverse of [`Params::flatten`].
    pub fn assign_flat(&mut self, flat: &[R]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(GpnError::Shape(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for (_, t) in self.tensors_mut() {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Elementwise `self += other`, tensor by tensor in canonical order.
    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: R) {
        for (_, t) in self.tensors_mut() {
            for x in t.data.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Global ℓ2 norm over all tensors, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn cast<S: Real>(&self) -> Params<S> {
        let mut out = Params::<S>::zeros(&self.config);
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Checks tensor shapes against the config.
    pub fn validate(&self) -> Result<()> {
        let specs = param_specs(&self.config);
        let ts = self.tensors();
        if specs.len() != ts.len() {
            return Err(GpnError::Shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                ts.len()
            )));
        }
        for (s, (name, t)) in specs.iter().zip(ts) {
            if s.name != name || s.shape != t.shape {
                return Err(GpnError::Shape(format!(
                    "{name}: expected {:?}, found {:?}",
                    s.shape, t.shape
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic initialization from a seed.
///
/// Weights are `N(0, 0.02)`; `W2` and `W_o` are further damped by `1/√2`.
/// Gate matrices start at zero so both gates open at `σ(0) = 0.5`, all heads
/// share `A = 0`, `s0 = 0`, gains are one and the decoder bias is zero.
pub fn init_params<R: Real>(cfg: &ModelConfig, seed: u64) -> Result<Params<R>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = param_specs(cfg);
    let mut params = Params::<R>::zeros(cfg);
    for (spec, (_, t)) in specs.iter().zip(params.tensors_mut()) {
        match spec.init {
            Init::Zeros => {}
            Init::Ones => t.data.fill(R::one()),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                for x in t.data.iter_mut() {
                    *x = R::c(dist.sample(&mut rng));
                }
            }
        }
    }
    Ok(params)
}

/// A dense random point: every tensor, gates and `A` included, drawn from
/// `N(0, scale)`; gains from `N(1, scale)`. Used to probe gradients away from
/// the symmetric initialization.
pub fn random_params<R: Real>(cfg: &ModelConfig, seed: u64, scale: f64) -> Result<Params<R>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, scale).map_err(|e| GpnError::Config(e.to_string()))?;
    let mut params = Params::<R>::zeros(cfg);
    for (name, t) in params.tensors_mut() {
        let offset = if name.ends_with("gain") { 1.0 } else { 0.0 };
        for x in t.data.iter_mut() {
            *x = R::c(offset + dist.sample(&mut rng));
        }
    }
    Ok(params)
}
