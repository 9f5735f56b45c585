//! ConvXformer: a convolutional stem, four stages of ConvNeXt blocks with an
//! embedded Transformer encoder, and a pooled linear head.

mod checkpoint;
mod config;

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{BatchNormMode, BatchStats, Tape, Tensor, TensorError, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, Preset};

pub const BN_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

/// Every learnable tensor of `cfg` as `(path, shape, init)`, sorted by path.
pub fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut add = |p: String, s: Vec<usize>, i: Init| out.push((p, s, i));
    let bn = |add: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, c: usize| {
        add(format!("{p}.weight"), vec![c], Init::Ones);
        add(format!("{p}.bias"), vec![c], Init::Zeros);
    };
    let c0 = cfg.channels[0];
    add("stem.conv.weight".into(), vec![c0, cfg.input_channels, cfg.kernel_stem], Init::TruncNormal);
    bn(&mut add, "stem.bn", c0);
    let mut prev = c0;
    for (s, (&c, &depth)) in cfg.channels.iter().zip(&cfg.depths).enumerate() {
        let st = format!("stage{}", s + 1);
        add(format!("{st}.down.conv.weight"), vec![c, prev, 2], Init::TruncNormal);
        bn(&mut add, &format!("{st}.down.bn"), c);
        let h = cfg.ff_multiplier * c;
        for j in 0..depth {
            let p = format!("{st}.block{}", j + 1);
            add(format!("{p}.dwconv.weight"), vec![c, 1, cfg.kernel_dw], Init::TruncNormal);
            bn(&mut add, &format!("{p}.dwbn"), c);
            for name in ["q", "k", "v", "out"] {
                add(format!("{p}.attn.{name}.weight"), vec![c, c], Init::TruncNormal);
                // a key bias shifts every score in a row equally, so softmax ignores it
                if name != "k" {
                    add(format!("{p}.attn.{name}.bias"), vec![c], Init::Zeros);
                }
            }
            bn(&mut add, &format!("{p}.ln1"), c);
            add(format!("{p}.ff1.weight"), vec![h, c], Init::TruncNormal);
            add(format!("{p}.ff1.bias"), vec![h], Init::Zeros);
            add(format!("{p}.ff2.weight"), vec![c, h], Init::TruncNormal);
            add(format!("{p}.ff2.bias"), vec![c], Init::Zeros);
            bn(&mut add, &format!("{p}.ln2"), c);
            add(format!("{p}.pw1.weight"), vec![h, c, 1], Init::TruncNormal);
            add(format!("{p}.pw1.bias"), vec![h], Init::Zeros);
            add(format!("{p}.pw2.weight"), vec![c, h, 1], Init::TruncNormal);
            bn(&mut add, &format!("{p}.pwbn"), c);
        }
        prev = c;
    }
    add("head.weight".into(), vec![cfg.output_dim, prev], Init::TruncNormal);
    add("head.bias".into(), vec![cfg.output_dim], Init::Zeros);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Batch-norm layers (path prefix, channels); each owns running statistics.
pub fn batchnorm_layers(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let mut out = vec![("stem.bn".to_string(), cfg.channels[0])];
    for (s, (&c, &depth)) in cfg.channels.iter().zip(&cfg.depths).enumerate() {
        out.push((format!("stage{}.down.bn", s + 1), c));
        for j in 0..depth {
            out.push((format!("stage{}.block{}.dwbn", s + 1, j + 1), c));
            out.push((format!("stage{}.block{}.pwbn", s + 1, j + 1), c));
        }
    }
    out.sort();
    out
}

/// Number of learnable scalars, without allocating.
pub fn count_params(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
}

/// Learnable tensors plus batch-norm running statistics, keyed by path.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Vec<T>>,
}

fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters. Each tensor draws from its own substream, so the
    /// values do not depend on construction order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = BTreeMap::new();
        for (path, shape, init) in param_specs(cfg) {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, T::one()),
                Init::TruncNormal => {
                    let mut r = rng::substream(seed, &[rng::key_hash("init"), rng::key_hash(&path)]);
                    Tensor::from_fn(&shape, |_| T::lit(trunc_normal(&mut r, INIT_STD)))
                }
            };
            params.insert(path, t);
        }
        let mut buffers = BTreeMap::new();
        for (p, c) in batchnorm_layers(cfg) {
            buffers.insert(format!("{p}.running_mean"), vec![T::zero(); c]);
            buffers.insert(format!("{p}.running_var"), vec![T::one(); c]);
        }
        Ok(Self { params, buffers })
    }

    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<T>> {
        self.params.get(path).ok_or_else(|| ModelError::Missing(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(path).ok_or_else(|| ModelError::Missing(path.to_string()))
    }

    /// Checks that the tensors match `cfg` exactly.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        if specs.len() != self.params.len() {
            return Err(ModelError::Shape(format!("{} tensors, config expects {}", self.params.len(), specs.len())));
        }
        for (path, shape, _) in specs {
            let t = self.get(&path)?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape(format!("{path}: {:?} vs {shape:?}", t.shape())));
            }
        }
        for (p, c) in batchnorm_layers(cfg) {
            for suffix in ["running_mean", "running_var"] {
                let key = format!("{p}.{suffix}");
                match self.buffers.get(&key) {
                    Some(b) if b.len() == c => {}
                    _ => return Err(ModelError::Missing(key)),
                }
            }
        }
        Ok(())
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<T>)], momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for (layer, s) in stats {
            if let Some(rm) = self.buffers.get_mut(&format!("{layer}.running_mean")) {
                rm.iter_mut().zip(&s.mean).for_each(|(r, &b)| *r = keep * *r + m * b);
            }
            if let Some(rv) = self.buffers.get_mut(&format!("{layer}.running_var")) {
                rv.iter_mut().zip(&s.var).for_each(|(r, &b)| *r = keep * *r + m * b);
            }
        }
    }
}

/// Fixed sinusoidal encoding `[L, C]`: even columns sine, odd columns cosine.
pub fn positional_encoding<T: Scalar>(len: usize, channels: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, channels], |i| {
        let (pos, c) = ((i / channels) as f64, i % channels);
        let freq = 10_000f64.powf(-((c - c % 2) as f64) / channels as f64);
        T::lit(if c % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() })
    })
}

/// Shapes observed during a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShapeTrace {
    pub stem: Vec<usize>,
    pub stages: Vec<Vec<usize>>,
    pub pre_gap: Vec<usize>,
    pub output: Vec<usize>,
}

pub struct ForwardPass<T> {
    pub output: Var,
    /// Tape variable of every parameter used.
    pub vars: BTreeMap<String, Var>,
    /// Batch statistics per batch-norm layer (training mode only).
    pub bn_stats: Vec<(String, BatchStats<T>)>,
    pub trace: ShapeTrace,
}

struct Ctx<'a, T> {
    tape: &'a mut Tape<T>,
    params: &'a ModelParams<T>,
    vars: BTreeMap<String, Var>,
    bn_stats: Vec<(String, BatchStats<T>)>,
    rng: Option<&'a mut dyn RngCore>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn p(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(path) {
            return Ok(v);
        }
        let v = self.tape.param(self.params.get(path)?.clone());
        self.vars.insert(path.to_string(), v);
        Ok(v)
    }

    fn training(&self) -> bool {
        self.rng.is_some()
    }

    fn bn(&mut self, x: Var, layer: &str) -> Result<Var> {
        let (g, b) = (self.p(&format!("{layer}.weight"))?, self.p(&format!("{layer}.bias"))?);
        if self.training() {
            let (y, stats) = self.tape.batchnorm1d(x, g, b, BatchNormMode::Train)?;
            self.bn_stats.push((layer.to_string(), stats.expect("train mode yields stats")));
            Ok(y)
        } else {
            let get = |k: &str| self.params.buffers.get(&format!("{layer}.{k}")).ok_or_else(|| ModelError::Missing(format!("{layer}.{k}")));
            let (mean, var) = (get("running_mean")?, get("running_var")?);
            Ok(self.tape.batchnorm1d(x, g, b, BatchNormMode::Eval { mean, var })?.0)
        }
    }

    fn ln(&mut self, x: Var, layer: &str) -> Result<Var> {
        let (g, b) = (self.p(&format!("{layer}.weight"))?, self.p(&format!("{layer}.bias"))?);
        Ok(self.tape.layernorm_lastdim(x, g, b)?)
    }

    fn linear(&mut self, x: Var, layer: &str) -> Result<Var> {
        let (w, b) = (self.p(&format!("{layer}.weight"))?, self.p(&format!("{layer}.bias"))?);
        Ok(self.tape.linear(x, w, Some(b))?)
    }
}

/// Attention projections of one block as `(weight, bias)`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub q: (Var, Option<Var>),
    pub k: (Var, Option<Var>),
    pub v: (Var, Option<Var>),
    pub out: (Var, Option<Var>),
}

/// Multi-head scaled dot-product self-attention over `x [B, L, C]`.
/// Returns the output `[B, L, C]` and the attention weights `[B·H, L, L]`.
pub fn attention<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &AttentionVars, heads: usize) -> Result<(Var, Var)> {
    let s = tape.shape(x).to_vec();
    let [b, l, c] = s[..] else {
        return Err(ModelError::Shape(format!("attention input {s:?}")));
    };
    if heads == 0 || c % heads != 0 {
        return Err(ModelError::Config(format!("{c} channels not divisible by {heads} heads")));
    }
    let d = c / heads;
    let flat = tape.reshape(x, &[b * l, c])?;
    let project = |tape: &mut Tape<T>, (wt, bias): (Var, Option<Var>), perm: &[usize], shape: &[usize]| -> Result<Var> {
        let y = tape.linear(flat, wt, bias)?;
        let y = tape.reshape(y, &[b, l, heads, d])?;
        let y = tape.permute(y, perm)?;
        Ok(tape.reshape(y, shape)?)
    };
    let q = project(tape, w.q, &[0, 2, 1, 3], &[b * heads, l, d])?;
    let kt = project(tape, w.k, &[0, 2, 3, 1], &[b * heads, d, l])?;
    let v = project(tape, w.v, &[0, 2, 1, 3], &[b * heads, l, d])?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, T::one() / T::from_usize_lossy(d).sqrt())?;
    let probs = tape.softmax_lastdim(scores)?;
    let o = tape.matmul(probs, v)?;
    let o = tape.reshape(o, &[b, heads, l, d])?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    let o = tape.reshape(o, &[b * l, c])?;
    let o = tape.linear(o, w.out.0, w.out.1)?;
    Ok((tape.reshape(o, &[b, l, c])?, probs))
}

fn convnext_block<T: Scalar>(ctx: &mut Ctx<'_, T>, cfg: &ModelConfig, x: Var, prefix: &str, drop_rate: f64) -> Result<Var> {
    let s = ctx.tape.shape(x).to_vec();
    let (b, c, l) = (s[0], s[1], s[2]);

    let w = ctx.p(&format!("{prefix}.dwconv.weight"))?;
    let h = ctx.tape.conv1d(x, w, None, 1, cfg.padding_dw, c)?;
    let h = ctx.bn(h, &format!("{prefix}.dwbn"))?;

    // transformer encoder over the sequence axis
    let t = ctx.tape.permute(h, &[0, 2, 1])?;
    let pe = positional_encoding::<T>(l, c);
    let pe = Tensor::from_fn(&[b, l, c], |i| pe.data()[i % (l * c)]);
    let pe = ctx.tape.constant(pe);
    let t = ctx.tape.add(t, pe)?;
    let mut proj = |name: &str| -> Result<(Var, Option<Var>)> {
        let w = ctx.p(&format!("{prefix}.attn.{name}.weight"))?;
        let b = if name == "k" { None } else { Some(ctx.p(&format!("{prefix}.attn.{name}.bias"))?) };
        Ok((w, b))
    };
    let aw = AttentionVars { q: proj("q")?, k: proj("k")?, v: proj("v")?, out: proj("out")? };
    let (a, _) = attention(ctx.tape, t, &aw, cfg.n_heads)?;
    let t = ctx.tape.add(t, a)?;
    let t = ctx.ln(t, &format!("{prefix}.ln1"))?;
    let flat = ctx.tape.reshape(t, &[b * l, c])?;
    let f = ctx.linear(flat, &format!("{prefix}.ff1"))?;
    let f = ctx.tape.gelu(f)?;
    let f = ctx.linear(f, &format!("{prefix}.ff2"))?;
    let f = ctx.tape.reshape(f, &[b, l, c])?;
    let t = ctx.tape.add(t, f)?;
    let t = ctx.ln(t, &format!("{prefix}.ln2"))?;
    let h = ctx.tape.permute(t, &[0, 2, 1])?;

    // inverted bottleneck
    let (w1, b1) = (ctx.p(&format!("{prefix}.pw1.weight"))?, ctx.p(&format!("{prefix}.pw1.bias"))?);
    let h = ctx.tape.conv1d(h, w1, Some(b1), 1, 0, 1)?;
    let h = ctx.tape.gelu(h)?;
    let w2 = ctx.p(&format!("{prefix}.pw2.weight"))?;
    let h = ctx.tape.conv1d(h, w2, None, 1, 0, 1)?;
    let h = ctx.bn(h, &format!("{prefix}.pwbn"))?;

    let h = match ctx.rng.as_deref_mut() {
        Some(r) => ctx.tape.droppath(h, drop_rate, true, r)?,
        None => h,
    };
    Ok(ctx.tape.add(x, h)?)
}

/// Records the network on `tape`. Passing an RNG selects training mode
/// (batch statistics and droppath); `None` is inference.
pub fn forward<'a, T: Scalar>(
    tape: &'a mut Tape<T>,
    params: &'a ModelParams<T>,
    cfg: &ModelConfig,
    x: Var,
    rng: Option<&'a mut dyn RngCore>,
) -> Result<ForwardPass<T>> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 3 || xs[1] != cfg.input_channels || xs[2] != cfg.input_length {
        return Err(ModelError::Shape(format!(
            "features {xs:?}, expected [B, {}, {}]",
            cfg.input_channels, cfg.input_length
        )));
    }
    cfg.validate()?;
    let mut ctx = Ctx { tape, params, vars: BTreeMap::new(), bn_stats: Vec::new(), rng };
    let mut trace = ShapeTrace::default();

    let w = ctx.p("stem.conv.weight")?;
    let mut h = ctx.tape.conv1d(x, w, None, cfg.stride_stem, 0, 1)?;
    h = ctx.bn(h, "stem.bn")?;
    trace.stem = ctx.tape.shape(h).to_vec();

    let mut block_index = 0;
    for (s, &depth) in cfg.depths.iter().enumerate() {
        let st = format!("stage{}", s + 1);
        let w = ctx.p(&format!("{st}.down.conv.weight"))?;
        h = ctx.tape.conv1d(h, w, None, 2, 0, 1)?;
        h = ctx.bn(h, &format!("{st}.down.bn"))?;
        for j in 0..depth {
            h = convnext_block(&mut ctx, cfg, h, &format!("{st}.block{}", j + 1), cfg.block_droppath(block_index))?;
            block_index += 1;
        }
        trace.stages.push(ctx.tape.shape(h).to_vec());
    }
    trace.pre_gap = ctx.tape.shape(h).to_vec();
    let pooled = ctx.tape.global_avg_pool(h)?;
    let out = ctx.linear(pooled, "head")?;
    trace.output = ctx.tape.shape(out).to_vec();
    Ok(ForwardPass { output: out, vars: ctx.vars, bn_stats: ctx.bn_stats, trace })
}

/// Inference on a feature batch `[B, C, L]`.
pub fn predict<T: Scalar>(params: &ModelParams<T>, cfg: &ModelConfig, features: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let pass = forward(&mut tape, params, cfg, x, None)?;
    Ok(tape.value(pass.output).clone())
}
