use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::tape::{permute_data, Op};
use super::{invalid, shape_err, Result, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// Statistics source for [`Tape::batchnorm1d`].
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the batch statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n−1) variance, the estimator folded into running statistics.
    pub var: Vec<T>,
}

impl<T: Scalar> Tape<T> {
    fn elementwise_pair(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let src = self.value(a);
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, out, op, &[a])
    }

    /// 1-D cross-correlation over `[B, Cin, L]` with weight `[Cout, Cin/groups, K]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        const OP: &str = "conv1d";
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 {
            return shape_err(OP, format!("input {xs:?}, weight {ws:?}"));
        }
        if stride == 0 || groups == 0 {
            return invalid(OP, "stride and groups must be positive");
        }
        let (batch, c_in, len_in) = (xs[0], xs[1], xs[2]);
        let (c_out, cin_g, kernel) = (ws[0], ws[1], ws[2]);
        if c_in % groups != 0 || c_out % groups != 0 || cin_g != c_in / groups {
            return shape_err(OP, format!("channels {c_in}->{c_out} with {groups} groups, weight {ws:?}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return shape_err(OP, format!("bias {:?} for {c_out} outputs", self.shape(b)));
            }
        }
        if len_in + 2 * padding < kernel {
            return invalid(OP, format!("length {len_in} with padding {padding} shorter than kernel {kernel}"));
        }
        let len_out = (len_in + 2 * padding - kernel) / stride + 1;
        let geom = ConvGeom { batch, c_in, c_out, len_in, len_out, kernel, stride, padding, groups };
        let data = kernels::conv1d_forward(&geom, self.data(x), self.data(w), b.map(|b| self.data(b)));
        let out = Tensor::new(vec![batch, c_out, len_out], data)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(OP, out, Op::Conv1d { x, w, b, geom }, &inputs)
    }

    /// `x [N, in] · wᵀ + b` with `w [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(OP, format!("input {xs:?}, weight {ws:?}"));
        }
        let (rows, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [fan_out] {
                return shape_err(OP, format!("bias {:?} for {fan_out} outputs", self.shape(b)));
            }
        }
        let wt = kernels::transpose(self.data(w), 1, fan_out, fan_in);
        let mut data = kernels::matmul(self.data(x), &wt, 1, rows, fan_in, fan_out);
        if let Some(b) = b {
            let bias = self.data(b);
            for row in data.chunks_mut(fan_out) {
                row.iter_mut().zip(bias).for_each(|(y, &b)| *y = *y + b);
            }
        }
        let out = Tensor::new(vec![rows, fan_out], data)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(OP, out, Op::Linear { x, w, b, rows, fan_in, fan_out }, &inputs)
    }

    /// Matrix product of `[M,K]·[K,N]` or batched `[B,M,K]·[B,K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "matmul";
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = match (as_.as_slice(), bs.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return shape_err(OP, format!("{as_:?} x {bs:?}")),
        };
        let data = kernels::matmul(self.data(a), self.data(b), batch, m, k, n);
        let shape = if as_.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let out = Tensor::new(shape, data)?;
        self.push(OP, out, Op::MatMul { a, b, batch, m, k, n }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("add", out, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("sub", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("sub", out, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("mul", out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary("scale", a, |v| v * s, Op::Scale { a, s })
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, |v| v.abs(), Op::Abs { a })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let half = T::lit(0.5);
        self.unary("gelu", a, |x| half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).error_fn()), Op::Gelu { a })
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        const OP: &str = "softmax";
        let width = *self.shape(a).last().expect("rank >= 1");
        let mut data = self.data(a).to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            row.iter_mut().for_each(|v| *v = *v / total);
        }
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(OP, out, Op::Softmax { a, width }, &[a])
    }

    /// Batch normalization over `[B, C]` or `[B, C, L]`, per channel.
    ///
    /// In [`BatchNormMode::Train`] the returned statistics should be folded
    /// into the caller's running estimates.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        const OP: &str = "batchnorm1d";
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 && xs.len() != 3 {
            return shape_err(OP, format!("input {xs:?}"));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let inner = if xs.len() == 3 { xs[2] } else { 1 };
        if batch == 0 {
            return invalid(OP, "empty batch");
        }
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return shape_err(OP, format!("affine {:?}/{:?} for {channels} channels", self.shape(gamma), self.shape(beta)));
        }
        let xd = self.data(x);
        let count = batch * inner;
        let eps = T::lit(NORM_EPS);
        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let vals = (0..batch).flat_map(|b| xd[(b * channels + c) * inner..][..inner].iter().copied());
                    let m = vals.clone().sum::<T>() / T::from_usize_lossy(count);
                    mean[c] = m;
                    var[c] = vals.map(|v| (v - m) * (v - m)).sum::<T>() / T::from_usize_lossy(count);
                }
                let unbiased = if count > 1 {
                    let f = T::from_usize_lossy(count) / T::from_usize_lossy(count - 1);
                    var.iter().map(|&v| v * f).collect()
                } else {
                    var.clone()
                };
                (mean.clone(), var, Some(BatchStats { mean, var: unbiased }))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return shape_err(OP, "running statistics length");
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * inner;
                for l in 0..inner {
                    let h = (xd[off + l] - mean[c]) * inv_std[c];
                    xhat[off + l] = h;
                    y[off + l] = g[c] * h + bt[c];
                }
            }
        }
        let out = Tensor::new(xs, y)?;
        let training = matches!(mode, BatchNormMode::Train);
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std, channels, inner, training };
        Ok((self.push(OP, out, op, &[x, gamma, beta])?, stats))
    }

    /// Layer normalization over the last axis with affine `[C]` parameters.
    pub fn layernorm_lastdim(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const OP: &str = "layernorm";
        let width = *self.shape(x).last().expect("rank >= 1");
        if self.shape(gamma) != [width] || self.shape(beta) != [width] {
            return shape_err(OP, format!("affine {:?}/{:?} for width {width}", self.shape(gamma), self.shape(beta)));
        }
        let eps = T::lit(NORM_EPS);
        let wt = T::from_usize_lossy(width);
        let xd = self.data(x);
        let (g, bt) = (self.data(gamma), self.data(beta));
        let rows = xd.len() / width;
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut y = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * width..][..width];
            let m = row.iter().copied().sum::<T>() / wt;
            let v = row.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / wt;
            let is = T::one() / (v + eps).sqrt();
            inv_std[r] = is;
            for c in 0..width {
                let h = (row[c] - m) * is;
                xhat[r * width + c] = h;
                y[r * width + c] = g[c] * h + bt[c];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), y)?;
        self.push(OP, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std, width }, &[x, gamma, beta])
    }

    /// Mean over the last axis of `[B, C, L]`, giving `[B, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        const OP: &str = "global_avg_pool";
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return shape_err(OP, format!("input {s:?}"));
        }
        let len = s[2];
        let inv = T::one() / T::from_usize_lossy(len);
        let data = self.data(a).chunks(len).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(vec![s[0], s[1]], data)?;
        self.push(OP, out, Op::AvgPool { a, len }, &[a])
    }

    /// Stochastic depth: zeroes the whole sample (leading axis) with
    /// probability `rate` and rescales survivors by `1/(1−rate)`.
    pub fn droppath<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return invalid("droppath", format!("rate {rate} outside [0, 1)"));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let s = self.shape(a);
        let per = s[1..].iter().product::<usize>();
        let keep = T::lit(1.0 / (1.0 - rate));
        let mut mask = Vec::with_capacity(s[0] * per);
        for _ in 0..s[0] {
            let m = if rng.random::<f64>() < rate { T::zero() } else { keep };
            mask.extend(std::iter::repeat_n(m, per));
        }
        self.apply_mask("droppath", a, mask)
    }

    /// Elementwise inverted dropout.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return invalid("dropout", format!("rate {rate} outside [0, 1)"));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask = (0..self.value(a).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.apply_mask("dropout", a, mask)
    }

    fn apply_mask(&mut self, name: &'static str, a: Var, mask: Vec<T>) -> Result<Var> {
        let data = self.data(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(name, out, Op::Mask { a, mask }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = Tensor::new(shape.to_vec(), self.data(a).to_vec())?;
        self.push("reshape", out, Op::Reshape { a }, &[a])
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        const OP: &str = "permute";
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return invalid(OP, format!("{perm:?} is not a permutation of rank {}", s.len()));
        }
        let data = permute_data(self.data(a), &s, perm);
        let out = Tensor::new(perm.iter().map(|&p| s[p]).collect(), data)?;
        self.push(OP, out, Op::Permute { a, perm: perm.to_vec() }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.data(a).iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(total), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::from_usize_lossy(self.value(a).numel());
        let total = self.data(a).iter().copied().sum::<T>() / n;
        self.push("mean", Tensor::scalar(total), Op::Mean { a }, &[a])
    }
}
