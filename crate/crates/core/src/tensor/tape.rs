use super::kernels::{self, ConvGeom};
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, fan_in: usize, fan_out: usize },
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Abs { a: Var },
    Gelu { a: Var },
    Softmax { a: Var, width: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, channels: usize, inner: usize, training: bool },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, width: usize },
    AvgPool { a: Var, len: usize },
    Mask { a: Var, mask: Vec<T> },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Sum { a: Var },
    Mean { a: Var },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    /// Whether gradient must flow into this node.
    pub tracks: bool,
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor; gradient is collected iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let tracks = t.requires_grad();
        self.nodes.push(Node { value: t, op: Op::Leaf, tracks });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient accumulated on a leaf by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub(crate) fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].tracks
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let tracks = inputs.iter().any(|&v| self.tracks(v));
        self.nodes.push(Node { value, op, tracks });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar loss. Leaves registered with
    /// `requires_grad` receive their gradient; repeated uses accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracks {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].value.requires_grad() {
                    self.nodes[i].value.set_grad(g)?;
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].tracks {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e = *e + d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv1d_backward(geom, self.data(*x), self.data(*w), g);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Linear { x, w, b, rows, fan_in, fan_out } => {
                let (rows, fi, fo) = (*rows, *fan_in, *fan_out);
                // y = x wᵀ: dx = dy w, dw = dyᵀ x
                let dx = kernels::matmul(g, self.data(*w), 1, rows, fo, fi);
                let dyt = kernels::transpose(g, 1, rows, fo);
                let dw = kernels::matmul(&dyt, self.data(*x), 1, fo, rows, fi);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    let mut db = vec![T::zero(); fo];
                    for r in 0..rows {
                        for o in 0..fo {
                            db[o] = db[o] + g[r * fo + o];
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::MatMul { a, b, batch, m, k, n } => {
                let (bt, m, k, n) = (*batch, *m, *k, *n);
                let bt_t = kernels::transpose(self.data(*b), bt, k, n);
                acc(*a, kernels::matmul(g, &bt_t, bt, m, n, k));
                let at = kernels::transpose(self.data(*a), bt, m, k);
                acc(*b, kernels::matmul(&at, g, bt, k, m, n));
            }
            Op::Add { a, b } => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub { a, b } => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.data(*a), self.data(*b));
                acc(*a, g.iter().zip(bv).map(|(&g, &b)| g * b).collect());
                acc(*b, g.iter().zip(av).map(|(&g, &a)| g * a).collect());
            }
            Op::Scale { a, s } => acc(*a, g.iter().map(|&v| v * *s).collect()),
            Op::Abs { a } => acc(
                *a,
                g.iter()
                    .zip(self.data(*a))
                    .map(|(&g, &x)| if x > T::zero() { g } else if x < T::zero() { -g } else { T::zero() })
                    .collect(),
            ),
            Op::Gelu { a } => {
                let inv_sqrt2 = T::FRAC_1_SQRT_2();
                let inv_sqrt_2pi = T::FRAC_1_SQRT_2() * T::FRAC_2_SQRT_PI() * T::lit(0.5);
                let half = T::lit(0.5);
                acc(
                    *a,
                    g.iter()
                        .zip(self.data(*a))
                        .map(|(&g, &x)| {
                            let cdf = half * (T::one() + (x * inv_sqrt2).error_fn());
                            let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                            g * (cdf + x * pdf)
                        })
                        .collect(),
                );
            }
            Op::Softmax { a, width } => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(*width).zip(y.chunks(*width)).zip(g.chunks(*width)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for ((d, &y), &g) in dxr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (g - dot);
                    }
                }
                acc(*a, dx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, channels, inner, training } => {
                let gam = self.data(*gamma);
                let (c_n, inner) = (*channels, *inner);
                let batch = xhat.len() / (c_n * inner);
                let count = T::from_usize_lossy(batch * inner);
                let mut dx = vec![T::zero(); xhat.len()];
                let mut dg = vec![T::zero(); c_n];
                let mut dbeta = vec![T::zero(); c_n];
                for c in 0..c_n {
                    let idx = |b: usize, l: usize| (b * c_n + c) * inner + l;
                    let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
                    for b in 0..batch {
                        for l in 0..inner {
                            let j = idx(b, l);
                            sum_dy = sum_dy + g[j];
                            sum_dy_xhat = sum_dy_xhat + g[j] * xhat[j];
                        }
                    }
                    dg[c] = sum_dy_xhat;
                    dbeta[c] = sum_dy;
                    let scale = gam[c] * inv_std[c];
                    for b in 0..batch {
                        for l in 0..inner {
                            let j = idx(b, l);
                            dx[j] = if *training {
                                scale * (g[j] - (sum_dy + xhat[j] * sum_dy_xhat) / count)
                            } else {
                                scale * g[j]
                            };
                        }
                    }
                }
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, dbeta);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std, width } => {
                let w = *width;
                let gam = self.data(*gamma);
                let wt = T::from_usize_lossy(w);
                let mut dx = vec![T::zero(); xhat.len()];
                let mut dg = vec![T::zero(); w];
                let mut dbeta = vec![T::zero(); w];
                for (r, ((dxr, xr), gr)) in dx.chunks_mut(w).zip(xhat.chunks(w)).zip(g.chunks(w)).enumerate() {
                    let (mut s1, mut s2) = (T::zero(), T::zero());
                    for c in 0..w {
                        let dxh = gr[c] * gam[c];
                        s1 = s1 + dxh;
                        s2 = s2 + dxh * xr[c];
                        dg[c] = dg[c] + gr[c] * xr[c];
                        dbeta[c] = dbeta[c] + gr[c];
                    }
                    for c in 0..w {
                        let dxh = gr[c] * gam[c];
                        dxr[c] = inv_std[r] * (dxh - (s1 + xr[c] * s2) / wt);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, dbeta);
            }
            Op::AvgPool { a, len } => {
                let inv = T::one() / T::from_usize_lossy(*len);
                acc(*a, g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, *len)).collect());
            }
            Op::Mask { a, mask } => acc(*a, g.iter().zip(mask).map(|(&g, &m)| g * m).collect()),
            Op::Reshape { a } => acc(*a, g.to_vec()),
            Op::Permute { a, perm } => {
                let inv = inverse_perm(perm);
                acc(*a, permute_data(g, node.value.shape(), &inv));
            }
            Op::Sum { a } => acc(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Mean { a } => {
                let n = self.value(*a).numel();
                acc(*a, vec![g[0] / T::from_usize_lossy(n); n]);
            }
        }
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Output axis `i` takes input axis `perm[i]`.
pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}
