//! Dense row-major matrices and a one-sided Jacobi SVD.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                let row = &o.data[l * o.cols..(l + 1) * o.cols];
                for (d, &b) in out.data[i * o.cols..(i + 1) * o.cols].iter_mut().zip(row) {
                    *d = *d + a * b;
                }
            }
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Self::new(self.rows, self.cols, self.data.iter().zip(&o.data).map(|(&a, &b)| a - b).collect())
    }

    pub fn add(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Self::new(self.rows, self.cols, self.data.iter().zip(&o.data).map(|(&a, &b)| a + b).collect())
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `U` (m×k), descending singular values, `V` (n×k).
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriple<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> SvdTriple<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U · diag(d) · Vᵀ`.
    pub fn reconstruct_with(&self, d: &[T]) -> Matrix<T> {
        let (m, n, k) = (self.u.rows(), self.v.rows(), self.s.len());
        assert_eq!(d.len(), k);
        let mut out = Matrix::zeros(m, n);
        for l in 0..k {
            if d[l] == T::zero() {
                continue;
            }
            for i in 0..m {
                let a = self.u.get(i, l) * d[l];
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * self.v.get(j, l);
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        self.reconstruct_with(&self.s)
    }

    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.s.len());
        self.s.truncate(k);
        let keep = |m: &Matrix<T>| Matrix::from_fn(m.rows(), k, |r, c| m.get(r, c));
        self.u = keep(&self.u);
        self.v = keep(&self.v);
        self
    }
}

const MAX_SWEEPS: usize = 80;

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Thin SVD with `min(m, n)` singular triplets. The Jacobi rotations run
/// over the smaller dimension.
pub fn svd<T: Scalar>(g: &Matrix<T>) -> SvdTriple<T> {
    if g.rows() < g.cols() {
        let t = svd(&g.transpose());
        return SvdTriple { u: t.v, s: t.s, v: t.u };
    }
    let (m, n) = (g.rows(), g.cols());
    let mut a: Vec<Vec<T>> = (0..n).map(|c| g.column(c)).collect();
    let mut v: Vec<Vec<T>> = (0..n).map(|c| (0..n).map(|r| if r == c { T::one() } else { T::zero() }).collect()).collect();
    let eps = T::epsilon();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<T> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let smax = norms.iter().copied().fold(T::zero(), T::max);
    let tol = smax * eps * T::from_usize_lossy(m.max(n));

    let mut ucols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > tol && norms[j] > T::zero() {
            ucols.push(a[j].iter().map(|&x| x / norms[j]).collect());
        } else {
            ucols.push(vec![T::zero(); m]);
            deficient.push(slot);
        }
    }
    for slot in deficient {
        let basis: Vec<&Vec<T>> = ucols.iter().enumerate().filter(|(i, c)| *i != slot && c.iter().any(|x| *x != T::zero())).map(|(_, c)| c).collect();
        ucols[slot] = complete(&basis, m);
    }

    SvdTriple {
        u: Matrix::from_fn(m, n, |r, c| ucols[c][r]),
        s: order.iter().map(|&j| norms[j]).collect(),
        v: Matrix::from_fn(n, n, |r, c| v[order[c]][r]),
    }
}

fn rotate<T: Scalar>(x: &mut [T], y: &mut [T], c: T, s: T) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// A unit vector orthogonal to every column in `basis`, taken from the
/// canonical axis with the largest residual.
fn complete<T: Scalar>(basis: &[&Vec<T>], m: usize) -> Vec<T> {
    let project = |mut e: Vec<T>| {
        for _ in 0..2 {
            for b in basis {
                let p = dot(&e, b);
                e.iter_mut().zip(b.iter()).for_each(|(x, &y)| *x = *x - p * y);
            }
        }
        e
    };
    let mut best = (T::neg_infinity(), Vec::new());
    for i in 0..m {
        let mut e = vec![T::zero(); m];
        e[i] = T::one();
        let r = project(e);
        let norm = dot(&r, &r).sqrt();
        if norm > best.0 {
            best = (norm, r);
        }
    }
    let (norm, r) = best;
    r.into_iter().map(|x| x / norm).collect()
}

/// Best rank-`k` factorization; `k` is clamped to `min(m, n)`.
pub fn truncated_svd<T: Scalar>(g: &Matrix<T>, k: usize) -> SvdTriple<T> {
    svd(g).truncate(k)
}
