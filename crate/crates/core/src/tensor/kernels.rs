//! Raw loops behind the heavier ops.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    /// Output positions `lo` for which `lo*stride + k - padding` is inside the input.
    fn valid_range(&self, k: usize) -> (usize, usize) {
        let (s, p, l) = (self.stride, self.padding, self.len_in);
        let lo_min = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // lo*s + k - p <= l - 1  <=>  lo <= (l - 1 + p - k) / s
        let lo_max_excl = if l + p > k { ((l - 1 + p - k) / s + 1).min(self.len_out) } else { 0 };
        (lo_min, lo_max_excl.max(lo_min))
    }
}

pub(crate) fn conv1d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut out = vec![T::zero(); g.batch * g.c_out * g.len_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let orow = &mut out[(b * g.c_out + co) * g.len_out..][..g.len_out];
            if let Some(bias) = bias {
                orow.iter_mut().for_each(|o| *o = bias[co]);
            }
            for cil in 0..cin_g {
                let ci = grp * cin_g + cil;
                let xrow = &x[(b * g.c_in + ci) * g.len_in..][..g.len_in];
                for k in 0..g.kernel {
                    let wv = w[(co * cin_g + cil) * g.kernel + k];
                    let (lo0, lo1) = g.valid_range(k);
                    for lo in lo0..lo1 {
                        orow[lo] = orow[lo] + wv * xrow[lo * g.stride + k - g.padding];
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)` for upstream gradient `dy`.
pub(crate) fn conv1d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.c_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let dyrow = &dy[(b * g.c_out + co) * g.len_out..][..g.len_out];
            db[co] = db[co] + dyrow.iter().copied().sum::<T>();
            for cil in 0..cin_g {
                let ci = grp * cin_g + cil;
                let base = (b * g.c_in + ci) * g.len_in;
                for k in 0..g.kernel {
                    let widx = (co * cin_g + cil) * g.kernel + k;
                    let wv = w[widx];
                    let (lo0, lo1) = g.valid_range(k);
                    let mut acc = T::zero();
                    for lo in lo0..lo1 {
                        let xi = base + lo * g.stride + k - g.padding;
                        acc = acc + dyrow[lo] * x[xi];
                        dx[xi] = dx[xi] + dyrow[lo] * wv;
                    }
                    dw[widx] = dw[widx] + acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// `c[bt] = a[bt] (m×k) · b[bt] (k×n)` for every batch slice.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    for bt in 0..batch {
        let (a, b) = (&a[bt * m * k..][..m * k], &b[bt * k * n..][..k * n]);
        let c = &mut c[bt * m * n..][..m * n];
        for i in 0..m {
            let crow = &mut c[i * n..][..n];
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * n..][..n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }
    c
}

/// Batched transpose of trailing `rows×cols` blocks.
pub(crate) fn transpose<T: Scalar>(a: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); a.len()];
    for bt in 0..batch {
        let off = bt * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                t[off + c * rows + r] = a[off + r * cols + c];
            }
        }
    }
    t
}
