//! Per-tensor privacy mechanism: truncated SVD, adaptive singular-value
//! clipping and gradient-aligned noise injection, plus a classic
//! global-clip DP-SGD baseline.

mod svd;
#[cfg(test)]
mod tests;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use svd::{svd, truncated_svd, Matrix, SvdTriple};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DpError {
    #[error("invalid dp config: {0}")]
    Config(String),
    #[error("non-finite gradient")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, DpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    GradientSvd,
    Uniform,
    Exponential,
}

impl FromStr for WeightScheme {
    type Err = DpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient_svd" => Ok(Self::GradientSvd),
            "uniform" => Ok(Self::Uniform),
            "exponential" => Ok(Self::Exponential),
            other => Err(DpError::Config(format!("unknown weight scheme `{other}`"))),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GradientSvd => "gradient_svd",
            Self::Uniform => "uniform",
            Self::Exponential => "exponential",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub rank_k: usize,
    /// Noise multiplier σ.
    pub sigma: f64,
    /// Initial clipping threshold λ₀.
    pub clip_init: f64,
    /// Threshold momentum γ.
    pub momentum: f64,
    pub delta: f64,
    pub weights: WeightScheme,
    pub seed: u64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { rank_k: 10, sigma: 2.0, clip_init: 2.0, momentum: 0.9, delta: 1e-5, weights: WeightScheme::GradientSvd, seed: 0 }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DpError::Config(m));
        if self.rank_k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be finite and nonnegative", self.sigma));
        }
        if !(self.clip_init > 0.0 && self.clip_init.is_finite()) {
            return bad(format!("clip_init {} must be positive", self.clip_init));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return bad(format!("momentum {} outside (0, 1)", self.momentum));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        Ok(())
    }
}

/// Historical clipping threshold of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipState {
    pub lambda: f64,
}

impl ClipState {
    pub fn new(clip_init: f64) -> Self {
        Self { lambda: clip_init }
    }
}

/// Rows follow the first axis, columns flatten the rest; 1-D becomes m×1.
pub fn matricize<T: Scalar>(grad: &Tensor<T>) -> Matrix<T> {
    let shape = grad.shape();
    let rows = shape.first().copied().unwrap_or(1);
    let cols = if rows == 0 { 0 } else { grad.numel() / rows };
    Matrix::new(rows, cols, grad.data().to_vec())
}

pub fn dematricize<T: Scalar>(m: Matrix<T>, shape: &[usize]) -> Result<Tensor<T>> {
    Tensor::new(shape.to_vec(), m.into_data()).map_err(|e| DpError::Shape(e.to_string()))
}

/// `λ_t = γ·λ_{t−1} + (1−γ)·‖g‖`.
pub fn update_threshold(prev: f64, grad_norm: f64, gamma: f64) -> f64 {
    gamma * prev + (1.0 - gamma) * grad_norm
}

pub fn clip_singular<T: Scalar>(s: &[T], lambda: T) -> Vec<T> {
    s.iter().map(|&x| x.min(lambda)).collect()
}

/// Normalized noise weights. An all-zero spectrum falls back to uniform.
pub fn utility_weights<T: Scalar>(s: &[T], scheme: WeightScheme) -> Vec<T> {
    let k = s.len();
    if k == 0 {
        return Vec::new();
    }
    let raw: Vec<T> = match scheme {
        WeightScheme::GradientSvd => {
            if s.iter().all(|&x| x <= T::zero()) {
                vec![T::one(); k]
            } else {
                s.to_vec()
            }
        }
        WeightScheme::Uniform => vec![T::one(); k],
        WeightScheme::Exponential => (1..=k).map(|i| (-T::from_usize_lossy(i)).exp()).collect(),
    };
    let total: T = raw.iter().copied().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Diagonal noise coefficients `ξᵢ·wᵢ` with `ξᵢ ~ N(0, (σλ)²)`.
pub fn noise_coefficients<T: Scalar, R: Rng + ?Sized>(w: &[T], sigma: f64, lambda: f64, rng: &mut R) -> Vec<T> {
    let std = sigma * lambda;
    w.iter()
        .map(|&wi| {
            let xi: f64 = StandardNormal.sample(rng);
            T::lit(xi * std) * wi
        })
        .collect()
}

/// `z = U · diag(ξ ⊙ w) · Vᵀ`.
pub fn gani_noise<T: Scalar, R: Rng + ?Sized>(triple: &SvdTriple<T>, w: &[T], sigma: f64, lambda: f64, rng: &mut R) -> Matrix<T> {
    triple.reconstruct_with(&noise_coefficients(w, sigma, lambda, rng))
}

/// `E(k) = Σ_{i≤k} σᵢ² / Σ σᵢ²` for every prefix length.
pub fn energy_capture<T: Scalar>(s: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    let prefix: Vec<T> = s
        .iter()
        .map(|&x| {
            acc = acc + x * x;
            acc
        })
        .collect();
    let total = acc;
    if total == T::zero() {
        return vec![T::one(); s.len()];
    }
    prefix.into_iter().map(|p| p / total).collect()
}

/// `Σ_{i≤k} σᵢ² / (k·σ_noise²)`.
pub fn snr_k<T: Scalar>(s: &[T], k: usize, noise_sigma: T) -> T {
    let k = k.min(s.len()).max(1);
    s.iter().take(k).map(|&x| x * x).sum::<T>() / (T::from_usize_lossy(k) * noise_sigma * noise_sigma)
}

/// Rank-`k` reconstruction with singular values clipped at `lambda`,
/// before any noise is added.
pub fn clipped_reconstruction<T: Scalar>(grad: &Tensor<T>, lambda: T, k: usize) -> Result<Matrix<T>> {
    let g = matricize(grad);
    if !g.is_finite() {
        return Err(DpError::NonFinite);
    }
    let t = truncated_svd(&g, k);
    Ok(t.reconstruct_with(&clip_singular(&t.s, lambda)))
}

#[derive(Debug, Clone)]
pub struct DpOutput<T> {
    pub grad: Tensor<T>,
    /// Threshold used at this step.
    pub lambda: f64,
    pub effective_k: usize,
    pub weights: Vec<T>,
}

impl<T: Scalar> DpOutput<T> {
    pub fn weight_sq_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.to_f64_lossy().powi(2)).sum()
    }
}

/// Privatizes one parameter gradient and advances its clip state.
pub fn dp_gradient<T: Scalar, R: Rng + ?Sized>(grad: &Tensor<T>, state: &mut ClipState, cfg: &DpConfig, rng: &mut R) -> Result<DpOutput<T>> {
    let g = matricize(grad);
    if !g.is_finite() {
        return Err(DpError::NonFinite);
    }
    let (m, n) = (g.rows(), g.cols());
    let k = cfg.rank_k.min(m).min(n);
    let norm = g.frobenius_norm().to_f64_lossy();
    state.lambda = update_threshold(state.lambda, norm, cfg.momentum);
    let lambda = state.lambda;

    let (triple, clipped, weights) = if norm == 0.0 {
        let eye = |rows| Matrix::from_fn(rows, k, |r, c| if r == c { T::one() } else { T::zero() });
        let triple = SvdTriple { u: eye(m), s: vec![T::zero(); k], v: eye(n) };
        (triple, vec![T::zero(); k], vec![T::one() / T::from_usize_lossy(k); k])
    } else {
        let triple = truncated_svd(&g, k);
        let clipped = clip_singular(&triple.s, T::lit(lambda));
        let weights = utility_weights(&triple.s, cfg.weights);
        (triple, clipped, weights)
    };
    let noise = noise_coefficients(&weights, cfg.sigma, lambda, rng);
    let diag: Vec<T> = clipped.iter().zip(&noise).map(|(&a, &b)| a + b).collect();
    let out = dematricize(triple.reconstruct_with(&diag), grad.shape())?;
    Ok(DpOutput { grad: out, lambda, effective_k: k, weights })
}

/// Global L2 norm over a set of gradients.
pub fn global_norm<T: Scalar>(grads: &[&Tensor<T>]) -> T {
    grads.iter().flat_map(|g| g.data().iter()).map(|&x| x * x).sum::<T>().sqrt()
}

/// Baseline mechanism: scale all gradients so the global norm is at most
/// `clip`, then add isotropic noise with std `σ·clip/batch`.
pub fn dpsgd_privatize<T: Scalar, R: Rng + ?Sized>(grads: &[Tensor<T>], clip: f64, sigma: f64, batch: usize, rng: &mut R) -> Result<Vec<Tensor<T>>> {
    if !(clip > 0.0) || batch == 0 {
        return Err(DpError::Config(format!("clip {clip} and batch {batch} must be positive")));
    }
    let clipped = dpsgd_clip(grads, clip)?;
    let std = sigma * clip / batch as f64;
    Ok(clipped
        .into_iter()
        .map(|mut g| {
            g.data_mut().iter_mut().for_each(|x| {
                let z: f64 = StandardNormal.sample(rng);
                *x = *x + T::lit(z * std);
            });
            g
        })
        .collect())
}

/// Global clipping step of the baseline.
pub fn dpsgd_clip<T: Scalar>(grads: &[Tensor<T>], clip: f64) -> Result<Vec<Tensor<T>>> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(DpError::NonFinite);
    }
    let refs: Vec<&Tensor<T>> = grads.iter().collect();
    let norm = global_norm(&refs).to_f64_lossy();
    if norm <= clip {
        return Ok(grads.to_vec());
    }
    let mut scale = T::lit(clip / norm);
    loop {
        let out: Vec<Tensor<T>> = grads
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.data_mut().iter_mut().for_each(|x| *x = *x * scale);
                g
            })
            .collect();
        let refs: Vec<&Tensor<T>> = out.iter().collect();
        // rounding can leave the norm a few ulps above the threshold
        if global_norm(&refs).to_f64_lossy() <= clip {
            return Ok(out);
        }
        scale = scale * (T::one() - T::epsilon() * T::lit(4.0));
    }
}
