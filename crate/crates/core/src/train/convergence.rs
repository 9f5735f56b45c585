//! Noisy gradient descent on a strongly convex quadratic, compared with the
//! analytic error bound.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{Result, TrainError};
use crate::accountant::{convergence_bound, ConvergenceParams};
use crate::rng::{key_hash, substream};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub params: ConvergenceParams,
    /// Noise weights along the top-`w.len()` eigen-directions.
    pub weights: Vec<f64>,
    pub dim: usize,
    pub steps: u64,
    pub seeds: u64,
    /// Log every this many steps (and at the last step).
    pub log_every: u64,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            params: ConvergenceParams { smoothness: 1.0, strong_convexity: 0.1, step_size: 0.5, sigma: 1.0 },
            weights: vec![0.4, 0.3, 0.2, 0.1],
            dim: 16,
            steps: 100,
            seeds: 200,
            log_every: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub step: u64,
    pub mean: f64,
    /// Standard error of the mean over seeds.
    pub stderr: f64,
    pub bound: f64,
    /// `mean <= bound + 3·stderr`
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub spectrum: Vec<f64>,
    pub delta0: f64,
    pub points: Vec<ConvergencePoint>,
}

impl ConvergenceReport {
    pub fn holds(&self) -> bool {
        self.points.iter().all(|p| p.holds)
    }
}

/// Eigenvalues spaced evenly from `L` down to `μ`.
pub fn spectrum(mu: f64, l: f64, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![mu];
    }
    (0..dim).map(|i| if i + 1 == dim { mu } else { l - (l - mu) * i as f64 / (dim - 1) as f64 }).collect()
}

/// Runs `θ ← θ − η(Aθ + z)` from `θ₀ = 1` with `A = diag(spectrum)` and
/// `zᵢ = σ·wᵢ·ξᵢ` on the leading eigen-directions. Reports the mean
/// suboptimality `½θᵀAθ` over seeds at every logged step.
pub fn convergence_experiment(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let ConvergenceParams { smoothness: l, strong_convexity: mu, step_size: eta, sigma } = cfg.params;
    if cfg.dim == 0 || cfg.weights.len() > cfg.dim || cfg.seeds < 2 || cfg.log_every == 0 {
        return Err(TrainError::Config(format!(
            "dim {}, {} weights, {} seeds, log_every {}",
            cfg.dim,
            cfg.weights.len(),
            cfg.seeds,
            cfg.log_every
        )));
    }
    // validates μ, L, η
    convergence_bound(&cfg.params, &cfg.weights, 0, 0.0)?;
    let a = spectrum(mu, l, cfg.dim);
    let f = |th: &[f64]| 0.5 * th.iter().zip(&a).map(|(x, ai)| ai * x * x).sum::<f64>();
    let theta0 = vec![1.0; cfg.dim];
    let delta0 = f(&theta0);

    let logged: Vec<u64> = (0..=cfg.steps).filter(|t| t % cfg.log_every == 0 || *t == cfg.steps).collect();
    let mut sum = vec![0.0; logged.len()];
    let mut sum_sq = vec![0.0; logged.len()];
    for s in 0..cfg.seeds {
        let mut rng = substream(cfg.seed, &[key_hash("converge"), s]);
        let mut th = theta0.clone();
        let mut slot = 0;
        for t in 0..=cfg.steps {
            if logged[slot] == t {
                let e = f(&th);
                sum[slot] += e;
                sum_sq[slot] += e * e;
                slot = (slot + 1).min(logged.len() - 1);
            }
            if t == cfg.steps {
                break;
            }
            for (i, x) in th.iter_mut().enumerate() {
                let noise = match cfg.weights.get(i) {
                    Some(w) => {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sigma * w * z
                    }
                    None => 0.0,
                };
                *x -= eta * (a[i] * *x + noise);
            }
        }
    }
    let n = cfg.seeds as f64;
    let points = logged
        .iter()
        .enumerate()
        .map(|(j, &step)| {
            let mean = sum[j] / n;
            let var = ((sum_sq[j] - n * mean * mean) / (n - 1.0)).max(0.0);
            let stderr = (var / n).sqrt();
            let bound = convergence_bound(&cfg.params, &cfg.weights, step, delta0)?;
            Ok(ConvergencePoint { step, mean, stderr, bound, holds: mean <= bound + 3.0 * stderr })
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport { spectrum: a, delta0, points })
}
