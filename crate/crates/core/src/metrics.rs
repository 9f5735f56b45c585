//! Trajectory reconstruction and evaluation metrics (ATE, RTE, scale
//! consistency, error CDF).

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trajectory too short: {0}")]
    TooShort(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub const DEFAULT_RTE_INTERVAL_S: f64 = 60.0;
pub const DEFAULT_SC_WINDOW_S: f64 = 5.0;
/// Windows whose ground-truth displacement is below this (meters) are skipped.
pub const SC_MIN_DISPLACEMENT: f64 = 1e-6;

/// Planar positions sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<[f64; 2]>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(positions: Vec<[f64; 2]>, dt: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(MetricsError::TooShort(format!("{} positions", positions.len())));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MetricsError::Invalid(format!("dt {dt}")));
        }
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(MetricsError::Invalid("non-finite position".into()));
        }
        Ok(Self { positions, dt })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn translated(&self, offset: [f64; 2]) -> Self {
        let positions = self.positions.iter().map(|p| [p[0] + offset[0], p[1] + offset[1]]).collect();
        Self { positions, dt: self.dt }
    }

    /// Velocities `(p_{i+1} − p_i)/dt`.
    pub fn finite_difference(&self) -> Vec<[f64; 2]> {
        self.positions.windows(2).map(|w| [(w[1][0] - w[0][0]) / self.dt, (w[1][1] - w[0][1]) / self.dt]).collect()
    }
}

/// Dead-reckons `N` velocities into `N + 1` positions starting at `origin`.
pub fn integrate(velocities: &[[f64; 2]], dt: f64, origin: [f64; 2]) -> Result<Trajectory> {
    let mut positions = Vec::with_capacity(velocities.len() + 1);
    positions.push(origin);
    let mut p = origin;
    for v in velocities {
        p = [p[0] + v[0] * dt, p[1] + v[1] * dt];
        positions.push(p);
    }
    Trajectory::new(positions, dt)
}

fn same_len(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Pointwise position errors ‖p_gt,i − p_i‖.
pub fn position_errors(est: &Trajectory, gt: &Trajectory) -> Result<Vec<f64>> {
    same_len(est, gt)?;
    Ok(est.positions.iter().zip(&gt.positions).map(|(&a, &b)| dist(a, b)).collect())
}

/// Absolute trajectory error: RMSE of position errors.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    same_len(est, gt)?;
    let sum: f64 = est
        .positions
        .iter()
        .zip(&gt.positions)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

fn interval_samples(seconds: f64, dt: f64) -> Result<usize> {
    if !(seconds > 0.0) {
        return Err(MetricsError::Invalid(format!("interval {seconds}")));
    }
    Ok(((seconds / dt).round() as usize).max(1))
}

/// Relative trajectory error: RMSE of displacement differences over
/// `interval_s`.
pub fn rte(est: &Trajectory, gt: &Trajectory, interval_s: f64) -> Result<f64> {
    same_len(est, gt)?;
    let d = interval_samples(interval_s, gt.dt)?;
    let n = est.len();
    if d >= n {
        return Err(MetricsError::TooShort(format!("{n} samples for a {d}-sample interval")));
    }
    let (e, g) = (&est.positions, &gt.positions);
    let sum: f64 = (0..n - d)
        .map(|i| {
            let dx = (g[i + d][0] - g[i][0]) - (e[i + d][0] - e[i][0]);
            let dy = (g[i + d][1] - g[i][1]) - (e[i + d][1] - e[i][1]);
            dx * dx + dy * dy
        })
        .sum();
    Ok((sum / (n - d) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScaleConsistency {
    /// Population std of per-window scale ratios.
    pub sc: f64,
    /// Least-squares slope of the ratio against window index.
    pub drift_rate: f64,
    pub ratios: Vec<(usize, f64)>,
}

/// Per-window scale ratios over non-overlapping windows of `window_s`.
pub fn scale_ratios(est: &Trajectory, gt: &Trajectory, window_s: f64) -> Result<Vec<(usize, f64)>> {
    same_len(est, gt)?;
    let w = interval_samples(window_s, gt.dt)?;
    let n = est.len();
    let mut out = Vec::new();
    let mut idx = 0;
    while (idx + 1) * w < n {
        let (a, b) = (idx * w, (idx + 1) * w);
        let g = dist(gt.positions[b], gt.positions[a]);
        if g >= SC_MIN_DISPLACEMENT {
            out.push((idx, dist(est.positions[b], est.positions[a]) / g));
        }
        idx += 1;
    }
    Ok(out)
}

/// SC and drift from a list of `(window index, ratio)`.
pub fn scale_stats(ratios: &[(usize, f64)]) -> Result<ScaleConsistency> {
    if ratios.is_empty() {
        return Err(MetricsError::TooShort("no window with sufficient ground-truth motion".into()));
    }
    let m = ratios.len() as f64;
    let mean = ratios.iter().map(|r| r.1).sum::<f64>() / m;
    let sc = (ratios.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / m).sqrt();
    let xm = ratios.iter().map(|r| r.0 as f64).sum::<f64>() / m;
    let sxx: f64 = ratios.iter().map(|r| (r.0 as f64 - xm).powi(2)).sum();
    let sxy: f64 = ratios.iter().map(|r| (r.0 as f64 - xm) * (r.1 - mean)).sum();
    let drift_rate = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(ScaleConsistency { sc, drift_rate, ratios: ratios.to_vec() })
}

pub fn scale_consistency(est: &Trajectory, gt: &Trajectory, window_s: f64) -> Result<ScaleConsistency> {
    scale_stats(&scale_ratios(est, gt, window_s)?)
}

/// Empirical CDF `F(e) = #{eᵢ ≤ e}/N` at each threshold.
pub fn cdf_of(errors: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    thresholds.iter().map(|&e| (e, sorted.partition_point(|&x| x <= e) as f64 / n)).collect()
}

pub fn error_cdf(est: &Trajectory, gt: &Trajectory, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    Ok(cdf_of(&position_errors(est, gt)?, thresholds))
}

/// `n` evenly spaced thresholds from 0 to the largest error.
pub fn default_thresholds(errors: &[f64], n: usize) -> Vec<f64> {
    let max = errors.iter().copied().fold(0.0, f64::max);
    let n = n.max(2);
    (0..n).map(|i| if i == n - 1 { max } else { max * i as f64 / (n - 1) as f64 }).collect()
}

/// Summary written by `dpnav eval` and the trainer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricSummary {
    pub ate: f64,
    pub rte: f64,
    pub sc: f64,
    pub sc_drift: f64,
}

/// ATE/RTE/SC together. RTE falls back to the whole trajectory span and SC
/// to NaN when the trajectory is too short for the configured windows.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, rte_interval_s: f64, sc_window_s: f64) -> Result<MetricSummary> {
    let span = (gt.len() - 1) as f64 * gt.dt;
    let rte_v = rte(est, gt, rte_interval_s.min(span))?;
    let (sc, sc_drift) = match scale_consistency(est, gt, sc_window_s) {
        Ok(s) => (s.sc, s.drift_rate),
        Err(MetricsError::TooShort(_)) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(MetricSummary { ate: ate(est, gt)?, rte: rte_v, sc, sc_drift })
}
