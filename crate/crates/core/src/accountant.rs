//! Rényi-DP accounting for the subsampled Gaussian mechanism and for the
//! weighted per-step bound, with conversion to (ε, δ).

use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AccountantError {
    #[error("RDP order must exceed 1, got {0}")]
    Order(f64),
    #[error("invalid accountant parameter: {0}")]
    Param(String),
}

pub type Result<T> = std::result::Result<T, AccountantError>;

/// Lanczos coefficients for g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (reflection for x < ½ handles the rest of the
/// non-pole axis).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin().abs()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let a = LANCZOS[1..].iter().enumerate().fold(LANCZOS[0], |acc, (i, c)| acc + c / (x + (i + 1) as f64));
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// ln C(2λ, λ) = ln Γ(2λ+1) − 2 ln Γ(λ+1).
pub fn ln_central_binomial(lambda: f64) -> f64 {
    ln_gamma(2.0 * lambda + 1.0) - 2.0 * ln_gamma(lambda + 1.0)
}

fn check(sigma: f64, q: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(AccountantError::Param(format!("sigma {sigma} must be positive")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(AccountantError::Param(format!("sampling rate {q} outside (0, 1]")));
    }
    Ok(())
}

/// Per-step RDP of the subsampled Gaussian at order `lambda`:
/// `1/(λ−1) · ln(1 + q²λ·C(2λ,λ)·(e^{λ/σ²} − 1))`, evaluated in log space.
pub fn rdp_step(sigma: f64, q: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 1.0) {
        return Err(AccountantError::Order(lambda));
    }
    check(sigma, q)?;
    let x = lambda / (sigma * sigma);
    // ln(e^x − 1)
    let ln_em1 = x + (-(-x).exp_m1()).ln();
    let l = 2.0 * q.ln() + lambda.ln() + ln_central_binomial(lambda) + ln_em1;
    let ln1p_exp = if l > 36.0 { l + (-l).exp().ln_1p() } else { l.exp().ln_1p() };
    Ok(ln1p_exp / (lambda - 1.0))
}

/// `{1.1 + 0.1·i : i = 1..=300}`.
pub fn order_grid() -> Vec<f64> {
    (1..=300).map(|i| 1.1 + 0.1 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccountantMode {
    #[default]
    SubsampledGaussian,
    WeightedLemma,
}

impl FromStr for AccountantMode {
    type Err = AccountantError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subsampled_gaussian" => Ok(Self::SubsampledGaussian),
            "weighted_lemma" => Ok(Self::WeightedLemma),
            other => Err(AccountantError::Param(format!("unknown accountant mode `{other}`"))),
        }
    }
}

impl fmt::Display for AccountantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SubsampledGaussian => "subsampled_gaussian",
            Self::WeightedLemma => "weighted_lemma",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub order: f64,
}

/// Running privacy budget of one training run.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    orders: Vec<f64>,
    per_step: Vec<f64>,
    steps: u64,
    q: f64,
    sigma: f64,
    delta: f64,
    mode: AccountantMode,
    // weighted mode: Σwᵢ² of each recorded step
    weight_history: Vec<f64>,
}

impl PrivacyLedger {
    pub fn new(q: f64, sigma: f64, delta: f64, mode: AccountantMode) -> Result<Self> {
        check(sigma, q)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountantError::Param(format!("delta {delta} outside (0, 1)")));
        }
        let orders = order_grid();
        let per_step = orders.iter().map(|&l| rdp_step(sigma, q, l)).collect::<Result<_>>()?;
        Ok(Self { orders, per_step, steps: 0, q, sigma, delta, mode, weight_history: Vec::new() })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn mode(&self) -> AccountantMode {
        self.mode
    }

    pub fn sampling_rate(&self) -> f64 {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Composes `steps` more mechanism invocations. In weighted mode these
    /// are charged at the one-hot worst case Σwᵢ² = 1.
    pub fn accumulate(&mut self, steps: u64) {
        self.steps += steps;
        if self.mode == AccountantMode::WeightedLemma {
            self.weight_history.extend(std::iter::repeat_n(1.0, steps as usize));
        }
    }

    /// Composes one step per entry, each with its own Σwᵢ².
    pub fn accumulate_weighted(&mut self, weight_sq_sums: &[f64]) {
        self.steps += weight_sq_sums.len() as u64;
        if self.mode == AccountantMode::WeightedLemma {
            self.weight_history.extend_from_slice(weight_sq_sums);
        }
    }

    /// Accumulated RDP at every grid order.
    pub fn rdp_totals(&self) -> Vec<f64> {
        match self.mode {
            AccountantMode::SubsampledGaussian => self.per_step.iter().map(|r| self.steps as f64 * r).collect(),
            AccountantMode::WeightedLemma => {
                let w2: f64 = self.weight_history.iter().sum();
                self.orders.iter().map(|&a| a / (2.0 * self.sigma * self.sigma) * w2).collect()
            }
        }
    }

    /// `R_total(λ) + ln(1/δ)/(λ−1)` per order.
    pub fn epsilon_per_order(&self) -> Vec<f64> {
        let log_inv_delta = (1.0 / self.delta).ln();
        self.rdp_totals().iter().zip(&self.orders).map(|(r, &l)| r + log_inv_delta / (l - 1.0)).collect()
    }

    /// Minimum over the order grid and the order attaining it.
    pub fn epsilon(&self) -> EpsilonReport {
        let eps = self.epsilon_per_order();
        let (i, &e) = eps.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty grid");
        EpsilonReport { epsilon: e, order: self.orders[i] }
    }
}

/// `q²α/(2σ²)·Σwᵢ²`.
pub fn amplified_bound(q: f64, sigma: f64, w: &[f64], alpha: f64) -> f64 {
    q * q * alpha / (2.0 * sigma * sigma) * w.iter().map(|x| x * x).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub step_size: f64,
    pub sigma: f64,
}

/// `(1−μη)^T·Δ₀ + (ησ²/2μ)·Σwᵢ²`.
pub fn convergence_bound(p: &ConvergenceParams, w: &[f64], steps: u64, delta0: f64) -> Result<f64> {
    let ConvergenceParams { smoothness: l, strong_convexity: mu, step_size: eta, sigma } = *p;
    if !(mu > 0.0 && mu <= l) {
        return Err(AccountantError::Param(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
    }
    if !(eta > 0.0 && eta <= 1.0 / l) {
        return Err(AccountantError::Param(format!("step size {eta} exceeds 1/L")));
    }
    let w2: f64 = w.iter().map(|x| x * x).sum();
    let decay = (1.0 - mu * eta).powi(steps.min(i32::MAX as u64) as i32);
    Ok(decay * delta0 + eta * sigma * sigma / (2.0 * mu) * w2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_at_integers_and_half() {
        let mut fact = 1.0f64;
        for n in 1..30 {
            // Γ(n+1) = n!
            fact *= n as f64;
            assert!((ln_gamma(n as f64 + 1.0) - fact.ln()).abs() < 1e-12 * fact.ln().max(1.0), "n={n}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!(ln_gamma(1.0).abs() < 1e-14 && ln_gamma(2.0).abs() < 1e-14);
    }

    #[test]
    fn central_binomial_integer_orders() {
        for (l, c) in [(1.0, 2.0), (2.0, 6.0), (3.0, 20.0), (10.0, 184_756.0)] {
            assert!((ln_central_binomial(l) - f64::ln(c)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_layout() {
        let g = order_grid();
        assert_eq!(g.len(), 300);
        assert!((g[0] - 1.2).abs() < 1e-12 && (g[299] - 31.1).abs() < 1e-12);
    }

    #[test]
    fn rdp_step_properties() {
        assert!(rdp_step(2.0, 0.01, 1.0).is_err());
        assert!(rdp_step(0.0, 0.01, 2.0).is_err());
        assert!(rdp_step(2.0, 1.5, 2.0).is_err());
        let mut prev = f64::INFINITY;
        for q in [1e-1, 1e-2, 1e-4, 1e-8] {
            let r = rdp_step(2.0, q, 5.0).unwrap();
            assert!(r > 0.0 && r < prev);
            prev = r;
        }
        assert!(rdp_step(2.0, 1e-12, 5.0).unwrap() < 1e-20);
        let mut prev = f64::INFINITY;
        for sigma in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let r = rdp_step(sigma, 0.05, 3.0).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn rdp_step_integer_order_closed_form() {
        // λ=2: C(4,2)=6
        let (s, q) = (2.0f64, 0.01f64);
        let want = (1.0 + q * q * 2.0 * 6.0 * ((2.0 / (s * s)).exp() - 1.0)).ln();
        assert!((rdp_step(s, q, 2.0).unwrap() / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_overflow_across_grid() {
        for l in order_grid() {
            for sigma in [0.3, 0.5, 1.0, 2.0] {
                for q in [1e-4, 0.1, 1.0] {
                    let r = rdp_step(sigma, q, l).unwrap();
                    assert!(r.is_finite() && r >= 0.0, "sigma={sigma} q={q} l={l}");
                }
            }
        }
    }

    #[test]
    fn empty_ledger_uses_largest_order() {
        let led = PrivacyLedger::new(0.01, 2.0, 1e-5, AccountantMode::SubsampledGaussian).unwrap();
        let rep = led.epsilon();
        assert!((rep.order - 31.1).abs() < 1e-12);
        assert!((rep.epsilon - (1e5f64).ln() / (rep.order - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn accumulation_is_additive() {
        for mode in [AccountantMode::SubsampledGaussian, AccountantMode::WeightedLemma] {
            let mut a = PrivacyLedger::new(0.02, 1.5, 1e-5, mode).unwrap();
            let mut b = a.clone();
            a.accumulate(37);
            a.accumulate(63);
            b.accumulate(100);
            assert_eq!(a.epsilon(), b.epsilon());
            let w = [0.3, 0.5, 0.2, 0.9];
            let mut c = PrivacyLedger::new(0.02, 1.5, 1e-5, mode).unwrap();
            let mut d = c.clone();
            c.accumulate_weighted(&w[..1]);
            c.accumulate_weighted(&w[1..]);
            d.accumulate_weighted(&w);
            assert_eq!(c.rdp_totals(), d.rdp_totals());
        }
    }

    #[test]
    fn totals_nondecreasing() {
        let mut led = PrivacyLedger::new(0.05, 1.0, 1e-5, AccountantMode::SubsampledGaussian).unwrap();
        let mut prev = led.rdp_totals();
        let mut prev_eps = led.epsilon().epsilon;
        for _ in 0..20 {
            led.accumulate(7);
            let now = led.rdp_totals();
            assert!(now.iter().zip(&prev).all(|(a, b)| a >= b));
            assert!(led.epsilon().epsilon >= prev_eps);
            prev_eps = led.epsilon().epsilon;
            prev = now;
        }
    }

    #[test]
    fn weighted_mode_is_linear_for_constant_weights() {
        let mut led = PrivacyLedger::new(0.01, 2.0, 1e-5, AccountantMode::WeightedLemma).unwrap();
        led.accumulate_weighted(&[0.1; 50]);
        for (&a, r) in led.orders().iter().zip(led.rdp_totals()) {
            assert!((r - 50.0 * a / 8.0 * 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn amplified_bound_examples() {
        let (q, s, a) = (0.02, 2.0, 4.0);
        assert!((amplified_bound(q, s, &[0.1; 10], a) - q * q * a / (20.0 * s * s)).abs() < 1e-18);
        let mut one_hot = [0.0; 10];
        one_hot[0] = 1.0;
        assert_eq!(amplified_bound(q, s, &one_hot, a), q * q * a / (2.0 * s * s));
    }

    #[test]
    fn convergence_bound_limits() {
        let p = ConvergenceParams { smoothness: 1.0, strong_convexity: 0.1, step_size: 0.5, sigma: 0.0 };
        let b = convergence_bound(&p, &[0.5, 0.5], 10, 3.0).unwrap();
        assert!((b - 0.95f64.powi(10) * 3.0).abs() < 1e-15);
        let p = ConvergenceParams { sigma: 2.0, ..p };
        let floor = 0.5 * 4.0 / 0.2 * 0.5;
        assert!((convergence_bound(&p, &[0.5, 0.5], 100_000, 3.0).unwrap() - floor).abs() < 1e-12);
        assert!(convergence_bound(&ConvergenceParams { step_size: 2.0, ..p }, &[1.0], 1, 1.0).is_err());
        assert!(convergence_bound(&ConvergenceParams { strong_convexity: 2.0, ..p }, &[1.0], 1, 1.0).is_err());
    }
}
