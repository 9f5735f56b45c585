mod common;

use common::hp::{self, Hp};
use dpnav_core::accountant::{amplified_bound, order_grid, rdp_step, AccountantMode, PrivacyLedger};
use dpnav_core::dp::{utility_weights, WeightScheme};
use rand::Rng;

const SIGMAS: [f64; 5] = [0.8, 1.0, 1.5, 2.0, 4.0];
const QS: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];
const STEPS: [u64; 5] = [1, 10, 100, 1000, 10_000];

fn digits(x: &Hp, n: u32) -> String {
    x.to_decimal(n)
}

#[test]
fn oracle_matches_reference_constants() {
    // reference digits from an independent multiprecision library
    assert_eq!(digits(&Hp::pi(), 50), "3.14159265358979323846264338327950288419716939937510");
    assert_eq!(digits(&Hp::ln2(), 50), "0.69314718055994530941723212145817656807550013436025");
    assert_eq!(digits(&Hp::int(1).exp(), 50), "2.71828182845904523536028747135266249775724709369995");
    assert_eq!(digits(&Hp::f64(0.5).ln_gamma(), 50), "0.57236494292470008707171367567652935582364740645765");
    assert_eq!(digits(&Hp::f64(3.7).ln_gamma(), 50), "1.42807232666538812920049835255057424136207468239115");
    assert_eq!(digits(&Hp::f64(63.2).ln_gamma(), 48), "197.693536769883720752085324286167326578628677478002");
    assert_eq!(digits(&hp::rdp_step(2.0, 0.01, 2.0), 50), "0.00077816267771397773079727839915924195217112152042");
    assert_eq!(digits(&hp::rdp_step(0.7, 0.3, 1.7), 50), "4.36451824447201171037068348269013604647676080633295");
}

#[test]
fn rdp_step_reference_point() {
    let r = rdp_step(2.0, 0.01, 2.0).unwrap();
    assert!(hp::rel_err(r, &hp::rdp_step(2.0, 0.01, 2.0)) < 1e-9);
}

#[test]
fn rdp_step_and_epsilon_match_oracle_on_grid() {
    let orders = order_grid();
    let mut worst_step = 0.0f64;
    let mut worst_eps = 0.0f64;
    for &sigma in &SIGMAS {
        for &q in &QS {
            let table = hp::rdp_table(sigma, q, &orders);
            for (&l, want) in orders.iter().zip(&table) {
                worst_step = worst_step.max(hp::rel_err(rdp_step(sigma, q, l).unwrap(), want));
            }
            for &t in &STEPS {
                let mut led = PrivacyLedger::new(q, sigma, 1e-5, AccountantMode::SubsampledGaussian).unwrap();
                led.accumulate(t);
                let got = led.epsilon();
                let (want, idx) = hp::epsilon(&table, t, 1e-5, &orders);
                worst_eps = worst_eps.max(hp::rel_err(got.epsilon, &want));
                assert_eq!(got.order, orders[idx], "argmin at sigma={sigma} q={q} T={t}");
            }
        }
    }
    assert!(worst_step < 1e-9, "rdp_step rel err {worst_step:e}");
    assert!(worst_eps < 1e-9, "epsilon rel err {worst_eps:e}");
}

#[test]
fn dpsgd_baseline_epsilon_matches_oracle() {
    let orders = order_grid();
    let q = 128.0 / 60_000.0;
    let table = hp::rdp_table(2.0, q, &orders);
    for t in [100, 4_690, 46_900] {
        let mut led = PrivacyLedger::new(q, 2.0, 1e-5, AccountantMode::SubsampledGaussian).unwrap();
        led.accumulate(t);
        let (want, _) = hp::epsilon(&table, t, 1e-5, &orders);
        assert!(hp::rel_err(led.epsilon().epsilon, &want) < 1e-6);
    }
}

#[test]
fn epsilon_monotone_on_grid() {
    let eps = |sigma: f64, q: f64, t: u64| {
        let mut led = PrivacyLedger::new(q, sigma, 1e-5, AccountantMode::SubsampledGaussian).unwrap();
        led.accumulate(t);
        led.epsilon().epsilon
    };
    for (i, &s) in SIGMAS.iter().enumerate() {
        for (j, &q) in QS.iter().enumerate() {
            for (k, &t) in STEPS.iter().enumerate() {
                let e = eps(s, q, t);
                if k + 1 < STEPS.len() {
                    assert!(eps(s, q, STEPS[k + 1]) >= e);
                }
                if j + 1 < QS.len() {
                    assert!(eps(s, QS[j + 1], t) >= e);
                }
                if i + 1 < SIGMAS.len() {
                    assert!(eps(SIGMAS[i + 1], q, t) <= e);
                }
            }
        }
    }
}

#[test]
fn weight_square_sum_two_ways() {
    let mut rng = dpnav_core::rng::seeded(5);
    for _ in 0..200 {
        let mut s: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let w = utility_weights(&s, WeightScheme::GradientSvd);
        let total: f64 = s.iter().sum();
        let direct = s.iter().map(|x| x * x).sum::<f64>() / (total * total);
        let normalized: f64 = w.iter().map(|x| x * x).sum();
        assert!((direct - normalized).abs() < 1e-14);
        let (q, sigma, alpha) = (0.01, 2.0, 8.0);
        assert!((amplified_bound(q, sigma, &w, alpha) - q * q * alpha / (2.0 * sigma * sigma) * direct).abs() < 1e-18);
    }
}
