use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::rng::seeded;

fn random_matrix(rng: &mut impl rand::Rng, m: usize, n: usize) -> Matrix<f64> {
    Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

fn oracle_singular_values(g: &Matrix<f64>) -> Vec<f64> {
    let d = DMatrix::from_row_slice(g.rows(), g.cols(), g.data());
    let mut s: Vec<f64> = d.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn max_abs(m: &Matrix<f64>) -> f64 {
    m.data().iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn gram_error(q: &Matrix<f64>) -> f64 {
    let g = q.transpose().matmul(q);
    let eye = Matrix::from_fn(g.rows(), g.cols(), |r, c| if r == c { 1.0 } else { 0.0 });
    max_abs(&g.sub(&eye))
}

#[test]
fn matricize_shapes() {
    let t = Tensor::from_fn(&[4], |i| i as f64);
    let m = matricize(&t);
    assert_eq!((m.rows(), m.cols()), (4, 1));
    assert_eq!(dematricize(m, &[4]).unwrap(), t);
    let t = Tensor::from_fn(&[8, 3, 7], |i| i as f64);
    let m = matricize(&t);
    assert_eq!((m.rows(), m.cols()), (8, 21));
    assert_eq!(m.get(1, 0), 21.0);
    assert_eq!(dematricize(m, &[8, 3, 7]).unwrap(), t);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn matricize_round_trip(shape in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let t = Tensor::from_fn(&shape, |_| rng.random::<f64>());
        let back = dematricize(matricize(&t), &shape).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn svd_is_orthonormal_and_exact(m in 1usize..14, n in 1usize..14, rank in 0usize..14, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        // product of thin random factors gives controlled rank deficiency
        let r = rank.min(m).min(n);
        let g = random_matrix(&mut rng, m, r).matmul(&random_matrix(&mut rng, r, n));
        let t = svd(&g);
        prop_assert_eq!(t.rank(), m.min(n));
        prop_assert!(gram_error(&t.u) < 1e-10, "U gram {}", gram_error(&t.u));
        prop_assert!(gram_error(&t.v) < 1e-10, "V gram {}", gram_error(&t.v));
        prop_assert!(t.s.windows(2).all(|w| w[0] >= w[1]) && t.s.iter().all(|&x| x >= 0.0));
        prop_assert!(max_abs(&t.reconstruct().sub(&g)) < 1e-10);
        for (a, b) in t.s.iter().zip(oracle_singular_values(&g)) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + b));
        }
    }

    #[test]
    fn clip_never_exceeds_threshold_or_input(mut s in prop::collection::vec(0.0f64..10.0, 1..20), lambda in 0.01f64..10.0) {
        s.sort_by(|a, b| b.total_cmp(a));
        let c = clip_singular(&s, lambda);
        prop_assert!(c.iter().zip(&s).all(|(&o, &i)| o <= lambda && o <= i));
        prop_assert!(c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn weights_sum_to_one(s in prop::collection::vec(0.0f64..10.0, 1..30)) {
        for scheme in [WeightScheme::GradientSvd, WeightScheme::Uniform, WeightScheme::Exponential] {
            let w = utility_weights(&s, scheme);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn energy_capture_monotone(s in prop::collection::vec(0.0f64..5.0, 1..40)) {
        let e = energy_capture(&s);
        prop_assert!(e.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*e.last().unwrap(), 1.0);
    }
}

#[test]
fn svd_of_diagonal() {
    let g = Matrix::new(2, 2, vec![3.0f64, 0.0, 0.0, 1.0]);
    let t = truncated_svd(&g, 1);
    assert_eq!(t.s.len(), 1);
    assert!((t.s[0] - 3.0).abs() < 1e-15);
    assert!((t.u.get(0, 0).abs() - 1.0).abs() < 1e-15 && t.u.get(1, 0).abs() < 1e-15);
    assert!((t.v.get(0, 0).abs() - 1.0).abs() < 1e-15 && t.v.get(1, 0).abs() < 1e-15);
}

#[test]
fn rank_one_reconstructs_for_any_k() {
    let mut rng = seeded(1);
    let u = random_matrix(&mut rng, 9, 1);
    let v = random_matrix(&mut rng, 1, 6);
    let g = u.matmul(&v);
    for k in 1..=8 {
        let t = truncated_svd(&g, k);
        assert!(t.reconstruct().sub(&g).frobenius_norm() < 1e-10);
    }
}

#[test]
fn truncation_error_matches_tail_energy() {
    let mut rng = seeded(2);
    let g = random_matrix(&mut rng, 20, 12);
    let t = truncated_svd(&g, 5);
    let s = oracle_singular_values(&g);
    let tail = s[5..].iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((t.reconstruct().sub(&g).frobenius_norm() - tail).abs() < 1e-8);
    // same on the transposed (wide) problem
    let t = truncated_svd(&g.transpose(), 5);
    assert!((t.reconstruct().sub(&g.transpose()).frobenius_norm() - tail).abs() < 1e-8);
}

#[test]
fn zero_matrix_svd_still_orthonormal() {
    let t = svd(&Matrix::<f64>::zeros(5, 3));
    assert_eq!(t.s, vec![0.0; 3]);
    assert!(gram_error(&t.u) < 1e-12 && gram_error(&t.v) < 1e-12);
}

#[test]
fn svd_f32() {
    let g = Matrix::new(3, 2, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let t = svd(&g);
    let oracle = oracle_singular_values(&Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    for (a, b) in t.s.iter().zip(oracle) {
        assert!((f64::from(*a) - b).abs() < 1e-5);
    }
}

#[test]
fn threshold_update() {
    assert!((update_threshold(1.0, 2.0, 0.9) - 1.1).abs() < 1e-15);
    assert_eq!(update_threshold(1.7, 1.7, 0.9), 1.7);
    let (c, l0, gamma) = (0.5, 3.0, 0.9);
    let mut l = l0;
    for t in 1..=50 {
        l = update_threshold(l, c, gamma);
        let closed = c + (l0 - c) * f64::powi(gamma, t);
        assert!((l - closed).abs() < 1e-12);
    }
}

#[test]
fn clip_examples() {
    assert_eq!(clip_singular(&[3.0, 1.5, 0.5], 2.0), vec![2.0, 1.5, 0.5]);
    assert_eq!(clip_singular(&[3.0, 1.5, 0.5], 3.0), vec![3.0, 1.5, 0.5]);
}

#[test]
fn weight_examples() {
    assert_eq!(utility_weights(&[3.0, 1.0], WeightScheme::GradientSvd), vec![0.75, 0.25]);
    assert_eq!(utility_weights(&[5.0, 4.0, 1.0, 0.0], WeightScheme::Uniform), vec![0.25; 4]);
    let w = utility_weights(&[1.0, 1.0, 1.0], WeightScheme::Exponential);
    let z: f64 = (1..=3).map(|j| (-(j as f64)).exp()).sum();
    for (i, wi) in w.iter().enumerate() {
        assert!((wi - (-((i + 1) as f64)).exp() / z).abs() < 1e-15);
    }
    assert_eq!(utility_weights(&[0.0, 0.0], WeightScheme::GradientSvd), vec![0.5, 0.5]);
    assert_eq!("exponential".parse::<WeightScheme>().unwrap(), WeightScheme::Exponential);
    assert!("softmax".parse::<WeightScheme>().is_err());
}

#[test]
fn one_hot_weights_give_rank_one_noise() {
    let mut rng = seeded(3);
    let g = random_matrix(&mut rng, 8, 6);
    let t = truncated_svd(&g, 4);
    let z = gani_noise(&t, &[1.0, 0.0, 0.0, 0.0], 2.0, 1.5, &mut rng);
    let zs = oracle_singular_values(&z);
    assert!(zs[0] > 1e-3);
    assert!(zs[1..].iter().all(|&x| x < 1e-12));
    // and it lies along u1 v1ᵀ
    let u1 = t.u.column(0);
    let v1 = t.v.column(0);
    let coef: f64 = (0..8).flat_map(|i| (0..6).map(move |j| (i, j))).map(|(i, j)| z.get(i, j) * u1[i] * v1[j]).sum();
    let rebuilt = Matrix::from_fn(8, 6, |i, j| coef * u1[i] * v1[j]);
    assert!(max_abs(&rebuilt.sub(&z)) < 1e-12);
}

#[test]
fn zero_sigma_gives_zero_noise() {
    let mut rng = seeded(4);
    let t = truncated_svd(&random_matrix(&mut rng, 5, 5), 3);
    let z = gani_noise(&t, &utility_weights(&t.s, WeightScheme::GradientSvd), 0.0, 2.0, &mut rng);
    assert_eq!(max_abs(&z), 0.0);
}

#[test]
fn noise_lies_in_top_k_span() {
    let mut rng = seeded(5);
    for _ in 0..50 {
        let (m, n) = (rng.random_range(3..15), rng.random_range(3..15));
        let g = random_matrix(&mut rng, m, n);
        let t = truncated_svd(&g, 3);
        let w = utility_weights(&t.s, WeightScheme::GradientSvd);
        let z = gani_noise(&t, &w, 2.0, 1.3, &mut rng);
        let left = z.sub(&t.u.matmul(&t.u.transpose().matmul(&z)));
        let right = z.sub(&z.matmul(&t.v).matmul(&t.v.transpose()));
        assert!(max_abs(&left) < 1e-10 && max_abs(&right) < 1e-10);
    }
}

#[test]
fn noise_coefficient_std_matches_configuration() {
    let mut rng = seeded(6);
    let w = [0.5, 0.3, 0.2];
    let (sigma, lambda) = (2.0, 1.5);
    let n = 100_000;
    let mut sq = [0.0; 3];
    for _ in 0..n {
        for (acc, c) in sq.iter_mut().zip(noise_coefficients(&w, sigma, lambda, &mut rng)) {
            *acc += c * c;
        }
    }
    for (i, acc) in sq.iter().enumerate() {
        let sd = (acc / n as f64).sqrt();
        let want = sigma * lambda * w[i];
        assert!((sd / want - 1.0).abs() < 0.02, "direction {i}: {sd} vs {want}");
    }
}

#[test]
fn dp_gradient_limits() {
    let mut rng = seeded(7);
    let g: Tensor<f64> = Tensor::from_fn(&[6, 2, 4], |_| rng.random_range(-1.0..1.0));
    let cfg = DpConfig { sigma: 0.0, rank_k: 3, ..Default::default() };
    let mut state = ClipState::new(1e6);
    let out = dp_gradient(&g, &mut state, &cfg, &mut rng).unwrap();
    let best = truncated_svd(&matricize(&g), 3).reconstruct();
    assert_eq!(out.grad.shape(), g.shape());
    assert!(out.grad.data().iter().zip(best.data()).all(|(a, b)| (a - b).abs() < 1e-12));

    let cfg = DpConfig { sigma: 0.0, rank_k: 50, ..Default::default() };
    let out = dp_gradient(&g, &mut ClipState::new(1e6), &cfg, &mut rng).unwrap();
    assert_eq!(out.effective_k, 6);
    assert!(out.grad.data().iter().zip(g.data()).all(|(a, b)| (a - b).abs() < 1e-8));
}

#[test]
fn dp_gradient_updates_threshold_and_clips() {
    let g = Tensor::new(vec![2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
    let cfg = DpConfig { sigma: 0.0, rank_k: 2, ..Default::default() };
    let mut state = ClipState::new(2.0);
    let out = dp_gradient(&g, &mut state, &cfg, &mut seeded(0)).unwrap();
    let want = 0.9 * 2.0 + 0.1 * 10f64.sqrt();
    assert!((state.lambda - want).abs() < 1e-15 && out.lambda == state.lambda);
    assert!((out.grad.data()[0] - want).abs() < 1e-12);
    assert!((out.grad.data()[3] - 1.0).abs() < 1e-12);
}

#[test]
fn dp_gradient_is_deterministic() {
    let mut rng = seeded(8);
    let g = Tensor::from_fn(&[7, 5], |_| rng.random_range(-1.0..1.0));
    let cfg = DpConfig::default();
    let a = dp_gradient(&g, &mut ClipState::new(2.0), &cfg, &mut crate::rng::substream(1, &[3, 4])).unwrap();
    let b = dp_gradient(&g, &mut ClipState::new(2.0), &cfg, &mut crate::rng::substream(1, &[3, 4])).unwrap();
    assert_eq!(a.grad, b.grad);
}

#[test]
fn zero_gradient_emits_pure_noise() {
    let g = Tensor::<f64>::zeros(&[4, 3]);
    let mut state = ClipState::new(2.0);
    let out = dp_gradient(&g, &mut state, &DpConfig::default(), &mut seeded(9)).unwrap();
    assert_eq!(out.weights, vec![1.0 / 3.0; 3]);
    assert!(out.grad.frobenius_norm() > 0.0);
    assert!((state.lambda - 1.8).abs() < 1e-15);
}

#[test]
fn non_finite_gradient_rejected() {
    let g = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap();
    assert_eq!(dp_gradient(&g, &mut ClipState::new(2.0), &DpConfig::default(), &mut seeded(0)).unwrap_err(), DpError::NonFinite);
}

#[test]
fn config_validation() {
    DpConfig::default().validate().unwrap();
    assert!(DpConfig { rank_k: 0, ..Default::default() }.validate().is_err());
    assert!(DpConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
    assert!(DpConfig { delta: 0.0, ..Default::default() }.validate().is_err());
}

#[test]
fn adjacent_batches_respect_sensitivity() {
    let mut rng = seeded(10);
    for _ in 0..1000 {
        let (m, n, b) = (rng.random_range(2..10), rng.random_range(2..10), rng.random_range(2..8));
        let k = rng.random_range(1..12);
        let samples: Vec<Tensor<f64>> = (0..b).map(|_| Tensor::from_fn(&[m, n], |_| rng.random_range(-3.0..3.0))).collect();
        let replacement = Tensor::from_fn(&[m, n], |_| rng.random_range(-30.0..30.0));
        let mean = |xs: &[&Tensor<f64>]| Tensor::from_fn(&[m, n], |i| xs.iter().map(|t| t.data()[i]).sum::<f64>() / b as f64);
        let a: Vec<&Tensor<f64>> = samples.iter().collect();
        let mut a2 = a.clone();
        a2[0] = &replacement;
        let lambda = rng.random_range(0.01..3.0);
        let x = clipped_reconstruction(&mean(&a), lambda, k).unwrap();
        let y = clipped_reconstruction(&mean(&a2), lambda, k).unwrap();
        let keff = k.min(m).min(n) as f64;
        assert!(x.sub(&y).frobenius_norm() <= 2.0 * lambda * keff.sqrt());
    }
}

#[test]
fn energy_and_snr() {
    assert_eq!(energy_capture(&[3.0, 4.0]), vec![9.0 / 25.0, 1.0]);
    assert!((snr_k(&[3.0f64, 4.0, 1.0], 2, 0.5) - 25.0 / (2.0 * 0.25)).abs() < 1e-12);
}

#[test]
fn dpsgd_clip_bounds_global_norm() {
    let mut rng = seeded(11);
    for _ in 0..500 {
        let grads: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[rng.random_range(1..6), 4], |_| rng.random_range(-5.0..5.0))).collect();
        let c = rng.random_range(0.1..20.0);
        let clipped = dpsgd_clip(&grads, c).unwrap();
        let refs: Vec<&Tensor<f64>> = clipped.iter().collect();
        assert!(global_norm(&refs) <= c);
    }
    // small gradients pass through untouched
    let g = vec![Tensor::new(vec![2], vec![0.1, 0.2]).unwrap()];
    assert_eq!(dpsgd_clip(&g, 1.0).unwrap(), g);
}

#[test]
fn dpsgd_noise_std() {
    let mut rng = seeded(12);
    let g = vec![Tensor::<f64>::zeros(&[100_000])];
    let (sigma, clip, batch) = (2.0, 1.5, 32);
    let out = dpsgd_privatize(&g, clip, sigma, batch, &mut rng).unwrap();
    let d = out[0].data();
    let sd = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
    let want = sigma * clip / batch as f64;
    assert!((sd / want - 1.0).abs() < 0.02);
}
