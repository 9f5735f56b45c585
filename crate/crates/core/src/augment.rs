//! Compositional rotate–scale–skew augmentation with additive sensor noise.
//!
//! A single 2×2 transform `T = S·(R·K)` is drawn per window and applied to
//! the horizontal pairs of accel, gyro and the target velocity, so features
//! and labels stay consistent. Gaussian noise is then added to the six
//! feature channels only.

use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::imu::WindowBatch;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Upper bound of the rotation angle, radians.
    pub theta_max: f64,
    pub delta_s: f64,
    pub delta_k: f64,
    /// Feature noise standard deviation.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, theta_max: FRAC_PI_4, delta_s: 0.2, delta_k: 0.1, noise_sigma: 0.01, seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=std::f64::consts::PI).contains(&self.theta_max) {
            return Err(AugmentError::Config(format!("theta_max {} outside [0, π]", self.theta_max)));
        }
        if !(0.0..1.0).contains(&self.delta_s) {
            return Err(AugmentError::Config(format!("delta_s {} outside [0, 1)", self.delta_s)));
        }
        if !(self.delta_k >= 0.0) || !self.delta_k.is_finite() {
            return Err(AugmentError::Config(format!("delta_k {}", self.delta_k)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(AugmentError::Config(format!("noise_sigma {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<T>(pub [[T; 2]; 2]);

impl<T: Scalar> Mat2<T> {
    pub fn identity() -> Self {
        Self([[T::one(), T::zero()], [T::zero(), T::one()]])
    }

    pub fn rotation(theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self([[c, -s], [s, c]])
    }

    pub fn scaling(s: T) -> Self {
        Self([[s, T::zero()], [T::zero(), s]])
    }

    pub fn skew(k: T) -> Self {
        Self([[T::one(), k], [T::zero(), T::one()]])
    }

    pub fn mul(&self, o: &Self) -> Self {
        let (a, b) = (&self.0, &o.0);
        Self([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }

    pub fn det(&self) -> T {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() {
            return None;
        }
        let m = &self.0;
        Some(Self([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    pub fn apply(&self, v: [T; 2]) -> [T; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }
}

/// A sampled transform and the draws that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub theta: f64,
    pub scale: f64,
    pub skew: f64,
    pub matrix: Mat2<f64>,
}

impl Transform {
    pub fn compose(theta: f64, scale: f64, skew: f64) -> Self {
        let rk = Mat2::rotation(theta).mul(&Mat2::skew(skew));
        Self { theta, scale, skew, matrix: Mat2::scaling(scale).mul(&rk) }
    }
}

/// θ ~ U[0, Θmax], s ~ U[1−Δs, 1+Δs], k ~ U[−Δk, Δk]; `T = S·(R·K)`.
pub fn sample_transform<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Transform {
    let theta = rng.random::<f64>() * cfg.theta_max;
    let scale = 1.0 + cfg.delta_s * (2.0 * rng.random::<f64>() - 1.0);
    let skew = cfg.delta_k * (2.0 * rng.random::<f64>() - 1.0);
    Transform::compose(theta, scale, skew)
}

/// Applies `m` to the horizontal pairs (channels 0/1 and 3/4) of one
/// `6 × len` window and to its target, then adds feature noise.
pub fn apply_window<R: Rng + ?Sized>(features: &mut [f64], target: &mut [f64], m: &Mat2<f64>, sigma: f64, rng: &mut R) {
    let len = features.len() / 6;
    for (cx, cy) in [(0, 1), (3, 4)] {
        for i in 0..len {
            let v = m.apply([features[cx * len + i], features[cy * len + i]]);
            features[cx * len + i] = v[0];
            features[cy * len + i] = v[1];
        }
    }
    let v = m.apply([target[0], target[1]]);
    target[0] = v[0];
    target[1] = v[1];
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("sigma validated");
        features.iter_mut().for_each(|f| *f += noise.sample(rng));
    }
}

/// Augments every window of a batch. Window `i` draws from its own
/// substream keyed by `(cfg.seed, epoch, window_key[i])`.
pub fn augment_batch(batch: &WindowBatch, cfg: &AugmentConfig, epoch: u64, window_key: &[u64]) -> WindowBatch {
    let mut out = batch.clone();
    if !cfg.enabled {
        return out;
    }
    let per = batch.features.shape()[1] * batch.features.shape()[2];
    let n = batch.len();
    let mut feats = out.features.data().to_vec();
    let mut targs = out.targets.data().to_vec();
    for i in 0..n {
        let mut r = rng::substream(cfg.seed, &[rng::key_hash("augment"), epoch, window_key[i]]);
        let t = sample_transform(cfg, &mut r);
        apply_window(&mut feats[i * per..][..per], &mut targs[i * 2..][..2], &t.matrix, cfg.noise_sigma, &mut r);
    }
    out.features = crate::tensor::Tensor::new(batch.features.shape().to_vec(), feats).expect("same shape");
    out.targets = crate::tensor::Tensor::new(vec![n, 2], targs).expect("same shape");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Tensor;

    fn window(rng: &mut impl Rng, len: usize) -> (Vec<f64>, Vec<f64>) {
        ((0..6 * len).map(|_| rng.random_range(-3.0..3.0)).collect(), vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
    }

    #[test]
    fn defaults() {
        let c = AugmentConfig::default();
        assert_eq!((c.theta_max, c.delta_s, c.delta_k, c.noise_sigma), (std::f64::consts::PI / 4.0, 0.2, 0.1, 0.01));
        c.validate().unwrap();
        assert!(AugmentConfig { delta_s: 1.0, ..c.clone() }.validate().is_err());
        assert!(AugmentConfig { theta_max: 4.0, ..c.clone() }.validate().is_err());
        assert!(AugmentConfig { noise_sigma: -0.1, ..c }.validate().is_err());
    }

    #[test]
    fn special_transforms() {
        assert_eq!(Transform::compose(0.0, 1.0, 0.0).matrix, Mat2::identity());
        let q = Transform::compose(std::f64::consts::FRAC_PI_2, 1.0, 0.0).matrix;
        let expect = [[0.0, -1.0], [1.0, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((q.0[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sampled_transform_equals_explicit_product_and_det() {
        let cfg = AugmentConfig::default();
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let t = sample_transform(&cfg, &mut rng);
            assert!((0.0..=cfg.theta_max).contains(&t.theta));
            assert!((0.8..=1.2).contains(&t.scale));
            assert!((-0.1..=0.1).contains(&t.skew));
            let (c, s) = (t.theta.cos(), t.theta.sin());
            let r = [[c, -s], [s, c]];
            let k = [[1.0, t.skew], [0.0, 1.0]];
            let mut rk = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        rk[i][j] += r[i][l] * k[l][j];
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    assert!((t.matrix.0[i][j] - t.scale * rk[i][j]).abs() < 1e-12);
                }
            }
            assert!((t.matrix.det() - t.scale * t.scale).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_without_noise_is_noop() {
        let mut rng = seeded(4);
        let (f0, t0) = window(&mut rng, 50);
        let (mut f, mut t) = (f0.clone(), t0.clone());
        apply_window(&mut f, &mut t, &Mat2::identity(), 0.0, &mut rng);
        assert_eq!((f, t), (f0, t0));
    }

    #[test]
    fn inverse_restores_window() {
        let cfg = AugmentConfig::default();
        let mut rng = seeded(5);
        let (f0, t0) = window(&mut rng, 40);
        let tr = sample_transform(&cfg, &mut rng);
        let (mut f, mut t) = (f0.clone(), t0.clone());
        apply_window(&mut f, &mut t, &tr.matrix, 0.0, &mut rng);
        apply_window(&mut f, &mut t, &tr.matrix.inverse().unwrap(), 0.0, &mut rng);
        for (a, b) in f.iter().zip(&f0).chain(t.iter().zip(&t0)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_preserves_target_speed_and_vertical_channels() {
        let mut rng = seeded(6);
        let (f0, t0) = window(&mut rng, 30);
        let (mut f, mut t) = (f0.clone(), t0.clone());
        apply_window(&mut f, &mut t, &Mat2::rotation(0.77), 0.0, &mut rng);
        assert!((t[0].hypot(t[1]) - t0[0].hypot(t0[1])).abs() < 1e-12);
        assert_eq!(f[2 * 30..3 * 30], f0[2 * 30..3 * 30]);
        assert_eq!(f[5 * 30..], f0[5 * 30..]);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let mut rng = seeded(7);
        let len = 1_000_000 / 6 + 1;
        let f0 = vec![0.25; 6 * len];
        let mut f = f0.clone();
        let mut t = vec![1.0, 2.0];
        apply_window(&mut f, &mut t, &Mat2::identity(), 0.01, &mut rng);
        assert_eq!(t, vec![1.0, 2.0]);
        for ch in 0..6 {
            let d: Vec<f64> = (0..len).map(|i| f[ch * len + i] - f0[ch * len + i]).collect();
            let m = d.iter().sum::<f64>() / len as f64;
            let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (len - 1) as f64).sqrt();
            assert!((0.009..=0.011).contains(&sd), "channel {ch}: {sd}");
        }
    }

    #[test]
    fn theta_is_uniform() {
        let cfg = AugmentConfig::default();
        let mut rng = seeded(8);
        let n = 100_000;
        let mut th: Vec<f64> = (0..n).map(|_| sample_transform(&cfg, &mut rng).theta / cfg.theta_max).collect();
        th.sort_by(f64::total_cmp);
        let ks = th
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn batch_augmentation_is_keyed_per_window() {
        let mut rng = seeded(9);
        let feats = Tensor::from_fn(&[3, 6, 20], |_| rng.random_range(-1.0..1.0));
        let targs = Tensor::from_fn(&[3, 2], |_| rng.random_range(-1.0..1.0));
        let batch = WindowBatch { features: feats, targets: targs, dt: 0.005, end_index: vec![19, 29, 39] };
        let cfg = AugmentConfig { seed: 1, ..Default::default() };
        let full = augment_batch(&batch, &cfg, 2, &[10, 11, 12]);
        let single = augment_batch(&batch.select(&[1]), &cfg, 2, &[11]);
        assert_eq!(&full.features.data()[120..240], single.features.data());
        assert_eq!(&full.targets.data()[2..4], single.targets.data());
        let disabled = augment_batch(&batch, &AugmentConfig { enabled: false, ..cfg }, 2, &[10, 11, 12]);
        assert_eq!(disabled, batch);
    }
}
