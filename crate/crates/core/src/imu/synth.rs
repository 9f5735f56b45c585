use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ImuError, ImuSequence, Quat, Result, GRAVITY};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionProfile {
    Walk,
    Run,
    Mixed,
}

impl MotionProfile {
    /// Speed band in m/s.
    pub fn speed_band(self) -> (f64, f64) {
        match self {
            MotionProfile::Walk => (0.5, 2.0),
            MotionProfile::Run => (2.0, 4.0),
            MotionProfile::Mixed => (0.5, 4.0),
        }
    }
}

impl std::str::FromStr for MotionProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "walk" => Ok(Self::Walk),
            "run" => Ok(Self::Run),
            "mixed" => Ok(Self::Mixed),
            other => Err(format!("unknown profile `{other}` (walk|run|mixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub profile: MotionProfile,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// White-noise standard deviations.
    pub accel_noise: f64,
    pub gyro_noise: f64,
    /// Magnitude of a random constant bias per sequence.
    pub accel_bias: f64,
    pub gyro_bias: f64,
    /// Gait oscillation amplitudes (m): surge along the heading and vertical bounce.
    pub surge_amplitude: f64,
    pub bounce_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            profile: MotionProfile::Walk,
            duration_s: 30.0,
            rate_hz: 200.0,
            accel_noise: 0.05,
            gyro_noise: 0.005,
            accel_bias: 0.02,
            gyro_bias: 0.002,
            surge_amplitude: 0.02,
            bounce_amplitude: 0.03,
        }
    }
}

impl SynthConfig {
    pub fn noiseless(mut self) -> Self {
        self.accel_noise = 0.0;
        self.gyro_noise = 0.0;
        self.accel_bias = 0.0;
        self.gyro_bias = 0.0;
        self
    }
}

/// Sum of sinusoids with analytic first and second derivatives.
#[derive(Debug, Clone)]
struct Harmonics(Vec<(f64, f64, f64)>);

impl Harmonics {
    fn random<R: Rng>(rng: &mut R, terms: usize, total_amp: f64, freq: (f64, f64)) -> Self {
        let weights: Vec<f64> = (0..terms).map(|_| rng.random_range(0.2..1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        Self(
            weights
                .iter()
                .map(|w| (total_amp * w / wsum, rng.random_range(freq.0..freq.1), rng.random_range(0.0..TAU)))
                .collect(),
        )
    }

    fn eval(&self, t: f64) -> [f64; 3] {
        self.0.iter().fold([0.0; 3], |acc, &(a, w, p)| {
            let (s, c) = (w * t + p).sin_cos();
            [acc[0] + a * s, acc[1] + a * w * c, acc[2] - a * w * w * s]
        })
    }
}

struct Motion {
    heading0: f64,
    turn_rate: f64,
    heading: Harmonics,
    speed_mid: f64,
    speed: Harmonics,
}

impl Motion {
    /// (ψ, ψ', ψ'')
    fn heading(&self, t: f64) -> [f64; 3] {
        let h = self.heading.eval(t);
        [self.heading0 + self.turn_rate * t + h[0], self.turn_rate + h[1], h[2]]
    }

    /// (s, s')
    fn speed(&self, t: f64) -> [f64; 2] {
        let s = self.speed.eval(t);
        [self.speed_mid + s[0], s[1]]
    }

    fn step_frequency(speed: f64) -> f64 {
        0.9 + 0.55 * speed
    }

    /// Horizontal base velocity.
    fn velocity(&self, t: f64) -> [f64; 2] {
        let psi = self.heading(t)[0];
        let s = self.speed(t)[0];
        [s * psi.cos(), s * psi.sin()]
    }
}

/// Deterministic synthetic pedestrian recording.
///
/// A smooth random heading and speed process defines the horizontal path; a
/// gait oscillation (surge along the heading, vertical bounce) rides on top
/// with step frequency increasing with speed. The device frame is the heading
/// frame, so `q_ori` is a pure yaw, gyro is `(0, 0, ψ')` and accel is the
/// specific force rotated into the device frame (gravity included).
pub fn synth_trajectory(seed: u64, cfg: &SynthConfig) -> Result<ImuSequence> {
    if !(cfg.duration_s >= 5.0) {
        return Err(ImuError::Invalid(format!("duration {} s < 5 s", cfg.duration_s)));
    }
    if !(cfg.rate_hz > 0.0) {
        return Err(ImuError::Invalid(format!("rate {} Hz", cfg.rate_hz)));
    }
    let mut rng = rng::substream(seed, &[rng::key_hash("synth")]);
    let (lo, hi) = cfg.profile.speed_band();
    let heading_amp = rng.random_range(0.8..2.5);
    let motion = Motion {
        heading0: rng.random_range(-PI..PI),
        turn_rate: rng.random_range(-0.05..0.05),
        heading: Harmonics::random(&mut rng, 3, heading_amp, (0.05, 0.35)),
        speed_mid: 0.5 * (lo + hi),
        // strictly inside the band: |Σ a_j sin| ≤ Σ a_j = 0.45 (hi − lo)
        speed: Harmonics::random(&mut rng, 3, 0.45 * (hi - lo), (0.05, 0.5)),
    };
    let phase0 = rng.random_range(0.0..TAU);
    let accel_bias = random_vector(&mut rng, cfg.accel_bias);
    let gyro_bias = random_vector(&mut rng, cfg.gyro_bias);

    let n = (cfg.duration_s * cfg.rate_hz).floor() as usize + 1;
    let dt = 1.0 / cfg.rate_hz;
    // Base position and gait phase by composite Simpson integration.
    const SUB: usize = 4;
    let h = dt / SUB as f64;
    let mut base = [0.0f64; 2];
    let mut phase = phase0;
    let mut seq = ImuSequence {
        t: Vec::with_capacity(n),
        accel: Vec::with_capacity(n),
        gyro: Vec::with_capacity(n),
        q_ori: Vec::with_capacity(n),
        pos: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t = i as f64 * dt;
        if i > 0 {
            let t0 = t - dt;
            let mut acc_v = [0.0; 2];
            let mut acc_f = 0.0;
            for k in 0..=SUB {
                let w = if k == 0 || k == SUB { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                let tk = t0 + k as f64 * h;
                let v = motion.velocity(tk);
                acc_v[0] += w * v[0];
                acc_v[1] += w * v[1];
                acc_f += w * Motion::step_frequency(motion.speed(tk)[0]);
            }
            base[0] += acc_v[0] * h / 3.0;
            base[1] += acc_v[1] * h / 3.0;
            phase += TAU * acc_f * h / 3.0;
        }
        let [psi, dpsi, ddpsi] = motion.heading(t);
        let [s, ds] = motion.speed(t);
        let (sin_p, cos_p) = psi.sin_cos();
        let dir = [cos_p, sin_p];
        let perp = [-sin_p, cos_p];

        let dphase = TAU * Motion::step_frequency(s);
        let ddphase = TAU * 0.55 * ds;
        let (sin_f, cos_f) = phase.sin_cos();
        let a = cfg.surge_amplitude;
        let d = a * sin_f;
        let dd = a * cos_f * dphase;
        let ddd = -a * sin_f * dphase * dphase + a * cos_f * ddphase;
        let b = cfg.bounce_amplitude;
        let z = b * cos_f;
        let ddz = -b * cos_f * dphase * dphase - b * sin_f * ddphase;

        // p = base + d·dir; p'' = s'·dir + s ψ'·perp + d''·dir + 2d'ψ'·perp + dψ''·perp − dψ'²·dir
        let along = ds + ddd - d * dpsi * dpsi;
        let across = s * dpsi + 2.0 * dd * dpsi + d * ddpsi;
        let acc_global = [along * dir[0] + across * perp[0], along * dir[1] + across * perp[1], ddz + GRAVITY];
        // device frame = yaw(ψ): rotate by −ψ
        let acc_dev = [
            cos_p * acc_global[0] + sin_p * acc_global[1],
            -sin_p * acc_global[0] + cos_p * acc_global[1],
            acc_global[2],
        ];

        seq.t.push(t);
        seq.pos.push([base[0] + d * dir[0], base[1] + d * dir[1], z]);
        seq.q_ori.push(Quat::yaw(psi));
        seq.accel.push(noisy(&mut rng, acc_dev, accel_bias, cfg.accel_noise));
        seq.gyro.push(noisy(&mut rng, [0.0, 0.0, dpsi], gyro_bias, cfg.gyro_noise));
    }
    Ok(seq)
}

fn random_vector<R: Rng>(rng: &mut R, magnitude: f64) -> [f64; 3] {
    let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    v.map(|x| magnitude * x / n)
}

fn noisy<R: Rng>(rng: &mut R, v: [f64; 3], bias: [f64; 3], sigma: f64) -> [f64; 3] {
    std::array::from_fn(|k| {
        let e = if sigma > 0.0 { sigma * Distribution::<f64>::sample(&StandardNormal, rng) } else { 0.0 };
        v[k] + bias[k] + e
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::{align_to_global, ground_truth_velocity};

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig { duration_s: 6.0, ..Default::default() };
        let a = synth_trajectory(11, &cfg).unwrap();
        let b = synth_trajectory(11, &cfg).unwrap();
        let c = synth_trajectory(12, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate().unwrap();
    }

    #[test]
    fn integrated_ground_truth_recovers_positions() {
        let cfg = SynthConfig { duration_s: 20.0, ..Default::default() }.noiseless();
        let seq = synth_trajectory(3, &cfg).unwrap();
        let v = ground_truth_velocity(&seq).unwrap();
        let dt = 1.0 / cfg.rate_hz;
        let mut p = [seq.pos[0][0], seq.pos[0][1]];
        let mut sq = 0.0;
        for i in 1..seq.len() {
            p[0] += v[i - 1][0] * dt;
            p[1] += v[i - 1][1] * dt;
            sq += (p[0] - seq.pos[i][0]).powi(2) + (p[1] - seq.pos[i][1]).powi(2);
        }
        let ate = (sq / seq.len() as f64).sqrt();
        assert!(ate < 1e-6, "ate {ate}");
    }

    #[test]
    fn walk_speed_stays_in_band() {
        let cfg = SynthConfig { duration_s: 60.0, surge_amplitude: 0.0, ..Default::default() }.noiseless();
        for seed in 0..10 {
            let seq = synth_trajectory(seed, &cfg).unwrap();
            for v in ground_truth_velocity(&seq).unwrap() {
                let s = v[0].hypot(v[1]);
                assert!((0.5..=2.0).contains(&s), "seed {seed}: speed {s}");
            }
        }
    }

    #[test]
    fn aligned_accel_matches_position_second_difference() {
        let cfg = SynthConfig { duration_s: 8.0, ..Default::default() }.noiseless();
        let seq = align_to_global(&synth_trajectory(5, &cfg).unwrap()).unwrap();
        let dt = 1.0 / cfg.rate_hz;
        for i in (1..seq.len() - 1).step_by(37) {
            for k in 0..3 {
                let fd = (seq.pos[i + 1][k] - 2.0 * seq.pos[i][k] + seq.pos[i - 1][k]) / (dt * dt);
                assert!((fd - seq.accel[i][k]).abs() < 2e-3, "sample {i} axis {k}: {fd} vs {}", seq.accel[i][k]);
            }
        }
    }

    #[test]
    fn rejects_short_duration() {
        let cfg = SynthConfig { duration_s: 4.0, ..Default::default() };
        assert!(synth_trajectory(1, &cfg).is_err());
    }
}
