use super::{rotate_to_global, ImuError, ImuSequence, Quat, Result};
use crate::tensor::Tensor;

pub const DEFAULT_RATE_HZ: f64 = 200.0;
pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_STRIDE: usize = 10;
/// Global-frame gravity magnitude removed from aligned accelerations.
pub const GRAVITY: f64 = 9.81;

/// Model-ready windows: features `[n, 6, length]` with channels
/// `[ax, ay, az, gx, gy, gz]`, targets `[n, 2]` in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub features: Tensor<f64>,
    pub targets: Tensor<f64>,
    pub dt: f64,
    /// Sample index of each window's final sample in the source sequence.
    pub end_index: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_len(&self) -> usize {
        self.features.shape()[2]
    }

    /// Gathers a subset of windows, in the given order.
    pub fn select(&self, idx: &[usize]) -> WindowBatch {
        let (c, l) = (self.features.shape()[1], self.features.shape()[2]);
        let per = c * l;
        let f = self.features.data();
        let t = self.targets.data();
        let mut fd = Vec::with_capacity(idx.len() * per);
        let mut td = Vec::with_capacity(idx.len() * 2);
        for &i in idx {
            fd.extend_from_slice(&f[i * per..][..per]);
            td.extend_from_slice(&t[i * 2..][..2]);
        }
        WindowBatch {
            features: Tensor::new(vec![idx.len(), c, l], fd).expect("nonempty selection"),
            targets: Tensor::new(vec![idx.len(), 2], td).expect("nonempty selection"),
            dt: self.dt,
            end_index: idx.iter().map(|&i| self.end_index[i]).collect(),
        }
    }
}

fn lerp3(a: &[f64; 3], b: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

/// Resamples onto the uniform grid `t0 + i / rate_hz`.
///
/// Vectors are linearly interpolated; quaternions use normalized lerp.
pub fn resample(seq: &ImuSequence, rate_hz: f64) -> Result<ImuSequence> {
    seq.validate()?;
    if !(rate_hz > 0.0) {
        return Err(ImuError::Invalid(format!("rate {rate_hz} Hz")));
    }
    let duration = seq.duration();
    if duration < 2.0 / rate_hz {
        return Err(ImuError::TooShort(seq.len(), (2.0 / rate_hz / duration.max(1e-12)).ceil() as usize));
    }
    let t0 = seq.t[0];
    let n_out = (duration * rate_hz + 1e-9).floor() as usize + 1;
    let mut out = ImuSequence {
        t: Vec::with_capacity(n_out),
        accel: Vec::with_capacity(n_out),
        gyro: Vec::with_capacity(n_out),
        q_ori: Vec::with_capacity(n_out),
        pos: Vec::with_capacity(n_out),
    };
    let last = seq.len() - 1;
    let mut j = 0;
    for i in 0..n_out {
        let t = t0 + i as f64 / rate_hz;
        while j + 1 < last && seq.t[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (seq.t[j], seq.t[j + 1]);
        let s = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.t.push(t);
        out.accel.push(lerp3(&seq.accel[j], &seq.accel[j + 1], s));
        out.gyro.push(lerp3(&seq.gyro[j], &seq.gyro[j + 1], s));
        out.pos.push(lerp3(&seq.pos[j], &seq.pos[j + 1], s));
        out.q_ori.push(seq.q_ori[j].nlerp(&seq.q_ori[j + 1], s));
    }
    Ok(out)
}

/// Rotates accel and gyro into the global frame and removes gravity.
/// The result carries identity orientations.
pub fn align_to_global(seq: &ImuSequence) -> Result<ImuSequence> {
    seq.validate()?;
    let mut out = seq.clone();
    for i in 0..seq.len() {
        let q = &seq.q_ori[i];
        let bad = || ImuError::NonUnitQuaternion(i, q.norm());
        let mut a = rotate_to_global(seq.accel[i], q).ok_or_else(bad)?;
        a[2] -= GRAVITY;
        out.accel[i] = a;
        out.gyro[i] = rotate_to_global(seq.gyro[i], q).ok_or_else(bad)?;
        out.q_ori[i] = Quat::identity();
    }
    Ok(out)
}

/// Resample to `rate_hz`, then align to the global frame.
pub fn prepare(seq: &ImuSequence, rate_hz: f64) -> Result<ImuSequence> {
    align_to_global(&resample(seq, rate_hz)?)
}

/// Forward-difference horizontal velocity per sample; the last sample
/// repeats its predecessor.
pub fn ground_truth_velocity(seq: &ImuSequence) -> Result<Vec<[f64; 2]>> {
    let n = seq.len();
    if n < 2 {
        return Err(ImuError::TooShort(n, 2));
    }
    let mut v: Vec<[f64; 2]> = (0..n - 1)
        .map(|i| {
            let dt = seq.t[i + 1] - seq.t[i];
            [(seq.pos[i + 1][0] - seq.pos[i][0]) / dt, (seq.pos[i + 1][1] - seq.pos[i][1]) / dt]
        })
        .collect();
    v.push(v[n - 2]);
    Ok(v)
}

pub fn window_count(n: usize, length: usize, stride: usize) -> usize {
    if n < length || stride == 0 {
        0
    } else {
        (n - length) / stride + 1
    }
}

/// Slices an aligned, uniformly sampled sequence into windows. Each target
/// is the ground-truth velocity at the window's final sample.
pub fn make_windows(seq: &ImuSequence, length: usize, stride: usize) -> Result<WindowBatch> {
    if length == 0 || stride == 0 {
        return Err(ImuError::Invalid(format!("window length {length}, stride {stride}")));
    }
    let n = seq.len();
    if n < length {
        return Err(ImuError::TooShort(n, length));
    }
    let vel = ground_truth_velocity(seq)?;
    let count = window_count(n, length, stride);
    let mut features = Vec::with_capacity(count * 6 * length);
    let mut targets = Vec::with_capacity(count * 2);
    let mut end_index = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        for ch in 0..6 {
            features.extend((start..start + length).map(|i| if ch < 3 { seq.accel[i][ch] } else { seq.gyro[i][ch - 3] }));
        }
        let end = start + length - 1;
        targets.extend_from_slice(&vel[end]);
        end_index.push(end);
    }
    let dt = (seq.t[n - 1] - seq.t[0]) / (n - 1) as f64;
    Ok(WindowBatch {
        features: Tensor::new(vec![count, 6, length], features).expect("count >= 1"),
        targets: Tensor::new(vec![count, 2], targets).expect("count >= 1"),
        dt,
        end_index,
    })
}
