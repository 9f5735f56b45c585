//! IMU ingestion: frame alignment, resampling, ground-truth velocities,
//! windowing, synthetic recordings and the CSV exchange format.

mod csv;
mod pipeline;
mod quat;
mod synth;

pub use self::csv::{load_csv, read_csv, save_csv, write_csv, CSV_HEADER};
pub use pipeline::{
    align_to_global, ground_truth_velocity, make_windows, prepare, resample, window_count, WindowBatch,
    DEFAULT_RATE_HZ, DEFAULT_STRIDE, DEFAULT_WINDOW, GRAVITY,
};
pub use quat::{rotate_to_global, Quat, UNIT_TOLERANCE};
pub use synth::{synth_trajectory, MotionProfile, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum ImuError {
    #[error("sequence has {0} samples, need at least {1}")]
    TooShort(usize, usize),
    #[error("array lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotonic(usize),
    #[error("quaternion at sample {0} is not unit (|q| = {1})")]
    NonUnitQuaternion(usize, f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImuError> = std::result::Result<T, E>;

/// Time-stamped 6-axis IMU stream with orientation and reference positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSequence {
    /// Seconds, strictly increasing.
    pub t: Vec<f64>,
    /// Specific force, m/s², in the frame described by `q_ori`.
    pub accel: Vec<[f64; 3]>,
    /// Angular rate, rad/s.
    pub gyro: Vec<[f64; 3]>,
    /// Device-to-global orientation.
    pub q_ori: Vec<Quat<f64>>,
    /// Reference position, meters.
    pub pos: Vec<[f64; 3]>,
}

impl ImuSequence {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Checks lengths, timestamp order and quaternion norms.
    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        let lens = [self.accel.len(), self.gyro.len(), self.q_ori.len(), self.pos.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(ImuError::LengthMismatch(format!("t={n}, accel/gyro/q/pos={lens:?}")));
        }
        if n < 2 {
            return Err(ImuError::TooShort(n, 2));
        }
        if let Some(i) = self.t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(ImuError::NonMonotonic(i + 1));
        }
        if let Some((i, q)) = self.q_ori.iter().enumerate().find(|(_, q)| !q.is_unit()) {
            return Err(ImuError::NonUnitQuaternion(i, q.norm()));
        }
        Ok(())
    }
}
