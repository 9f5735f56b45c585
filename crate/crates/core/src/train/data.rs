//! Window datasets built from recordings on disk or from the synthesizer.

use std::path::{Path, PathBuf};

use super::{TrainConfig, TrainError};
use crate::imu::{load_csv, make_windows, prepare, synth_trajectory, ImuSequence, SynthConfig, WindowBatch};
use crate::tensor::Tensor;

/// Windows of one held-out sequence, kept separate so predictions can be
/// integrated into a trajectory.
#[derive(Debug, Clone)]
pub struct SequenceWindows {
    pub name: String,
    pub windows: WindowBatch,
    /// Spacing between consecutive window ends, seconds.
    pub step_dt: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: WindowBatch,
    pub val: Vec<SequenceWindows>,
}

/// Stacks batches with equal window shape.
pub fn concat(batches: &[WindowBatch]) -> Result<WindowBatch, TrainError> {
    let first = batches.first().ok_or_else(|| TrainError::Data("no windows".into()))?;
    let (c, l) = (first.features.shape()[1], first.window_len());
    let n: usize = batches.iter().map(WindowBatch::len).sum();
    let mut f = Vec::with_capacity(n * c * l);
    let mut t = Vec::with_capacity(n * 2);
    let mut end = Vec::with_capacity(n);
    for b in batches {
        if b.features.shape()[1..] != [c, l] {
            return Err(TrainError::Data(format!("window shape {:?} vs [{c}, {l}]", &b.features.shape()[1..])));
        }
        f.extend_from_slice(b.features.data());
        t.extend_from_slice(b.targets.data());
        end.extend_from_slice(&b.end_index);
    }
    Ok(WindowBatch {
        features: Tensor::new(vec![n, c, l], f)?,
        targets: Tensor::new(vec![n, 2], t)?,
        dt: first.dt,
        end_index: end,
    })
}

impl Dataset {
    /// Resamples, aligns and windows raw sequences.
    pub fn from_sequences(train: &[(String, ImuSequence)], val: &[(String, ImuSequence)], cfg: &TrainConfig) -> Result<Self, TrainError> {
        let mut parts = Vec::with_capacity(train.len());
        for (name, seq) in train {
            let p = prepare(seq, cfg.rate_hz).map_err(|e| TrainError::Data(format!("{name}: {e}")))?;
            parts.push(make_windows(&p, cfg.window, cfg.stride).map_err(|e| TrainError::Data(format!("{name}: {e}")))?);
        }
        let mut held = Vec::with_capacity(val.len());
        for (name, seq) in val {
            let p = prepare(seq, cfg.rate_hz).map_err(|e| TrainError::Data(format!("{name}: {e}")))?;
            let windows = make_windows(&p, cfg.window, cfg.val_stride).map_err(|e| TrainError::Data(format!("{name}: {e}")))?;
            let step_dt = windows.dt * cfg.val_stride as f64;
            held.push(SequenceWindows { name: name.clone(), windows, step_dt });
        }
        if held.is_empty() {
            return Err(TrainError::Data("no validation sequences".into()));
        }
        Ok(Self { train: concat(&parts)?, val: held })
    }

    /// Loads `data.train` (and `data.val` if set). Without a validation path
    /// the last `val_fraction` of the sorted training files is held out.
    pub fn load(cfg: &TrainConfig) -> Result<Self, TrainError> {
        let train_path = cfg.data_train.as_ref().ok_or_else(|| TrainError::Config("data.train is not set".into()))?;
        let mut train = load_all(train_path)?;
        let val = match &cfg.data_val {
            Some(p) => load_all(p)?,
            None => {
                let held = ((train.len() as f64 * cfg.val_fraction).ceil() as usize).max(1);
                if held >= train.len() {
                    return Err(TrainError::Data(format!("{} sequences are too few to hold out {held}", train.len())));
                }
                train.split_off(train.len() - held)
            }
        };
        Self::from_sequences(&train, &val, cfg)
    }
}

/// CSV files of a directory in name order, or a single file.
pub fn csv_files(path: &Path) -> Result<Vec<PathBuf>, TrainError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(TrainError::Data(format!("no .csv files in {}", path.display())));
    }
    Ok(files)
}

fn load_all(path: &Path) -> Result<Vec<(String, ImuSequence)>, TrainError> {
    csv_files(path)?
        .into_iter()
        .map(|f| {
            let seq = load_csv(&f).map_err(|e| TrainError::Data(format!("{}: {e}", f.display())))?;
            Ok((f.file_stem().unwrap_or_default().to_string_lossy().into_owned(), seq))
        })
        .collect()
}

/// `n` synthetic sequences with seeds `seed, seed+1, ...`.
pub fn synth_sequences(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<(String, ImuSequence)>, TrainError> {
    (0..n as u64)
        .map(|i| {
            let s = synth_trajectory(seed + i, cfg).map_err(|e| TrainError::Data(e.to_string()))?;
            Ok((format!("synth_{:04}", seed + i), s))
        })
        .collect()
}
