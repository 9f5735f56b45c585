//! Training loop, loss functions and run records.

mod config;
pub mod convergence;
mod data;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{DpSettings, Mechanism, TrainConfig};
pub use data::{concat, csv_files, synth_sequences, Dataset, SequenceWindows};

use crate::accountant::{AccountantError, AccountantMode, EpsilonReport, PrivacyLedger};
use crate::augment::augment_batch;
use crate::dp::{dp_gradient, dpsgd_privatize, ClipState, DpError};
use crate::imu::WindowBatch;
use crate::metrics::{evaluate, integrate, MetricsError};
use crate::model::{forward, predict, save_checkpoint, ModelError, ModelParams, BN_MOMENTUM};
use crate::rng::{key_hash, substream};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Records the training loss on `tape`: mean squared error norm per sample
/// plus mean absolute error per component, for `[B, 2]` inputs.
pub fn loss(tape: &mut Tape<f64>, pred: Var, target: Var) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    if shape.len() != 2 || tape.shape(target) != shape.as_slice() {
        return Err(TrainError::Data(format!("loss shapes {shape:?} vs {:?}", tape.shape(target))));
    }
    let (b, d) = (shape[0] as f64, shape[1] as f64);
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let sq = tape.sum(sq)?;
    let sq = tape.scale(sq, 1.0 / b)?;
    let ab = tape.abs(diff)?;
    let ab = tape.sum(ab)?;
    let ab = tape.scale(ab, 1.0 / (b * d))?;
    Ok(tape.add(sq, ab)?)
}

/// [`loss`] on plain slices of row-major `[B, 2]` data.
pub fn loss_value(pred: &[f64], target: &[f64]) -> f64 {
    let b = pred.len() as f64 / 2.0;
    let (sq, ab) = pred.iter().zip(target).fold((0.0, 0.0), |(s, a), (p, t)| (s + (p - t) * (p - t), a + (p - t).abs()));
    sq / b + ab / (2.0 * b)
}

/// Mean squared norm of the displacement error accumulated over every run
/// of `window` consecutive velocity samples. Diagnostic only.
pub fn windowed_cumulative_loss(pred: &[[f64; 2]], target: &[[f64; 2]], dt: f64, window: usize) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(TrainError::Data(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if window == 0 || window > pred.len() {
        return Err(TrainError::Data(format!("window {window} with {} samples", pred.len())));
    }
    let mut prefix = vec![[0.0f64; 2]; pred.len() + 1];
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        prefix[i + 1] = [prefix[i][0] + (t[0] - p[0]) * dt, prefix[i][1] + (t[1] - p[1]) * dt];
    }
    let m = pred.len() - window + 1;
    let total: f64 = (0..m)
        .map(|s| {
            let (a, b) = (prefix[s], prefix[s + window]);
            (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)
        })
        .sum();
    Ok(total / m as f64)
}

/// Multiplies the learning rate by `factor` once the monitored loss has not
/// improved by a relative `threshold` for more than `patience` epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, threshold: 1e-4, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Feeds one epoch's metric; returns true if the rate was reduced.
    pub fn step(&mut self, metric: f64) -> bool {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − η·v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ModelParams<f64>, grads: &BTreeMap<String, Tensor<f64>>, lr: f64) -> Result<()> {
        for (path, g) in grads {
            let p = params.get_mut(path)?;
            let v = self.velocity.entry(path.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            for ((w, vi), &gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = self.momentum * *vi + gi;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

// JSON has no NaN; serde writes it as null, so read null back as NaN.
fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Validation metrics averaged over held-out sequences. Scale consistency
/// is NaN when sequences are shorter than one SC window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub loss: f64,
    pub ate: f64,
    pub rte: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub sc: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub sc_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val: ValMetrics,
    pub epsilon: Option<f64>,
    pub epsilon_order: Option<f64>,
    /// Mean clipping threshold over parameter tensors.
    pub mean_lambda: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: BTreeMap<String, String>,
    pub params: usize,
    pub train_windows: usize,
    pub val_sequences: usize,
    pub initial: ValMetrics,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl RunRecord {
    /// Validation metrics of the best-validation-loss model (the one saved
    /// as best.ckpt), or of the initial model if no epoch ran.
    pub fn best_val(&self) -> ValMetrics {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map_or(self.initial, |e| e.val)
    }
}

/// Mutable state of one training run.
pub struct Trainer {
    cfg: TrainConfig,
    params: ModelParams<f64>,
    sgd: Sgd,
    clip: BTreeMap<String, ClipState>,
    ledger: Option<PrivacyLedger>,
    scheduler: PlateauScheduler,
    step: u64,
    batch_size: usize,
}

impl Trainer {
    /// `n_train` is the number of training windows, which fixes the
    /// sampling rate used by the accountant.
    pub fn new(cfg: TrainConfig, n_train: usize) -> Result<Self> {
        cfg.validate()?;
        if n_train == 0 {
            return Err(TrainError::Data("empty training set".into()));
        }
        let params = ModelParams::init(&cfg.model, cfg.seed)?;
        if cfg.batch_size > n_train {
            return Err(TrainError::Data(format!("batch size {} exceeds {n_train} training windows", cfg.batch_size)));
        }
        let batch_size = cfg.batch_size;
        let ledger = if cfg.dp.enabled {
            let q = batch_size as f64 / n_train as f64;
            Some(PrivacyLedger::new(q, cfg.dp.engine.sigma, cfg.dp.engine.delta, cfg.dp.accountant)?)
        } else {
            None
        };
        let clip = params.params.keys().map(|k| (k.clone(), ClipState::new(cfg.dp.engine.clip_init))).collect();
        Ok(Self {
            sgd: Sgd::new(cfg.momentum),
            scheduler: PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience),
            cfg,
            params,
            clip,
            ledger,
            step: 0,
            batch_size,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<f64> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<f64> {
        self.params
    }

    pub fn ledger(&self) -> Option<&PrivacyLedger> {
        self.ledger.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr
    }

    pub fn epsilon(&self) -> Option<EpsilonReport> {
        self.ledger.as_ref().map(PrivacyLedger::epsilon)
    }

    /// Training-mode loss and raw parameter gradients for one batch at the
    /// current step. Parameters and running statistics are not touched.
    pub fn gradients(&self, batch: &WindowBatch) -> Result<(f64, BTreeMap<String, Tensor<f64>>, Vec<(String, crate::tensor::BatchStats<f64>)>)> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.features.clone());
        let mut r = substream(self.cfg.seed, &[key_hash("droppath"), self.step]);
        let pass = forward(&mut tape, &self.params, &self.cfg.model, x, Some(&mut r))?;
        let y = tape.constant(batch.targets.clone());
        let l = loss(&mut tape, pass.output, y)?;
        let value = tape.data(l)[0];
        if !value.is_finite() {
            return Ok((value, BTreeMap::new(), Vec::new()));
        }
        tape.backward(l)?;
        let mut grads = BTreeMap::new();
        for (path, v) in &pass.vars {
            let shape = self.params.get(path)?.shape().to_vec();
            let g = match tape.grad(*v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; shape.iter().product()],
            };
            grads.insert(path.clone(), Tensor::new(shape, g)?);
        }
        Ok((value, grads, pass.bn_stats))
    }

    /// Replaces raw gradients by their privatized versions and charges the
    /// ledger for one step.
    fn privatize(&mut self, grads: BTreeMap<String, Tensor<f64>>) -> Result<BTreeMap<String, Tensor<f64>>> {
        let Some(ledger) = self.ledger.as_mut() else { return Ok(grads) };
        let dp = &self.cfg.dp;
        let out = match dp.mechanism {
            Mechanism::Gani => {
                let mut out = BTreeMap::new();
                let mut worst_w2 = 0.0f64;
                for (path, g) in grads {
                    let mut r = substream(self.cfg.seed, &[key_hash("dp"), self.step, key_hash(&path)]);
                    let state = self.clip.get_mut(&path).expect("clip state per parameter");
                    let o = dp_gradient(&g, state, &dp.engine, &mut r)?;
                    worst_w2 = worst_w2.max(o.weight_sq_sum());
                    out.insert(path, o.grad);
                }
                match dp.accountant {
                    AccountantMode::SubsampledGaussian => ledger.accumulate(1),
                    AccountantMode::WeightedLemma => ledger.accumulate_weighted(&[worst_w2]),
                }
                out
            }
            Mechanism::DpSgd => {
                let mut r = substream(self.cfg.seed, &[key_hash("dpsgd"), self.step]);
                let (paths, tensors): (Vec<String>, Vec<Tensor<f64>>) = grads.into_iter().unzip();
                let noisy = dpsgd_privatize(&tensors, dp.engine.clip_init, dp.engine.sigma, self.batch_size, &mut r)?;
                ledger.accumulate(1);
                paths.into_iter().zip(noisy).collect()
            }
        };
        Ok(out)
    }

    /// One optimizer step on `batch`. Returns the batch loss.
    pub fn train_step(&mut self, batch: &WindowBatch, epoch: usize) -> Result<f64> {
        let (value, grads, stats) = match self.gradients(batch) {
            Err(TrainError::Tensor(TensorError::NonFinite { .. }) | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))) => {
                return Err(TrainError::NonFinite { epoch, step: self.step });
            }
            r => r?,
        };
        if !value.is_finite() {
            return Err(TrainError::NonFinite { epoch, step: self.step });
        }
        let grads = self.privatize(grads)?;
        self.sgd.step(&mut self.params, &grads, self.scheduler.lr)?;
        self.params.update_running_stats(&stats, BN_MOMENTUM);
        self.step += 1;
        Ok(value)
    }

    /// Inference-mode loss and trajectory metrics on held-out sequences.
    pub fn validate(&self, val: &[SequenceWindows]) -> Result<ValMetrics> {
        evaluate_sequences(&self.params, &self.cfg, val)
    }

    fn mean_lambda(&self) -> Option<f64> {
        (self.cfg.dp.enabled && self.cfg.dp.mechanism == Mechanism::Gani)
            .then(|| self.clip.values().map(|c| c.lambda).sum::<f64>() / self.clip.len() as f64)
    }

    /// Runs one epoch over shuffled, augmented batches; the last partial
    /// batch is dropped.
    pub fn run_epoch(&mut self, train: &WindowBatch, epoch: usize) -> Result<f64> {
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(self.cfg.seed, &[key_hash("shuffle"), epoch as u64]));
        let mut aug = self.cfg.aug.clone();
        aug.seed = self.cfg.seed;
        let mut total = 0.0;
        let batches = n / self.batch_size;
        for b in 0..batches {
            let idx = &order[b * self.batch_size..][..self.batch_size];
            let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let batch = augment_batch(&train.select(idx), &aug, epoch as u64, &keys);
            total += self.train_step(&batch, epoch)?;
        }
        Ok(total / batches as f64)
    }

    /// Full run: `cfg.epochs` epochs with validation, plateau scheduling
    /// and best-model tracking. `on_epoch` sees every record as it is made.
    pub fn fit(&mut self, data: &Dataset, mut on_epoch: impl FnMut(&EpochRecord, &ModelParams<f64>, bool) -> Result<()>) -> Result<RunRecord> {
        let initial = self.validate(&data.val)?;
        let mut record = RunRecord {
            config: self.cfg.to_kv().into_iter().collect(),
            params: self.params.count(),
            train_windows: data.train.len(),
            val_sequences: data.val.len(),
            initial,
            epochs: Vec::with_capacity(self.cfg.epochs),
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
        };
        for epoch in 1..=self.cfg.epochs {
            let t0 = Instant::now();
            let lr = self.scheduler.lr;
            let train_loss = self.run_epoch(&data.train, epoch)?;
            let val = self.validate(&data.val)?;
            if !val.loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step: self.step });
            }
            let eps = self.epsilon();
            let rec = EpochRecord {
                epoch,
                steps: self.step,
                lr,
                train_loss,
                val,
                epsilon: eps.map(|e| e.epsilon),
                epsilon_order: eps.map(|e| e.order),
                mean_lambda: self.mean_lambda(),
                seconds: t0.elapsed().as_secs_f64(),
            };
            let best = val.loss < record.best_val_loss;
            if best {
                record.best_val_loss = val.loss;
                record.best_epoch = epoch;
            }
            self.scheduler.step(val.loss);
            on_epoch(&rec, &self.params, best)?;
            record.epochs.push(rec);
        }
        Ok(record)
    }
}

/// Predicted velocities for every window, in chunks to bound memory.
pub fn predict_windows(params: &ModelParams<f64>, cfg: &TrainConfig, windows: &WindowBatch) -> Result<Vec<[f64; 2]>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(windows.len());
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let b = windows.select(chunk);
        let y = predict(params, &cfg.model, &b.features)?;
        out.extend(y.data().chunks(2).map(|c| [c[0], c[1]]));
    }
    Ok(out)
}

fn nan_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Integrates predicted and true velocities of each sequence from a common
/// origin and averages the trajectory metrics over sequences.
pub fn evaluate_sequences(params: &ModelParams<f64>, cfg: &TrainConfig, val: &[SequenceWindows]) -> Result<ValMetrics> {
    let mut per = Vec::with_capacity(val.len());
    let (mut loss_sum, mut count) = (0.0, 0usize);
    for s in val {
        let pred = predict_windows(params, cfg, &s.windows)?;
        let gt: Vec<[f64; 2]> = s.windows.targets.data().chunks(2).map(|c| [c[0], c[1]]).collect();
        let flat: Vec<f64> = pred.iter().flatten().copied().collect();
        loss_sum += loss_value(&flat, s.windows.targets.data()) * pred.len() as f64;
        count += pred.len();
        let est = integrate(&pred, s.step_dt, [0.0, 0.0])?;
        let truth = integrate(&gt, s.step_dt, [0.0, 0.0])?;
        per.push(evaluate(&est, &truth, cfg.rte_interval_s, cfg.sc_window_s)?);
    }
    Ok(ValMetrics {
        loss: loss_sum / count as f64,
        ate: nan_mean(per.iter().map(|m| m.ate)),
        rte: nan_mean(per.iter().map(|m| m.rte)),
        sc: nan_mean(per.iter().map(|m| m.sc)),
        sc_drift: nan_mean(per.iter().map(|m| m.sc_drift)),
    })
}

/// Trains on `data`. With `cfg.out_dir` set, writes `epochs.jsonl` (one
/// record per line), `best.ckpt`, `final.ckpt` and `run.json`.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<(RunRecord, ModelParams<f64>)> {
    let mut trainer = Trainer::new(cfg.clone(), data.train.len())?;
    let out_dir = cfg.out_dir.clone();
    let mut log = match &out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Some(std::io::BufWriter::new(std::fs::File::create(d.join("epochs.jsonl"))?))
        }
        None => None,
    };
    let model_cfg = cfg.model.clone();
    let record = trainer.fit(data, |rec, params, best| {
        if let (Some(w), Some(d)) = (log.as_mut(), out_dir.as_deref()) {
            serde_json::to_writer(&mut *w, rec)?;
            writeln!(w)?;
            w.flush()?;
            if best {
                save_checkpoint(d.join("best.ckpt"), &model_cfg, params)?;
            }
        }
        Ok(())
    })?;
    if let Some(d) = out_dir.as_deref() {
        write_outputs(d, &record, trainer.params(), &model_cfg)?;
    }
    Ok((record, trainer.into_params()))
}

fn write_outputs(dir: &Path, record: &RunRecord, params: &ModelParams<f64>, cfg: &crate::model::ModelConfig) -> Result<()> {
    save_checkpoint(dir.join("final.ckpt"), cfg, params)?;
    std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(record)?)?;
    Ok(())
}
