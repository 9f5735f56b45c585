//! Central-difference gradient check of the nano model.

use std::collections::BTreeMap;

use dpnav_core::model::{forward, ModelConfig, ModelParams, Preset};
use dpnav_core::rng::seeded;
use dpnav_core::tensor::{Tape, Tensor};
use rand::seq::index::sample;
use rand::Rng;

/// Step of the fourth-order five-point stencil. A plain central difference
/// at any step is too coarse for small gradients on high-curvature entries.
pub const STEP: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-6;
/// Tensors up to this size are checked entry by entry.
pub const FULL_CHECK_MAX: usize = 256;
pub const SAMPLES_PER_TENSOR: usize = 16;

pub struct Probe {
    pub cfg: ModelConfig,
    pub params: ModelParams<f64>,
    x: Tensor<f64>,
    r: Tensor<f64>,
    training: bool,
}

impl Probe {
    pub fn nano(training: bool, batch: usize, seed: u64) -> Self {
        let cfg = ModelConfig::preset(Preset::Nano);
        let mut params = ModelParams::init(&cfg, seed).unwrap();
        let mut rng = seeded(seed ^ 0xfeed);
        // move affine and bias terms off their trivial init so every path is exercised
        for (name, t) in params.params.iter_mut() {
            if !name.ends_with(".weight") || t.shape().len() == 1 {
                t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
            }
        }
        for (name, b) in params.buffers.iter_mut() {
            let var = name.ends_with("running_var");
            b.iter_mut().for_each(|v| *v = if var { rng.random_range(0.5..2.0) } else { rng.random_range(-0.3..0.3) });
        }
        let x = Tensor::from_fn(&[batch, 6, 200], |_| rng.random_range(-2.0..2.0));
        let r = Tensor::from_fn(&[batch, 2], |_| rng.random_range(-1.0..1.0));
        Self { cfg, params, x, r, training }
    }

    /// `Σ out ⊙ r` and optionally the gradient of every parameter.
    pub fn eval(&self, p: &ModelParams<f64>, grads: bool) -> (f64, BTreeMap<String, Vec<f64>>) {
        let mut tape = Tape::new();
        let x = tape.constant(self.x.clone());
        let mut rng = seeded(99);
        let pass = forward(&mut tape, p, &self.cfg, x, if self.training { Some(&mut rng) } else { None }).unwrap();
        let r = tape.constant(self.r.clone());
        let prod = tape.mul(pass.output, r).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.data(loss)[0];
        let mut out = BTreeMap::new();
        if grads {
            tape.backward(loss).unwrap();
            for (name, v) in &pass.vars {
                out.insert(name.clone(), tape.grad(*v).expect("parameter gradient").to_vec());
            }
        }
        (value, out)
    }
}

/// `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`
fn stencil(mut f: impl FnMut(f64) -> f64) -> f64 {
    (-f(2.0 * STEP) + 8.0 * f(STEP) - 8.0 * f(-STEP) + f(-2.0 * STEP)) / (12.0 * STEP)
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Default)]
pub struct Report {
    pub worst: f64,
    pub worst_at: String,
    pub entries_checked: usize,
    pub tensors_checked: usize,
    pub forwards: usize,
}

impl Report {
    fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        if err > self.worst {
            self.worst = err;
            self.worst_at = at();
        }
    }
}

/// Every entry of small tensors, a sample of the rest, and one random
/// directional derivative per tensor (which touches all of its entries).
pub fn check(probe: &Probe) -> Report {
    let (_, grads) = probe.eval(&probe.params, true);
    let mut rep = Report::default();
    let mut p = probe.params.clone();
    let mut rng = seeded(1234);
    let loss_at = |p: &ModelParams<f64>, rep: &mut Report| {
        rep.forwards += 1;
        probe.eval(p, false).0
    };
    for (name, g) in &grads {
        let n = g.len();
        let idx: Vec<usize> = if n <= FULL_CHECK_MAX {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, SAMPLES_PER_TENSOR).into_vec();
            // always include the largest gradient entry
            v.push((0..n).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap());
            v
        };
        for i in idx {
            let orig = p.params[name].data()[i];
            let numeric = stencil(|s| {
                p.get_mut(name).unwrap().data_mut()[i] = orig + s;
                loss_at(&p, &mut rep)
            });
            p.get_mut(name).unwrap().data_mut()[i] = orig;
            rep.record(rel_error(g[i], numeric), || format!("{name}[{i}]"));
            rep.entries_checked += 1;
        }
        // directional derivative along a random unit direction
        let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let dir: Vec<f64> = dir.iter().map(|d| d / norm).collect();
        let base = p.params[name].clone();
        let shifted = |s: f64| Tensor::new(base.shape().to_vec(), base.data().iter().zip(&dir).map(|(b, d)| b + s * d).collect()).unwrap();
        let numeric = stencil(|s| {
            *p.get_mut(name).unwrap() = shifted(s);
            loss_at(&p, &mut rep)
        });
        *p.get_mut(name).unwrap() = base;
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        rep.record(rel_error(analytic, numeric), || format!("{name} (direction)"));
        rep.tensors_checked += 1;
    }
    rep
}
