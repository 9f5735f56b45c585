use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dpnav_core::accountant::{AccountantMode, ConvergenceParams, PrivacyLedger};
use dpnav_core::augment::{apply_window, sample_transform, AugmentConfig};
use dpnav_core::imu::{load_csv, make_windows, prepare, save_csv, synth_trajectory, MotionProfile, SynthConfig, DEFAULT_RATE_HZ};
use dpnav_core::metrics::{default_thresholds, error_cdf, evaluate, integrate, position_errors, Trajectory};
use dpnav_core::model::{count_params, load_checkpoint, ModelConfig, Preset};
use dpnav_core::rng::{key_hash, substream};
use dpnav_core::train::convergence::{convergence_experiment, ConvergenceConfig};
use dpnav_core::train::{predict_windows, train, Dataset, TrainConfig};

/// Private inertial odometry: data preparation, training and evaluation.
#[derive(Parser)]
#[command(name = "dpnav", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pedestrian IMU recordings.
    Synth(SynthArgs),
    /// Resample and rotate a recording into the global frame.
    Preprocess(PreprocessArgs),
    /// Apply one random rotate/scale/skew transform plus sensor noise to a recording.
    Augment(AugmentArgs),
    /// Train a velocity model from a config file.
    Train(TrainArgs),
    /// Integrate model predictions over a recording into trajectories.
    Predict(PredictArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
    /// Privacy budget of a subsampled Gaussian training run.
    Account(AccountArgs),
    /// Noisy gradient descent on a quadratic against the analytic error bound.
    Converge(ConvergeArgs),
    /// Parameter count of a model preset.
    Params(ParamsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (one CSV per sequence).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Length of each sequence in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
    /// walk, run or mixed
    #[arg(long, default_value = "walk")]
    profile: String,
    /// Disable sensor noise and bias.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
    /// Override augmentation settings, e.g. `--set aug.theta_max=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra assignments applied after the file, e.g. `--set dp.enabled=true`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Training data directory (overrides `data.train`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (overrides `out.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw recording (CSV).
    #[arg(long)]
    input: PathBuf,
    /// Estimated trajectory `t,px,py`.
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth trajectory from the same window targets.
    #[arg(long)]
    gt_output: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    stride: usize,
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    rate: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory `t,px,py`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth trajectory `t,px,py`.
    #[arg(long)]
    gt: PathBuf,
    /// CDF output `threshold,fraction` (default: next to --pred).
    #[arg(long)]
    cdf: Option<PathBuf>,
    /// Write the metric JSON here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    rte_interval: f64,
    #[arg(long, default_value_t = 5.0)]
    sc_window: f64,
    /// Number of CDF thresholds.
    #[arg(long, default_value_t = 100)]
    thresholds: usize,
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    batch: u64,
    #[arg(long)]
    dataset_size: u64,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// subsampled_gaussian or weighted_lemma
    #[arg(long, default_value = "subsampled_gaussian")]
    mode: String,
    /// Per-order CSV `order,rdp,epsilon`.
    #[arg(long)]
    orders_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    #[arg(long = "smoothness", default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Comma-separated noise weights.
    #[arg(long, default_value = "0.4,0.3,0.2,0.1")]
    weights: String,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    steps: u64,
    #[arg(long, default_value_t = 200)]
    seeds: u64,
    #[arg(long, default_value_t = 5)]
    log_every: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ParamsArgs {
    /// alpha, beta, gamma, delta (or α, β, γ, δ) or nano
    #[arg(long)]
    preset: String,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Account(a) => account(a),
        Command::Converge(a) => converge(a),
        Command::Params(a) => params(a),
    }
}

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s.split_once('=').with_context(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim(), v.trim()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let profile: MotionProfile = a.profile.parse().map_err(anyhow::Error::msg)?;
    let mut cfg = SynthConfig { profile, duration_s: a.duration, rate_hz: a.rate, ..SynthConfig::default() };
    if a.noiseless {
        cfg = cfg.noiseless();
    }
    ensure!(a.count > 0, "--count must be positive");
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count as u64 {
        let seq = synth_trajectory(a.seed + i, &cfg)?;
        let path = a.out.join(format!("synth_{:04}.csv", a.seed + i));
        save_csv(&seq, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", json!({ "sequences": a.count, "dir": a.out.display().to_string() }));
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let seq = load_csv(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let out = prepare(&seq, a.rate)?;
    save_csv(&out, &a.output)?;
    println!("{}", json!({ "samples_in": seq.len(), "samples_out": out.len(), "rate_hz": a.rate }));
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let mut cfg = AugmentConfig { seed: a.seed, ..AugmentConfig::default() };
    let mut tc = TrainConfig::default();
    for o in &a.overrides {
        let (k, v) = split_assignment(o)?;
        ensure!(k.starts_with("aug."), "only aug.* keys apply here, got `{k}`");
        tc.set(k, v)?;
    }
    cfg.theta_max = tc.aug.theta_max;
    cfg.delta_s = tc.aug.delta_s;
    cfg.delta_k = tc.aug.delta_k;
    cfg.noise_sigma = tc.aug.noise_sigma;
    cfg.validate()?;

    let mut seq = prepare(&load_csv(&a.input)?, a.rate)?;
    let mut r = substream(cfg.seed, &[key_hash("augment-file")]);
    let t = sample_transform(&cfg, &mut r);
    // lay the sequence out like a single 6×n window; the target is unused
    let n = seq.len();
    let mut feats = vec![0.0; 6 * n];
    for i in 0..n {
        for c in 0..3 {
            feats[c * n + i] = seq.accel[i][c];
            feats[(c + 3) * n + i] = seq.gyro[i][c];
        }
    }
    apply_window(&mut feats, &mut [0.0, 0.0], &t.matrix, cfg.noise_sigma, &mut r);
    for i in 0..n {
        for c in 0..3 {
            seq.accel[i][c] = feats[c * n + i];
            seq.gyro[i][c] = feats[(c + 3) * n + i];
        }
        let p = t.matrix.apply([seq.pos[i][0], seq.pos[i][1]]);
        seq.pos[i][0] = p[0];
        seq.pos[i][1] = p[1];
    }
    save_csv(&seq, &a.output)?;
    println!("{}", json!({ "theta": t.theta, "scale": t.scale, "skew": t.skew, "matrix": t.matrix.0 }));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    for o in &a.overrides {
        let (k, v) = split_assignment(o)?;
        cfg.set(k, v)?;
    }
    if let Some(d) = a.data {
        cfg.data_train = Some(d);
    }
    if let Some(o) = a.out {
        cfg.out_dir = Some(o);
    }
    cfg.validate()?;
    let data = Dataset::load(&cfg)?;
    let (record, _) = train(&cfg, &data)?;
    let last = record.epochs.last().context("no epochs ran")?;
    println!(
        "{}",
        json!({
            "epochs": record.epochs.len(),
            "best_epoch": record.best_epoch,
            "best_val_loss": record.best_val_loss,
            "initial_val_ate": record.initial.ate,
            "final_val_ate": last.val.ate,
            "epsilon": last.epsilon,
        })
    );
    Ok(())
}

fn write_trajectory(path: &Path, t: &Trajectory, t0: f64) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "t,px,py")?;
    for (i, p) in t.positions.iter().enumerate() {
        writeln!(w, "{:?},{:?},{:?}", t0 + i as f64 * t.dt, p[0], p[1])?;
    }
    w.flush()?;
    Ok(())
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("empty trajectory file")?;
    ensure!(header.trim() == "t,px,py", "{}: expected header `t,px,py`, got `{header}`", path.display());
    let mut t = Vec::new();
    let mut pos = Vec::new();
    for (n, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}: line {}", path.display(), n + 2))?;
        ensure!(v.len() == 3, "{}: line {} has {} fields", path.display(), n + 2, v.len());
        t.push(v[0]);
        pos.push([v[1], v[2]]);
    }
    ensure!(t.len() >= 2, "{}: need at least two samples", path.display());
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    Ok(Trajectory::new(pos, dt)?)
}

fn predict(a: PredictArgs) -> Result<()> {
    let (model_cfg, params) = load_checkpoint::<f64>(&a.checkpoint)?;
    let cfg = TrainConfig { model: model_cfg.clone(), window: model_cfg.input_length, ..TrainConfig::default() };
    let seq = prepare(&load_csv(&a.input)?, a.rate)?;
    let w = make_windows(&seq, model_cfg.input_length, a.stride)?;
    let pred = predict_windows(&params, &cfg, &w)?;
    let step_dt = w.dt * a.stride as f64;
    let t0 = seq.t[w.end_index[0]];
    write_trajectory(&a.output, &integrate(&pred, step_dt, [0.0, 0.0])?, t0)?;
    if let Some(p) = &a.gt_output {
        let gt: Vec<[f64; 2]> = w.targets.data().chunks(2).map(|c| [c[0], c[1]]).collect();
        write_trajectory(p, &integrate(&gt, step_dt, [0.0, 0.0])?, t0)?;
    }
    println!("{}", json!({ "windows": w.len(), "step_dt": step_dt }));
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let est = read_trajectory(&a.pred)?;
    let gt = read_trajectory(&a.gt)?;
    ensure!(est.len() == gt.len(), "trajectories have {} and {} samples", est.len(), gt.len());
    ensure!((est.dt - gt.dt).abs() <= 1e-9 * gt.dt.abs().max(1.0), "sample spacing differs: {} vs {}", est.dt, gt.dt);
    let summary = evaluate(&est, &gt, a.rte_interval, a.sc_window)?;
    let errors = position_errors(&est, &gt)?;
    let cdf = error_cdf(&est, &gt, &default_thresholds(&errors, a.thresholds))?;
    let cdf_path = a.cdf.unwrap_or_else(|| a.pred.with_extension("cdf.csv"));
    let mut w = BufWriter::new(fs::File::create(&cdf_path).with_context(|| format!("creating {}", cdf_path.display()))?);
    writeln!(w, "threshold,fraction")?;
    for (t, f) in cdf {
        writeln!(w, "{t:?},{f:?}")?;
    }
    w.flush()?;
    let text = serde_json::to_string(&summary)?;
    match a.json {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn account(a: AccountArgs) -> Result<()> {
    ensure!(a.batch > 0 && a.batch <= a.dataset_size, "need 0 < batch <= dataset size");
    let mode: AccountantMode = a.mode.parse()?;
    let q = a.batch as f64 / a.dataset_size as f64;
    let mut ledger = PrivacyLedger::new(q, a.sigma, a.delta, mode)?;
    ledger.accumulate(a.steps);
    let eps = ledger.epsilon();
    if let Some(p) = &a.orders_csv {
        let mut w = BufWriter::new(fs::File::create(p)?);
        writeln!(w, "order,rdp,epsilon")?;
        for ((o, r), e) in ledger.orders().iter().zip(ledger.rdp_totals()).zip(ledger.epsilon_per_order()) {
            writeln!(w, "{o:?},{r:?},{e:?}")?;
        }
        w.flush()?;
    }
    println!(
        "{}",
        json!({ "epsilon": eps.epsilon, "order": eps.order, "q": q, "steps": a.steps, "sigma": a.sigma, "delta": a.delta, "mode": mode.to_string() })
    );
    Ok(())
}

fn converge(a: ConvergeArgs) -> Result<()> {
    let weights: Vec<f64> = a
        .weights
        .split(',')
        .map(|w| w.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("--weights must be comma-separated numbers")?;
    let cfg = ConvergenceConfig {
        params: ConvergenceParams { smoothness: a.l, strong_convexity: a.mu, step_size: a.eta, sigma: a.sigma },
        weights,
        dim: a.dim,
        steps: a.steps,
        seeds: a.seeds,
        log_every: a.log_every,
        seed: a.seed,
    };
    let report = convergence_experiment(&cfg)?;
    println!("{}", serde_json::to_string(&report)?);
    if !report.holds() {
        bail!("empirical error exceeded the bound at some checkpoint");
    }
    Ok(())
}

fn params(a: ParamsArgs) -> Result<()> {
    let preset: Preset = a.preset.parse()?;
    let cfg = ModelConfig::preset(preset);
    println!(
        "{}",
        json!({ "preset": preset.to_string(), "params": count_params(&cfg), "channels": cfg.channels, "depths": cfg.depths })
    );
    Ok(())
}
