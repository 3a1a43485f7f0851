//! Training loop, per-epoch traces and multi-seed aggregation.
//!
//! A run is fully determined by its [`TrainConfig`] and seed: the network
//! is initialised from the seed, the dataset is regenerated from
//! [`data_seed`], and mini-batch order comes from [`shuffle_seed`]. Seeds are
//! trained in parallel but each run owns its own state, so results do not
//! depend on the number of worker threads.
//!
//! Columns that do not apply to a head (α-dependent quantities for the
//! Gaussian head) are recorded as NaN.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{CubicSpec, Dataset, GeneratorSpec};
use crate::error::{Error, Result};
use crate::losses::{sample_loss_and_grad, HeadKind, LossConfig, LossKind};
use crate::network::{Activation, Architecture, GaussianParams, NigParams, Parameters, OUTPUT_DIM};
use crate::optim::{AdamSettings, OptimizerConfig};
use crate::uncertainty::{
    gaussian_uncertainties, proposed_uncertainties, sota_uncertainties, w_st, UncertaintyEstimate,
};

const DATA_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const SHUFFLE_SEED_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Seed used to regenerate the training data of run `seed`.
pub fn data_seed(seed: u64) -> u64 {
    seed ^ DATA_SEED_SALT
}

/// Seed of the mini-batch shuffling stream of run `seed`.
pub fn shuffle_seed(seed: u64) -> u64 {
    seed ^ SHUFFLE_SEED_SALT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchSize {
    Full,
    #[serde(untagged)]
    Size(usize),
}

/// `points` evenly spaced values on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        Grid { lo, hi, points }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![0.5 * (self.lo + self.hi)],
            n => (0..n)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub arch: Architecture,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub seeds: Vec<u64>,
    pub data: GeneratorSpec,
    /// Inputs at which traces are captured.
    pub trace_grid: Grid,
    /// Capture a trace every this many epochs; 0 disables tracing.
    pub trace_every: usize,
    /// Inputs for the final prediction table.
    pub eval_grid: Grid,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.loss.validate() {
            problems.push(e.to_string());
        }
        if let Err(Error::Config(p)) = self.arch.validate() {
            problems.extend(p);
        }
        problems.extend(self.optimizer.validate());
        if self.seeds.is_empty() {
            problems.push("at least one seed is required".into());
        }
        if self.batch_size == BatchSize::Size(0) {
            problems.push("batch size must be positive".into());
        }
        if self.trace_every > 0 && self.trace_grid.points == 0 {
            problems.push("trace grid must be non-empty when tracing is enabled".into());
        }
        for (name, g) in [("trace", &self.trace_grid), ("eval", &self.eval_grid)] {
            if !(g.lo.is_finite() && g.hi.is_finite() && g.lo <= g.hi) {
                problems.push(format!("{name} grid bounds invalid: [{}, {}]", g.lo, g.hi));
            }
        }
        match self.data {
            GeneratorSpec::Cubic(c) => {
                if c.n == 0 || !(c.x_lo < c.x_hi) || !(c.noise_std >= 0.0) {
                    problems.push(format!("invalid cubic generator settings {c:?}"));
                }
            }
            GeneratorSpec::Pulse { n } => {
                if n == 0 {
                    problems.push("pulse generator needs n >= 1".into());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

impl TrainConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses and validates a config.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::toml(origin, text, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }
}

/// Trace values at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub x: f64,
    pub gamma: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub residual: f64,
    pub w_st: f64,
    pub sqrt_beta_over_alpha: f64,
    pub sqrt_nu_over_1p_nu: f64,
    pub u_al: f64,
    pub u_ep: f64,
    pub u_al_p: f64,
    pub u_ep_p: f64,
}

/// Column names of [`TracePoint`] after `x`, in CSV order.
pub const TRACE_FIELDS: [&str; 12] = [
    "gamma",
    "nu",
    "alpha",
    "beta",
    "residual",
    "w_st",
    "sqrt_beta_over_alpha",
    "sqrt_nu_over_1p_nu",
    "u_al",
    "u_ep",
    "u_al_p",
    "u_ep_p",
];

impl TracePoint {
    /// Derives every column from the raw outputs at capture time.
    pub fn capture(x: f64, theta: [f64; OUTPUT_DIM], head: HeadKind, true_mean: f64) -> Self {
        match head {
            HeadKind::Evidential => {
                let m = NigParams::from_theta(theta);
                let sota = sota_uncertainties(&m).expect("head keeps alpha above 1");
                let prop = proposed_uncertainties(&m);
                TracePoint {
                    x,
                    gamma: m.gamma,
                    nu: m.nu,
                    alpha: m.alpha,
                    beta: m.beta,
                    residual: m.gamma - true_mean,
                    w_st: w_st(&m),
                    sqrt_beta_over_alpha: (m.beta / m.alpha).sqrt(),
                    sqrt_nu_over_1p_nu: (m.nu / (1.0 + m.nu)).sqrt(),
                    u_al: sota.aleatoric,
                    u_ep: sota.epistemic,
                    u_al_p: prop.aleatoric,
                    u_ep_p: prop.epistemic,
                }
            }
            HeadKind::Gaussian => {
                let g = GaussianParams::from_theta(theta);
                let u = gaussian_uncertainties(&g);
                TracePoint {
                    x,
                    gamma: g.gamma,
                    nu: g.nu,
                    alpha: f64::NAN,
                    beta: g.beta,
                    residual: g.gamma - true_mean,
                    w_st: f64::NAN,
                    sqrt_beta_over_alpha: f64::NAN,
                    sqrt_nu_over_1p_nu: (g.nu / (1.0 + g.nu)).sqrt(),
                    u_al: f64::NAN,
                    u_ep: f64::NAN,
                    u_al_p: u.aleatoric,
                    u_ep_p: u.epistemic,
                }
            }
        }
    }

    pub fn fields(&self) -> [f64; 12] {
        [
            self.gamma,
            self.nu,
            self.alpha,
            self.beta,
            self.residual,
            self.w_st,
            self.sqrt_beta_over_alpha,
            self.sqrt_nu_over_1p_nu,
            self.u_al,
            self.u_ep,
            self.u_al_p,
            self.u_ep_p,
        ]
    }

    pub fn from_fields(x: f64, f: [f64; 12]) -> Self {
        TracePoint {
            x,
            gamma: f[0],
            nu: f[1],
            alpha: f[2],
            beta: f[3],
            residual: f[4],
            w_st: f[5],
            sqrt_beta_over_alpha: f[6],
            sqrt_nu_over_1p_nu: f[7],
            u_al: f[8],
            u_ep: f[9],
            u_al_p: f[10],
            u_ep_p: f[11],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    /// 0 is the initialization.
    pub epoch: usize,
    pub points: Vec<TracePoint>,
}

/// One row of [`evaluate_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    pub x: f64,
    pub theta: [f64; OUTPUT_DIM],
    pub nig: Option<NigParams>,
    pub gaussian: Option<GaussianParams>,
    /// SOTA and PROPOSED for the evidential head, GAUSSIAN for the Gaussian head.
    pub estimates: Vec<UncertaintyEstimate>,
}

impl GridPrediction {
    pub fn estimate(&self, convention: crate::uncertainty::Convention) -> Option<&UncertaintyEstimate> {
        self.estimates.iter().find(|e| e.convention == convention)
    }
}

/// Deterministic prediction table over `xs`.
pub fn evaluate_grid(params: &Parameters, head: HeadKind, xs: &[f64]) -> Vec<GridPrediction> {
    xs.iter()
        .map(|&x| {
            let theta = params.theta(x);
            match head {
                HeadKind::Evidential => {
                    let m = NigParams::from_theta(theta);
                    let sota = sota_uncertainties(&m).expect("head keeps alpha above 1");
                    GridPrediction {
                        x,
                        theta,
                        nig: Some(m),
                        gaussian: None,
                        estimates: vec![sota, proposed_uncertainties(&m)],
                    }
                }
                HeadKind::Gaussian => {
                    let g = GaussianParams::from_theta(theta);
                    GridPrediction {
                        x,
                        theta,
                        nig: None,
                        gaussian: Some(g),
                        estimates: vec![gaussian_uncertainties(&g)],
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub params: Parameters,
    /// Mean training loss of each epoch, in order.
    pub epoch_loss: Vec<f64>,
    pub traces: Vec<EpochTrace>,
    pub predictions: Vec<GridPrediction>,
    pub wall_clock_secs: f64,
    pub config: TrainConfig,
}

fn capture(params: &Parameters, cfg: &TrainConfig, grid: &[f64], epoch: usize) -> EpochTrace {
    let head = cfg.loss.kind.head();
    EpochTrace {
        epoch,
        points: grid
            .iter()
            .map(|&x| TracePoint::capture(x, params.theta(x), head, cfg.data.true_mean(x)))
            .collect(),
    }
}

/// Trains one network on `data` from initialization `seed`.
pub fn train_run(cfg: &TrainConfig, data: &Dataset, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let start = Instant::now();
    let mut params = Parameters::init(&cfg.arch, seed)?;
    let mut optimizer = cfg.optimizer.build(params.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(seed));
    let grid = cfg.trace_grid.values();
    let tracing = cfg.trace_every > 0;

    let mut traces = Vec::new();
    if tracing {
        traces.push(capture(&params, cfg, &grid, 0));
    }

    let n = data.len();
    let batch = match cfg.batch_size {
        BatchSize::Full => n,
        BatchSize::Size(b) => b.min(n),
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut tape = Tape::with_capacity(64);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut xs = Vec::with_capacity(batch);
    let mut d_theta = Array2::<f64>::zeros((batch, OUTPUT_DIM));

    for epoch in 1..=cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            xs.clear();
            xs.extend(chunk.iter().map(|&i| data.samples[i].x));
            let cache = params.forward_batch(&xs)?;
            if d_theta.nrows() != chunk.len() {
                d_theta = Array2::zeros((chunk.len(), OUTPUT_DIM));
            }
            let scale = 1.0 / chunk.len() as f64;
            for (row, &i) in chunk.iter().enumerate() {
                let s = &data.samples[i];
                let theta = [
                    cache.theta[[row, 0]],
                    cache.theta[[row, 1]],
                    cache.theta[[row, 2]],
                    cache.theta[[row, 3]],
                ];
                let (loss, grad) = sample_loss_and_grad(&mut tape, theta, s.y, &cfg.loss)
                    .map_err(|_| non_finite(epoch, i, s.x, f64::NAN, &params))?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(non_finite(epoch, i, s.x, loss, &params));
                }
                total += loss;
                for k in 0..OUTPUT_DIM {
                    d_theta[[row, k]] = grad[k] * scale;
                }
            }
            let grad = params.backward_batch(&cache, &d_theta);
            optimizer.step(params.as_mut_slice(), &grad, epoch - 1)?;
        }
        epoch_loss.push(total / n as f64);
        if tracing && epoch % cfg.trace_every == 0 {
            traces.push(capture(&params, cfg, &grid, epoch));
        }
    }

    let predictions = evaluate_grid(&params, cfg.loss.kind.head(), &cfg.eval_grid.values());
    Ok(RunResult {
        seed,
        params,
        epoch_loss,
        traces,
        predictions,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}

fn non_finite(epoch: usize, sample: usize, x: f64, loss: f64, params: &Parameters) -> Error {
    Error::NonFiniteLoss {
        epoch,
        sample,
        x,
        loss,
        snapshot: params.as_slice().iter().take(8).copied().collect(),
    }
}

/// Mean and standard deviation across seeds of one traced quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoint {
    pub x: f64,
    /// Aligned with [`TRACE_FIELDS`].
    pub fields: [MeanStd; 12],
}

impl AggregatePoint {
    pub fn field(&self, name: &str) -> Option<MeanStd> {
        TRACE_FIELDS.iter().position(|f| *f == name).map(|i| self.fields[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTrace {
    pub epoch: usize,
    pub points: Vec<AggregatePoint>,
}

/// Per-(epoch, grid point) mean and sample standard deviation over runs.
///
/// Uses Welford's single-pass update. With one run the deviation is 0.
pub fn aggregate_traces(runs: &[&[EpochTrace]]) -> Result<Vec<AggregateTrace>> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    for r in runs {
        if r.len() != first.len()
            || r.iter()
                .zip(first.iter())
                .any(|(a, b)| a.epoch != b.epoch || a.points.len() != b.points.len())
        {
            return Err(Error::Format("traces of different runs are not aligned".into()));
        }
    }
    Ok(first
        .iter()
        .enumerate()
        .map(|(e, trace)| AggregateTrace {
            epoch: trace.epoch,
            points: (0..trace.points.len())
                .map(|p| {
                    let mut count = 0.0;
                    let mut mean = [0.0; 12];
                    let mut m2 = [0.0; 12];
                    for r in runs {
                        count += 1.0;
                        let f = r[e].points[p].fields();
                        for k in 0..12 {
                            let delta = f[k] - mean[k];
                            mean[k] += delta / count;
                            m2[k] += delta * (f[k] - mean[k]);
                        }
                    }
                    let mut fields = [MeanStd::default(); 12];
                    for k in 0..12 {
                        fields[k] = MeanStd {
                            mean: mean[k],
                            std: if count > 1.0 {
                                (m2[k] / (count - 1.0)).sqrt()
                            } else {
                                0.0
                            },
                        };
                    }
                    AggregatePoint {
                        x: trace.points[p].x,
                        fields,
                    }
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct MultiSeedResult {
    pub runs: Vec<RunResult>,
    /// Seeds that failed, with the reason. Excluded from the aggregate.
    pub failures: Vec<(u64, String)>,
    pub aggregate: Vec<AggregateTrace>,
}

impl MultiSeedResult {
    /// Mean over runs of a per-point function of the final predictions.
    pub fn mean_prediction(&self, f: impl Fn(&GridPrediction) -> f64) -> Vec<(f64, f64)> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        (0..first.predictions.len())
            .map(|i| {
                let x = first.predictions[i].x;
                let m = self.runs.iter().map(|r| f(&r.predictions[i])).sum::<f64>() / self.runs.len() as f64;
                (x, m)
            })
            .collect()
    }
}

/// Trains every seed of `cfg`, each on its own regenerated dataset.
pub fn multi_seed(cfg: &TrainConfig) -> Result<MultiSeedResult> {
    multi_seed_with(cfg, None)
}

/// Like [`multi_seed`], but every seed trains on `data` when given.
pub fn multi_seed_with(cfg: &TrainConfig, data: Option<&Dataset>) -> Result<MultiSeedResult> {
    cfg.validate()?;
    let outcomes: Vec<(u64, Result<RunResult>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = match data {
                Some(d) => train_run(cfg, d, seed),
                None => cfg
                    .data
                    .generate(data_seed(seed))
                    .and_then(|d| train_run(cfg, &d, seed)),
            };
            (seed, run)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let traces: Vec<&[EpochTrace]> = runs.iter().map(|r| r.traces.as_slice()).collect();
    let aggregate = aggregate_traces(&traces)?;
    Ok(MultiSeedResult {
        runs,
        failures,
        aggregate,
    })
}

/// Per-epoch summary of ν over the in-distribution trace grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuSnapshot {
    pub epoch: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Trains one seed of `cfg` and reports how ν evolves over its trace grid.
///
/// With [`LossKind::NaiveExtension`] nothing in the likelihood anchors ν, so
/// the regularizer drives it towards zero; the DER losses are the contrast.
/// Tracing is forced on every epoch.
pub fn naive_extension_demo(cfg: &TrainConfig, seed: u64) -> Result<Vec<NuSnapshot>> {
    let cfg = TrainConfig {
        trace_every: 1,
        seeds: vec![seed],
        ..cfg.clone()
    };
    let data = cfg.data.generate(data_seed(seed))?;
    let run = train_run(&cfg, &data, seed)?;
    Ok(run
        .traces
        .iter()
        .map(|t| {
            let mut nus: Vec<f64> = t.points.iter().map(|p| p.nu).collect();
            nus.sort_by(f64::total_cmp);
            NuSnapshot {
                epoch: t.epoch,
                min: nus[0],
                median: nus[nus.len() / 2],
                max: nus[nus.len() - 1],
            }
        })
        .collect())
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 6] = [
    "cubic-der",
    "cubic-normalized",
    "cubic-gaussian",
    "cubic-naive",
    "pulse-der",
    "pulse-gaussian",
];

/// Network used by every preset: two hidden layers of 64 ReLU units.
pub fn preset_architecture() -> Architecture {
    Architecture::mlp(&[64, 64], Activation::Relu)
}

/// Mini-batch size used by every preset.
pub const PRESET_BATCH: usize = 100;

/// Published training protocols, scaled to 10 seeds.
pub fn preset(name: &str) -> Option<TrainConfig> {
    let cubic = GeneratorSpec::Cubic(CubicSpec::default());
    let pulse = GeneratorSpec::Pulse { n: 1000 };
    let adam = |lr| OptimizerConfig::Adam(AdamSettings::with_learning_rate(lr));
    let (kind, lambda, optimizer, epochs, data) = match name {
        "cubic-der" => (LossKind::DerOriginal, 0.01, adam(5e-4), 500, cubic),
        "cubic-normalized" => (LossKind::DerNormalized, 0.01, adam(5e-4), 500, cubic),
        "cubic-gaussian" => (LossKind::GaussianAlt, 2.0, adam(5e-3), 500, cubic),
        "cubic-naive" => (
            LossKind::NaiveExtension,
            0.01,
            OptimizerConfig::Momentum {
                learning_rate: 1e-3,
                momentum: 0.9,
            },
            500,
            cubic,
        ),
        "pulse-der" => (LossKind::DerOriginal, 0.01, adam(1e-3), 600, pulse),
        "pulse-gaussian" => (LossKind::GaussianAlt, 0.01, adam(1e-3), 600, pulse),
        _ => return None,
    };
    let eval_grid = match data {
        GeneratorSpec::Cubic(_) => Grid::new(-7.0, 7.0, 141),
        GeneratorSpec::Pulse { .. } => Grid::new(0.0, 1.0, 201),
    };
    Some(TrainConfig {
        loss: LossConfig::new(kind, lambda),
        arch: preset_architecture(),
        optimizer,
        epochs,
        batch_size: BatchSize::Size(PRESET_BATCH),
        seeds: (0..10).collect(),
        data,
        trace_grid: Grid::new(eval_grid.lo, eval_grid.hi, 101),
        trace_every: 1,
        eval_grid,
    })
}

/// Long-format prediction table: one row per grid point and convention.
pub fn predictions_to_csv(runs: &[(u64, &[GridPrediction])]) -> String {
    let mut out = String::from("seed,x,gamma,nu,alpha,beta,convention,aleatoric,epistemic\n");
    for (seed, rows) in runs {
        for p in rows.iter() {
            let (nu, alpha, beta) = match (p.nig, p.gaussian) {
                (Some(m), _) => (m.nu, m.alpha, m.beta),
                (None, Some(g)) => (g.nu, f64::NAN, g.beta),
                (None, None) => (f64::NAN, f64::NAN, f64::NAN),
            };
            for e in &p.estimates {
                let _ = write!(out, "{seed},");
                for v in [p.x, e.prediction, nu, alpha, beta] {
                    fmt_f(&mut out, v);
                    out.push(',');
                }
                let _ = write!(out, "{},", e.convention);
                fmt_f(&mut out, e.aleatoric);
                out.push(',');
                fmt_f(&mut out, e.epistemic);
                out.push('\n');
            }
        }
    }
    out
}

fn fmt_f(out: &mut String, v: f64) {
    let _ = write!(out, "{v:?}");
}

/// Trace CSV header.
pub fn trace_csv_header() -> String {
    format!("seed,epoch,x,{}", TRACE_FIELDS.join(","))
}

/// Per-seed trace rows for every run.
pub fn traces_to_csv(runs: &[RunResult]) -> String {
    let mut out = trace_csv_header();
    out.push('\n');
    for r in runs {
        for t in &r.traces {
            for p in &t.points {
                push_trace_row(&mut out, r.seed, t.epoch, p);
            }
        }
    }
    out
}

/// Writes parsed rows back in the [`traces_to_csv`] format.
pub fn trace_rows_to_csv(rows: &[TraceRow]) -> String {
    let mut out = trace_csv_header();
    out.push('\n');
    for r in rows {
        push_trace_row(&mut out, r.seed, r.epoch, &r.point);
    }
    out
}

fn push_trace_row(out: &mut String, seed: u64, epoch: usize, p: &TracePoint) {
    let _ = write!(out, "{seed},{epoch},");
    fmt_f(out, p.x);
    for v in p.fields() {
        out.push(',');
        fmt_f(out, v);
    }
    out.push('\n');
}

/// Aggregate CSV: `epoch,x` then `<field>_mean,<field>_std` pairs.
pub fn aggregate_to_csv(agg: &[AggregateTrace]) -> String {
    let mut out = String::from("epoch,x");
    for f in TRACE_FIELDS {
        let _ = write!(out, ",{f}_mean,{f}_std");
    }
    out.push('\n');
    for t in agg {
        for p in &t.points {
            let _ = write!(out, "{},", t.epoch);
            fmt_f(&mut out, p.x);
            for ms in p.fields {
                out.push(',');
                fmt_f(&mut out, ms.mean);
                out.push(',');
                fmt_f(&mut out, ms.std);
            }
            out.push('\n');
        }
    }
    out
}

/// A row of a per-seed trace file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub seed: u64,
    pub epoch: usize,
    pub point: TracePoint,
}

/// Parses a per-seed trace CSV as written by [`traces_to_csv`].
pub fn traces_from_csv<R: std::io::Read>(reader: R, origin: &str) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(origin, e.position().map(|p| p.line()).unwrap_or(1), e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != trace_csv_header() {
        return Err(Error::parse(origin, 1, format!("unexpected trace header `{header}`")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(origin, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str, field: &str| Error::parse(origin, line, format!("invalid {what} `{field}`"));
        let seed = rec[0].parse().map_err(|_| bad("seed", &rec[0]))?;
        let epoch = rec[1].parse().map_err(|_| bad("epoch", &rec[1]))?;
        let x: f64 = rec[2].parse().map_err(|_| bad("x", &rec[2]))?;
        let mut f = [0.0; 12];
        for (k, v) in f.iter_mut().enumerate() {
            *v = rec[3 + k].parse().map_err(|_| bad(TRACE_FIELDS[k], &rec[3 + k]))?;
        }
        rows.push(TraceRow {
            seed,
            epoch,
            point: TracePoint::from_fields(x, f),
        });
    }
    Ok(rows)
}

/// Regroups parsed rows into per-seed traces (seed order of first appearance).
pub fn group_trace_rows(rows: &[TraceRow]) -> Vec<(u64, Vec<EpochTrace>)> {
    let mut out: Vec<(u64, Vec<EpochTrace>)> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|(s, _)| *s == r.seed) {
            Some(i) => i,
            None => {
                out.push((r.seed, Vec::new()));
                out.len() - 1
            }
        };
        let traces = &mut out[idx].1;
        match traces.last_mut() {
            Some(t) if t.epoch == r.epoch => t.points.push(r.point),
            _ => traces.push(EpochTrace {
                epoch: r.epoch,
                points: vec![r.point],
            }),
        }
    }
    out
}
