use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use derlab::analysis::{
    calibration_curve, cutoff_curve, default_levels, entropy_summary, pulse_asymmetry, CalibrationCurve,
};
use derlab::data::{CubicSpec, Dataset, GeneratorSpec};
use derlab::experiment::{
    aggregate_to_csv, aggregate_traces, evaluate_grid, group_trace_rows, multi_seed_with, predictions_to_csv, preset,
    trace_rows_to_csv, traces_from_csv, traces_to_csv, BatchSize, EpochTrace, Grid, GridPrediction, MultiSeedResult,
    TrainConfig,
};
use derlab::losses::HeadKind;
use derlab::network::{Activation, Architecture, Parameters};
use derlab::optim::{AdamSettings, OptimizerConfig};
use derlab::uncertainty::Convention;

use crate::manifest::RunDir;
use crate::{
    AnalyzeArgs, EvaluateArgs, GenerateArgs, GeneratorName, HeadName, OptimizerName, TraceExportArgs, TraceOutput,
    TrainArgs, VerifyArgs,
};

pub const CONFIG_FILE: &str = "config.toml";

pub fn generate(args: &GenerateArgs, out_root: &Path) -> Result<()> {
    let spec = match args.generator {
        GeneratorName::Cubic => GeneratorSpec::Cubic(CubicSpec {
            n: args.n,
            x_lo: args.x_lo,
            x_hi: args.x_hi,
            noise_std: args.noise_std,
        }),
        GeneratorName::Pulse => GeneratorSpec::Pulse { n: args.n },
    };
    let data = spec.generate(args.seed)?;
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| out_root.join("data").join(format!("{}-{}.csv", spec.name(), args.seed)));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    data.save(&path)?;
    println!("wrote {} ({} rows)", path.display(), data.len());
    Ok(())
}

/// Preset or config file, then command-line overrides.
pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => preset(&args.preset).context("unknown preset")?,
    };
    if let Some(k) = args.loss {
        cfg.loss.kind = k;
    }
    if let Some(l) = args.lambda {
        cfg.loss.lambda = l;
    }
    if let Some(p) = args.p {
        cfg.loss.p = p;
    }
    if let Some(phi) = args.phi {
        cfg.loss.phi = phi;
    }
    if args.detach_width {
        cfg.loss.detach_width = true;
    }
    let lr = args.lr.unwrap_or(cfg.optimizer.learning_rate());
    match args.optimizer {
        Some(OptimizerName::Adam) if !matches!(cfg.optimizer, OptimizerConfig::Adam(_)) => {
            cfg.optimizer = OptimizerConfig::Adam(AdamSettings::with_learning_rate(lr));
        }
        Some(OptimizerName::Momentum) => {
            cfg.optimizer = OptimizerConfig::Momentum {
                learning_rate: lr,
                momentum: args.momentum,
            };
        }
        _ => {}
    }
    match &mut cfg.optimizer {
        OptimizerConfig::Adam(s) => {
            s.learning_rate = lr;
            if args.decay.is_some() {
                s.decay = args.decay;
            }
        }
        OptimizerConfig::Momentum { learning_rate, .. } => {
            *learning_rate = lr;
            if args.decay.is_some() {
                bail!("--decay only applies to Adam");
            }
        }
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = &args.batch_size {
        cfg.batch_size = parse_batch(b)?;
    }
    if args.hidden.is_some() || args.activation.is_some() {
        let widths = args
            .hidden
            .clone()
            .unwrap_or_else(|| cfg.arch.hidden.iter().map(|h| h.width).collect());
        let act = args
            .activation
            .or(cfg.arch.hidden.first().map(|h| h.activation))
            .unwrap_or(Activation::Tanh);
        cfg.arch = Architecture::mlp(&widths, act);
    }
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(list) = &args.seed_list {
        cfg.seeds = list.clone();
    }
    if let Some(t) = args.trace_every {
        cfg.trace_every = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_batch(s: &str) -> Result<BatchSize> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(BatchSize::Full);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(BatchSize::Size(n)),
        _ => bail!("batch size must be `full` or a positive integer, got `{s}`"),
    }
}

/// Installs a thread pool of `jobs` workers (0 = rayon default) around `f`.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

pub fn train(args: &TrainArgs, out_root: &Path) -> Result<()> {
    let cfg = resolve_config(args)?;
    let dataset = match &args.data {
        Some(p) => Some(Dataset::load(p)?),
        None => None,
    };
    let name = if args.config.is_some() {
        "train".to_string()
    } else {
        args.preset.clone()
    };
    let out = args.out.clone().unwrap_or_else(|| out_root.join(name));
    let mut dir = RunDir::create(&out)?;
    let result = with_jobs(args.jobs, || multi_seed_with(&cfg, dataset.as_ref()))??;
    if result.runs.is_empty() {
        bail!("all {} seeds failed: {:?}", result.failures.len(), result.failures);
    }
    if let Some(d) = &dataset {
        dir.write("data.csv", d.to_csv_string())?;
        dir.write("data.meta.toml", d.meta_to_toml())?;
    }
    write_run(&mut dir, &cfg, &result, args.traces)?;
    for r in &result.runs {
        println!(
            "seed {:>3}: final loss {:.4} ({:.1}s)",
            r.seed,
            r.epoch_loss.last().copied().unwrap_or(f64::NAN),
            r.wall_clock_secs
        );
    }
    report_failures(&result);
    let config_path = args.config.as_deref();
    dir.finish(config_path)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn report_failures(result: &MultiSeedResult) {
    if !result.failures.is_empty() {
        eprintln!("{} seed(s) failed and were excluded:", result.failures.len());
        for (seed, msg) in &result.failures {
            eprintln!("  seed {seed}: {msg}");
        }
    }
}

pub fn write_run(dir: &mut RunDir, cfg: &TrainConfig, result: &MultiSeedResult, traces: TraceOutput) -> Result<()> {
    dir.write(CONFIG_FILE, cfg.to_toml())?;
    let mut losses = String::from("seed,epoch,loss\n");
    for r in &result.runs {
        dir.write(&format!("seed-{}.ckpt", r.seed), r.params.to_checkpoint_string())?;
        for (e, l) in r.epoch_loss.iter().enumerate() {
            let _ = writeln!(losses, "{},{},{l:?}", r.seed, e + 1);
        }
    }
    dir.write("losses.csv", losses)?;
    let tables: Vec<(u64, &[GridPrediction])> =
        result.runs.iter().map(|r| (r.seed, r.predictions.as_slice())).collect();
    dir.write("predictions.csv", predictions_to_csv(&tables))?;
    if cfg.trace_every > 0 {
        dir.write("aggregate.csv", aggregate_to_csv(&result.aggregate))?;
        if traces == TraceOutput::PerSeed {
            dir.write("traces.csv", traces_to_csv(&result.runs))?;
        }
    }
    if !result.failures.is_empty() {
        let mut f = String::from("seed,reason\n");
        for (s, m) in &result.failures {
            let _ = writeln!(f, "{s},\"{}\"", m.replace('"', "'"));
        }
        dir.write("failures.csv", f)?;
    }
    Ok(())
}

/// Config plus `(seed, parameters)` for every checkpoint of a run directory.
pub fn load_run(run: &Path) -> Result<(TrainConfig, Vec<(u64, Parameters)>)> {
    let cfg = TrainConfig::load(run.join(CONFIG_FILE))
        .with_context(|| format!("{} is not a run directory", run.display()))?;
    let mut models = Vec::new();
    for seed in &cfg.seeds {
        let path = run.join(format!("seed-{seed}.ckpt"));
        if path.exists() {
            models.push((*seed, Parameters::load(&path)?));
        }
    }
    if models.is_empty() {
        bail!("no checkpoints found in {}", run.display());
    }
    Ok((cfg, models))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let (models, head, default_grid, default_out) = match (&args.run, &args.checkpoint) {
        (Some(run), _) => {
            let (cfg, models) = load_run(run)?;
            (models, cfg.loss.kind.head(), cfg.eval_grid, run.join("evaluation.csv"))
        }
        (None, Some(ckpt)) => {
            let head = match args.head {
                HeadName::Evidential => HeadKind::Evidential,
                HeadName::Gaussian => HeadKind::Gaussian,
            };
            (
                vec![(0, Parameters::load(ckpt)?)],
                head,
                Grid::new(-7.0, 7.0, 141),
                ckpt.with_extension("csv"),
            )
        }
        (None, None) => bail!("either --run or --checkpoint is required"),
    };
    let grid = Grid::new(
        args.lo.unwrap_or(default_grid.lo),
        args.hi.unwrap_or(default_grid.hi),
        args.points.unwrap_or(default_grid.points),
    );
    if grid.lo.is_nan() || grid.hi.is_nan() || grid.lo > grid.hi {
        bail!("grid bounds reversed: [{}, {}]", grid.lo, grid.hi);
    }
    let xs = grid.values();
    let tables: Vec<(u64, Vec<GridPrediction>)> =
        models.iter().map(|(s, p)| (*s, evaluate_grid(p, head, &xs))).collect();
    let refs: Vec<(u64, &[GridPrediction])> = tables.iter().map(|(s, t)| (*s, t.as_slice())).collect();
    let out = args.out.clone().unwrap_or(default_out);
    fs::write(&out, predictions_to_csv(&refs)).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn conventions(head: HeadKind) -> &'static [Convention] {
    match head {
        HeadKind::Evidential => &[Convention::Sota, Convention::Proposed],
        HeadKind::Gaussian => &[Convention::Gaussian],
    }
}

fn calibration_selftest(n: usize, seed: u64) -> Result<CalibrationCurve> {
    // Targets drawn from exactly the predicted normals.
    let spec = GeneratorSpec::Cubic(CubicSpec {
        n,
        ..Default::default()
    });
    let data = spec.generate(seed)?;
    let mus: Vec<f64> = data.samples.iter().map(|s| s.x.powi(3)).collect();
    let sigmas = vec![3.0; n];
    Ok(calibration_curve(&mus, &sigmas, &data.ys(), &default_levels())?)
}

#[derive(Clone, Copy)]
struct HeldOut {
    x: f64,
    y: f64,
    mu: f64,
    truth: f64,
    aleatoric: f64,
    epistemic: f64,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    if args.selftest {
        let curve = calibration_selftest(args.n, args.test_seed)?;
        let dev = curve.max_abs_deviation();
        let out = args
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("calibration_selftest.csv"));
        fs::write(&out, curve.to_csv())?;
        println!(
            "calibration self-test: max |observed - expected| = {dev:.4} over n = {}",
            args.n
        );
        if dev >= 0.02 {
            bail!("self-test failed: deviation {dev:.4} >= 0.02");
        }
        return Ok(());
    }
    let run = args.run.as_ref().context("--run is required")?;
    let (cfg, models) = load_run(run)?;
    let head = cfg.loss.kind.head();
    let convs = conventions(head);
    let out = args.out.clone().unwrap_or_else(|| run.join("analysis"));
    let mut dir = RunDir::create(&out)?;

    // Held-out samples for calibration and cutoff.
    let mut per_conv: Vec<Vec<HeldOut>> = vec![Vec::new(); convs.len()];
    for (seed, params) in &models {
        let test = cfg.data.generate(args.test_seed.wrapping_add(*seed))?;
        let preds = evaluate_grid(params, head, &test.xs());
        for (p, s) in preds.iter().zip(&test.samples) {
            let truth = s.true_mean.unwrap_or(s.y);
            for (k, c) in convs.iter().enumerate() {
                let e = p.estimate(*c).expect("convention matches head");
                per_conv[k].push(HeldOut {
                    x: p.x,
                    y: s.y,
                    mu: e.prediction,
                    truth,
                    aleatoric: e.aleatoric,
                    epistemic: e.epistemic,
                });
            }
        }
    }

    let mut calib = String::from("convention,sigma,expected_cl,observed_cl\n");
    let mut cutoff = format!(
        "convention,uncertainty,retained_fraction,removed_fraction,{}_error\n",
        args.metric.as_str()
    );
    let fractions: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
    for (k, c) in convs.iter().enumerate() {
        let rows = &per_conv[k];
        let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let mus: Vec<f64> = rows.iter().map(|r| r.mu).collect();
        let residuals: Vec<f64> = rows.iter().map(|r| r.mu - r.truth).collect();
        for (label, epistemic) in [("aleatoric", false), ("epistemic", true)] {
            let sigmas: Vec<f64> = rows
                .iter()
                .map(|r| if epistemic { r.epistemic } else { r.aleatoric })
                .collect();
            let curve = calibration_curve(&mus, &sigmas, &ys, &default_levels())?;
            for (e, o) in curve.expected_cl.iter().zip(&curve.observed_cl) {
                let _ = writeln!(calib, "{c},{label},{e:?},{o:?}");
            }
            let cut = cutoff_curve(&residuals, &sigmas, &xs, &fractions, args.metric)?;
            for (f, e) in cut.retained_fraction.iter().zip(&cut.error_on_retained) {
                let _ = writeln!(cutoff, "{c},{label},{f:?},{:?},{e:?}", 1.0 - f);
            }
        }
    }
    dir.write("calibration.csv", calib)?;
    dir.write("cutoff.csv", cutoff)?;

    // Grid-based reports: entropy cohorts and pulse asymmetry.
    let xs = cfg.eval_grid.values();
    let tables: Vec<Vec<GridPrediction>> = models.iter().map(|(_, p)| evaluate_grid(p, head, &xs)).collect();
    let (lo, hi) = cfg.data.x_range();
    let mut entropy = String::from("convention,uncertainty,cohort,count,mean,std,min,q05,q25,q50,q75,q95,max\n");
    for c in convs {
        for (label, pick) in [("epistemic", true), ("aleatoric", false)] {
            let mut id = Vec::new();
            let mut ood = Vec::new();
            for t in &tables {
                for p in t {
                    let e = p.estimate(*c).expect("convention matches head");
                    let v = if pick { e.epistemic } else { e.aleatoric };
                    if p.x >= lo && p.x <= hi {
                        id.push(v);
                    } else {
                        ood.push(v);
                    }
                }
            }
            let mut cohorts = vec![("id".to_string(), id)];
            if !ood.is_empty() {
                cohorts.push(("ood".to_string(), ood));
            }
            for s in entropy_summary(&cohorts)? {
                let _ = write!(
                    entropy,
                    "{c},{label},{},{},{:?},{:?},{:?}",
                    s.cohort, s.count, s.mean, s.std, s.min
                );
                for q in s.quantiles {
                    let _ = write!(entropy, ",{q:?}");
                }
                let _ = writeln!(entropy, ",{:?}", s.max);
            }
        }
    }
    dir.write("entropy.csv", entropy)?;

    if let GeneratorSpec::Pulse { .. } = cfg.data {
        let mut asym = String::from("convention,window,gap,ratio\n");
        for c in convs {
            let curve = mean_curve(&tables, |p| p.estimate(*c).expect("convention matches head").epistemic);
            let r = pulse_asymmetry(&xs, &curve, derlab::data::PULSE_CENTER, args.window, args.gap)?;
            let _ = writeln!(asym, "{c},{:?},{:?},{r:?}", args.window, args.gap);
            println!("pulse asymmetry ({c}): R = {r:.4}");
        }
        dir.write("asymmetry.csv", asym)?;
    }
    dir.write(
        "analysis.toml",
        format!(
            "metric = \"{}\"\ntest_seed = {}\nwindow = {:?}\ngap = {:?}\nseeds = {}\n",
            args.metric.as_str(),
            args.test_seed,
            args.window,
            args.gap,
            models.len()
        ),
    )?;
    dir.finish(None)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Cross-seed mean of `f` at each grid point.
pub fn mean_curve(tables: &[Vec<GridPrediction>], f: impl Fn(&GridPrediction) -> f64) -> Vec<f64> {
    let n = tables.len() as f64;
    (0..tables[0].len())
        .map(|i| tables.iter().map(|t| f(&t[i])).sum::<f64>() / n)
        .collect()
}

pub fn trace_export(args: &TraceExportArgs) -> Result<()> {
    let file = fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut rows = traces_from_csv(file, &args.input.display().to_string())?;
    if let Some(epochs) = &args.epochs {
        let keep: BTreeSet<usize> = epochs.iter().copied().collect();
        rows.retain(|r| keep.contains(&r.epoch));
    }
    if let Some(xs) = &args.x {
        rows.retain(|r| xs.iter().any(|x| (r.point.x - x).abs() <= 1e-9 * x.abs().max(1.0)));
    }
    if rows.is_empty() {
        bail!("no trace rows left after filtering");
    }
    let text = if args.aggregate {
        let grouped = group_trace_rows(&rows);
        let traces: Vec<&[EpochTrace]> = grouped.iter().map(|(_, t)| t.as_slice()).collect();
        aggregate_to_csv(&aggregate_traces(&traces)?)
    } else {
        trace_rows_to_csv(&rows)
    };
    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, text)?;
    println!("wrote {} ({} rows in)", args.out.display(), rows.len());
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> Result<()> {
    let bad = crate::manifest::verify(&args.dir)?;
    if bad.is_empty() {
        println!("all artifacts match {}", crate::manifest::MANIFEST_FILE);
        Ok(())
    } else {
        for p in &bad {
            eprintln!("changed or missing: {p}");
        }
        bail!("{} artifact(s) do not match the manifest", bad.len())
    }
}
