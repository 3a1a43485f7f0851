//! Figure recipes for `derlab reproduce`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use derlab::analysis::pulse_asymmetry;
use derlab::data::PULSE_CENTER;
use derlab::experiment::{
    data_seed, multi_seed, preset, AggregateTrace, Grid, GridPrediction, MultiSeedResult, TrainConfig,
};
use derlab::uncertainty::Convention;

use crate::commands::{report_failures, with_jobs};
use crate::manifest::RunDir;
use crate::svg::{render, Panel, Series, Style};
use crate::{FigureId, ReproduceArgs};

/// x positions singled out in the ν and width-factor plots.
pub const FIG1_POSITIONS: [f64; 3] = [-4.0, 0.0, 4.0];
/// Epochs drawn as separate curves in the residual plot.
const FIG1A_EPOCHS: [usize; 7] = [0, 10, 25, 50, 100, 250, 500];
pub const ASYMMETRY_WINDOW: f64 = 0.25;
pub const ASYMMETRY_GAP: f64 = 0.02;
const VALLEY_WIDTH: f64 = 3.0;

impl FigureId {
    pub fn name(self) -> &'static str {
        match self {
            FigureId::Fig1a => "fig1a",
            FigureId::Fig1b => "fig1b",
            FigureId::Fig1c => "fig1c",
            FigureId::Fig2 => "fig2",
            FigureId::Pulse => "pulse",
            FigureId::Fig4 => "fig4",
            FigureId::Fig5 => "fig5",
        }
    }
}

struct Ctx<'a> {
    seeds: u64,
    jobs: usize,
    dir: &'a mut RunDir,
}

impl Ctx<'_> {
    fn train(&mut self, name: &str, tweak: impl FnOnce(&mut TrainConfig)) -> Result<MultiSeedResult> {
        let mut cfg = preset(name).context("unknown preset")?;
        cfg.seeds = (0..self.seeds).collect();
        tweak(&mut cfg);
        self.dir.write(&format!("config-{name}.toml"), cfg.to_toml())?;
        let result = with_jobs(self.jobs, || multi_seed(&cfg))??;
        report_failures(&result);
        if result.runs.is_empty() {
            anyhow::bail!("every seed of {name} failed");
        }
        Ok(result)
    }
}

pub fn reproduce(args: &ReproduceArgs, out_root: &Path) -> Result<()> {
    let id = args.figure;
    let out = args.out.clone().unwrap_or_else(|| out_root.join(id.name()));
    let mut dir = RunDir::create(&out)?;
    let mut ctx = Ctx {
        seeds: args.seeds.max(1),
        jobs: args.jobs,
        dir: &mut dir,
    };
    match id {
        FigureId::Fig1a | FigureId::Fig1b | FigureId::Fig1c => fig1(&mut ctx, id)?,
        FigureId::Fig2 => fig2(&mut ctx)?,
        FigureId::Pulse => pulse(&mut ctx)?,
        FigureId::Fig4 => fig4(&mut ctx)?,
        FigureId::Fig5 => fig5(&mut ctx)?,
    }
    dir.finish(None)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn training_support(cfg: &mut TrainConfig) {
    let (lo, hi) = cfg.data.x_range();
    cfg.trace_grid = Grid::new(lo, hi, 81);
    cfg.trace_every = 1;
}

fn nearest(points: &[f64], target: f64) -> usize {
    points
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(i, _)| i)
        .expect("non-empty grid")
}

fn field(agg: &AggregateTrace, i: usize, name: &str) -> (f64, f64) {
    let f = agg.points[i].field(name).expect("known trace field");
    (f.mean, f.std)
}

fn fig1(ctx: &mut Ctx, id: FigureId) -> Result<()> {
    let result = ctx.train("cubic-der", training_support)?;
    let agg = &result.aggregate;
    let xs: Vec<f64> = agg[0].points.iter().map(|p| p.x).collect();
    let picks: Vec<usize> = FIG1_POSITIONS.iter().map(|&x| nearest(&xs, x)).collect();
    match id {
        FigureId::Fig1a => {
            let mut csv = String::from("epoch,x,residual_mean,residual_std\n");
            for t in agg {
                for (i, p) in t.points.iter().enumerate() {
                    let (m, s) = field(t, i, "residual");
                    let _ = writeln!(csv, "{},{:?},{m:?},{s:?}", t.epoch, p.x);
                }
            }
            ctx.dir.write("fig1a.csv", csv)?;
            let mut panel = Panel::new("Evolution of residual", "x", "γ − x³");
            for e in FIG1A_EPOCHS {
                if let Some(t) = agg.iter().find(|t| t.epoch == e) {
                    let pts = (0..xs.len()).map(|i| (xs[i], field(t, i, "residual").0)).collect();
                    panel = panel.push(Series::line(format!("epoch {e}"), pts));
                }
            }
            ctx.dir.write("fig1a.svg", render(&[panel], 1))?;
        }
        FigureId::Fig1b => {
            let mut csv = String::from("x,epoch,residual_mean,residual_std,nu_mean,nu_std\n");
            let mut panel = Panel::new("Evolution of ν w.r.t. residual", "γ − x³", "ν").log_y();
            for &i in &picks {
                let mut line = Vec::new();
                for t in agg {
                    let (rm, rs) = field(t, i, "residual");
                    let (nm, ns) = field(t, i, "nu");
                    let _ = writeln!(csv, "{:?},{},{rm:?},{rs:?},{nm:?},{ns:?}", xs[i], t.epoch);
                    line.push((rm, nm));
                }
                let dots = line.iter().step_by(10).copied().collect();
                panel = panel
                    .push(Series::line(format!("x = {}", xs[i]), line))
                    .push(Series::line("every 10 epochs", dots).styled(Style::Dots));
            }
            ctx.dir.write("fig1b.csv", csv)?;
            ctx.dir.write("fig1b.svg", render(&[panel], 1))?;
        }
        _ => {
            let mut csv = String::from(
                "x,epoch,sqrt_beta_over_alpha_mean,sqrt_beta_over_alpha_std,sqrt_nu_over_1p_nu_mean,sqrt_nu_over_1p_nu_std,w_st_mean\n",
            );
            let mut panel = Panel::new("Evolution of the factors of w_St", "√(ν/(1+ν))", "√(β/α)");
            let mut right = 0.0f64;
            for &i in &picks {
                let mut line = Vec::new();
                for t in agg {
                    let (bm, bs) = field(t, i, "sqrt_beta_over_alpha");
                    let (nm, ns) = field(t, i, "sqrt_nu_over_1p_nu");
                    let (wm, _) = field(t, i, "w_st");
                    let _ = writeln!(csv, "{:?},{},{bm:?},{bs:?},{nm:?},{ns:?},{wm:?}", xs[i], t.epoch);
                    line.push((nm, bm));
                    right = right.max(nm);
                }
                let dots = line.iter().step_by(10).copied().collect();
                panel = panel
                    .push(Series::line(format!("x = {}", xs[i]), line))
                    .push(Series::line("every 10 epochs", dots).styled(Style::Dots));
            }
            let valley = vec![(0.0, 0.0), (right, VALLEY_WIDTH * right)];
            panel = panel.push(Series::line(format!("w_St = {VALLEY_WIDTH}"), valley).styled(Style::Dashed));
            ctx.dir.write("fig1c.csv", csv)?;
            ctx.dir.write("fig1c.svg", render(&[panel], 1))?;
        }
    }
    Ok(())
}

/// Mean and sample std across seeds of `f` at every grid point.
fn band(result: &MultiSeedResult, f: impl Fn(&GridPrediction) -> f64) -> Vec<(f64, f64, f64)> {
    let runs = &result.runs;
    let n = runs.len() as f64;
    (0..runs[0].predictions.len())
        .map(|i| {
            let vals: Vec<f64> = runs.iter().map(|r| f(&r.predictions[i])).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let std = if runs.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (runs[0].predictions[i].x, mean, std)
        })
        .collect()
}

struct Summary {
    label: String,
    convention: Convention,
    gamma: Vec<(f64, f64, f64)>,
    aleatoric: Vec<(f64, f64, f64)>,
    epistemic: Vec<(f64, f64, f64)>,
}

fn summarize(label: &str, result: &MultiSeedResult, c: Convention) -> Summary {
    let get = |p: &GridPrediction| *p.estimate(c).expect("convention matches head");
    Summary {
        label: label.to_string(),
        convention: c,
        gamma: band(result, |p| get(p).prediction),
        aleatoric: band(result, |p| get(p).aleatoric),
        epistemic: band(result, |p| get(p).epistemic),
    }
}

fn summary_csv(first_col: &str, summaries: &[Summary]) -> String {
    let mut csv = format!(
        "{first_col},convention,x,gamma_mean,gamma_std,aleatoric_mean,aleatoric_std,epistemic_mean,epistemic_std\n"
    );
    for s in summaries {
        for i in 0..s.gamma.len() {
            let (x, gm, gs) = s.gamma[i];
            let (_, am, as_) = s.aleatoric[i];
            let (_, em, es) = s.epistemic[i];
            let _ = writeln!(
                csv,
                "{},{},{x:?},{gm:?},{gs:?},{am:?},{as_:?},{em:?},{es:?}",
                s.label, s.convention
            );
        }
    }
    csv
}

fn with_band(label: &str, b: &[(f64, f64, f64)]) -> Series {
    Series::line(label, b.iter().map(|(x, m, _)| (*x, *m)).collect())
        .with_band(b.iter().map(|(x, m, s)| (*x, m - s, m + s)).collect())
}

fn uncertainty_panel(title: &str, s: &Summary, log_y: bool) -> Panel {
    let p = Panel::new(title, "x", "uncertainty")
        .push(with_band("aleatoric", &s.aleatoric))
        .push(with_band("epistemic", &s.epistemic));
    if log_y {
        p.log_y()
    } else {
        p
    }
}

fn fig2(ctx: &mut Ctx) -> Result<()> {
    let no_traces = |c: &mut TrainConfig| c.trace_every = 0;
    let der = ctx.train("cubic-der", no_traces)?;
    let gauss = ctx.train("cubic-gaussian", no_traces)?;
    let panels = [
        summarize("sota", &der, Convention::Sota),
        summarize("proposed", &der, Convention::Proposed),
        summarize("gaussian-alt", &gauss, Convention::Gaussian),
    ];
    ctx.dir.write("fig2.csv", summary_csv("panel", &panels))?;
    let svg = render(
        &[
            uncertainty_panel("SOTA", &panels[0], false),
            uncertainty_panel("Proposed", &panels[1], false),
            uncertainty_panel("Alternative loss", &panels[2], false),
        ],
        3,
    );
    ctx.dir.write("fig2.svg", svg)?;
    Ok(())
}

fn pulse(ctx: &mut Ctx) -> Result<()> {
    let no_traces = |c: &mut TrainConfig| c.trace_every = 0;
    let der = ctx.train("pulse-der", no_traces)?;
    let gauss = ctx.train("pulse-gaussian", no_traces)?;
    let summaries = [
        summarize("der-original", &der, Convention::Sota),
        summarize("der-original", &der, Convention::Proposed),
        summarize("gaussian-alt", &gauss, Convention::Gaussian),
    ];
    ctx.dir.write("pulse.csv", summary_csv("loss", &summaries))?;

    let mut asym = String::from("loss,convention,window,gap,ratio,abs_ratio_minus_one\n");
    for s in &summaries[1..] {
        let xs: Vec<f64> = s.epistemic.iter().map(|b| b.0).collect();
        let ep: Vec<f64> = s.epistemic.iter().map(|b| b.1).collect();
        let r = pulse_asymmetry(&xs, &ep, PULSE_CENTER, ASYMMETRY_WINDOW, ASYMMETRY_GAP)?;
        let _ = writeln!(
            asym,
            "{},{},{ASYMMETRY_WINDOW:?},{ASYMMETRY_GAP:?},{r:?},{:?}",
            s.label,
            s.convention,
            (r - 1.0).abs()
        );
        println!("{} ({}): R = {r:.3}", s.label, s.convention);
    }
    ctx.dir.write("pulse_asymmetry.csv", asym)?;

    let cfg = preset("pulse-der").context("pulse preset")?;
    let data = cfg.data.generate(data_seed(0))?;
    ctx.dir.write("pulse_data.csv", data.to_csv_string())?;
    let dots = data.samples.iter().map(|s| (s.x, s.y)).collect();
    let mean = |s: &Summary| s.gamma.iter().map(|b| (b.0, b.1)).collect();
    let panels = [
        Panel::new("Data and prediction", "x", "y")
            .push(Series::line("data (seed 0)", dots).styled(Style::Dots))
            .push(Series::line("γ der-original", mean(&summaries[1])))
            .push(Series::line("γ gaussian-alt", mean(&summaries[2]))),
        uncertainty_panel("DER loss, proposed proxies", &summaries[1], true),
        uncertainty_panel("Alternative loss", &summaries[2], true),
    ];
    ctx.dir.write("pulse.svg", render(&panels, 3))?;
    Ok(())
}

fn fig4(ctx: &mut Ctx) -> Result<()> {
    let shown = ctx.seeds.min(9);
    let result = ctx.train("cubic-der", |c| {
        c.trace_every = 0;
        c.seeds = (0..shown).collect();
    })?;
    let mut csv = String::from("seed,x,gamma,u_al,u_ep\n");
    let mut panels = Vec::new();
    for r in &result.runs {
        let mut gamma = Vec::new();
        let mut al = Vec::new();
        let mut ep = Vec::new();
        let mut truth = Vec::new();
        for p in &r.predictions {
            let e = p.estimate(Convention::Sota).expect("evidential head");
            let _ = writeln!(
                csv,
                "{},{:?},{:?},{:?},{:?}",
                r.seed, p.x, e.prediction, e.aleatoric, e.epistemic
            );
            gamma.push((p.x, e.prediction));
            al.push((p.x, e.prediction - e.aleatoric, e.prediction + e.aleatoric));
            ep.push((p.x, e.prediction - e.epistemic, e.prediction + e.epistemic));
            truth.push((p.x, p.x.powi(3)));
        }
        panels.push(
            Panel::new(format!("seed {}", r.seed), "x", "y")
                .push(Series::line("x³", truth).styled(Style::Dashed))
                .push(Series::line("γ ± u_al", gamma.clone()).with_band(al))
                .push(Series::line("γ ± u_ep", gamma).with_band(ep)),
        );
    }
    ctx.dir.write("fig4.csv", csv)?;
    ctx.dir.write("fig4.svg", render(&panels, 3))?;
    Ok(())
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let mut pts = Vec::with_capacity(2 * bins);
    for (k, c) in counts.iter().enumerate() {
        pts.push((lo + k as f64 * width, *c as f64));
        pts.push((lo + (k + 1) as f64 * width, *c as f64));
    }
    pts
}

fn fig5(ctx: &mut Ctx) -> Result<()> {
    let result = ctx.train("cubic-der", training_support)?;
    let agg = &result.aggregate;
    let mut csv = String::from("epoch,x,alpha_mean,alpha_std,beta_mean,beta_std\n");
    for t in agg {
        for (i, p) in t.points.iter().enumerate() {
            let (am, as_) = field(t, i, "alpha");
            let (bm, bs) = field(t, i, "beta");
            let _ = writeln!(csv, "{},{:?},{am:?},{as_:?},{bm:?},{bs:?}", t.epoch, p.x);
        }
    }
    ctx.dir.write("fig5.csv", csv)?;
    let mut last = String::from("seed,x,alpha,beta\n");
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for r in &result.runs {
        let t = r.traces.last().expect("traced run");
        for p in &t.points {
            let _ = writeln!(last, "{},{:?},{:?},{:?}", r.seed, p.x, p.alpha, p.beta);
            alphas.push(p.alpha);
            betas.push(p.beta);
        }
    }
    ctx.dir.write("fig5_last_epoch.csv", last)?;

    let xs: Vec<f64> = agg[0].points.iter().map(|p| p.x).collect();
    let evolution = |name: &str, title: &str| {
        let mut panel = Panel::new(title, "epoch", name);
        for &x in &FIG1_POSITIONS {
            let i = nearest(&xs, x);
            let pts = agg.iter().map(|t| (t.epoch as f64, field(t, i, name).0)).collect();
            panel = panel.push(Series::line(format!("x = {}", xs[i]), pts));
        }
        panel
    };
    let panels = [
        evolution("alpha", "Evolution of α"),
        Panel::new("α in last epoch", "α", "count").push(Series::line("all x, all seeds", histogram(&alphas, 30))),
        evolution("beta", "Evolution of β"),
        Panel::new("β in last epoch", "β", "count").push(Series::line("all x, all seeds", histogram(&betas, 30))),
    ];
    ctx.dir.write("fig5.svg", render(&panels, 2))?;
    Ok(())
}
