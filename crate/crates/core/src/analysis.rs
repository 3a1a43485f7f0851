//! Post-hoc metrics: calibration, cutoff curves, entropy summaries and the
//! binary-pulse asymmetry ratio.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::uncertainty::entropy;

/// Standard normal quantile.
///
/// Delegates to statrs, which inverts the complementary error function to
/// near machine precision.
pub fn inverse_normal_cdf(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile level must lie in (0, 1), got {q}"
        )));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(q))
}

/// Levels 0.05, 0.10, ..., 0.95.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    pub expected_cl: Vec<f64>,
    pub observed_cl: Vec<f64>,
}

impl CalibrationCurve {
    pub fn max_abs_deviation(&self) -> f64 {
        self.expected_cl
            .iter()
            .zip(&self.observed_cl)
            .map(|(e, o)| (e - o).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("expected_cl,observed_cl\n");
        for (e, o) in self.expected_cl.iter().zip(&self.observed_cl) {
            let _ = writeln!(out, "{e:?},{o:?}");
        }
        out
    }
}

/// Fraction of targets at or below the level-`q` upper bound of each
/// predicted normal, for every `q` in `levels`.
pub fn calibration_curve(mus: &[f64], sigmas: &[f64], ys: &[f64], levels: &[f64]) -> Result<CalibrationCurve> {
    if mus.is_empty() {
        return Err(Error::Empty("calibration inputs"));
    }
    same_len(mus.len(), sigmas.len())?;
    same_len(mus.len(), ys.len())?;
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive and finite, got {s}"
        )));
    }
    let n = mus.len() as f64;
    let mut observed = Vec::with_capacity(levels.len());
    for &q in levels {
        let z = inverse_normal_cdf(q)?;
        let hits = mus
            .iter()
            .zip(sigmas)
            .zip(ys)
            .filter(|((m, s), y)| **y <= *m + *s * z)
            .count();
        observed.push(hits as f64 / n);
    }
    Ok(CalibrationCurve {
        expected_cl: levels.to_vec(),
        observed_cl: observed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMetric {
    #[default]
    Absolute,
    Squared,
}

impl ErrorMetric {
    pub fn apply(self, residual: f64) -> f64 {
        match self {
            ErrorMetric::Absolute => residual.abs(),
            ErrorMetric::Squared => residual * residual,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorMetric::Absolute => "absolute",
            ErrorMetric::Squared => "squared",
        }
    }
}

impl FromStr for ErrorMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" | "abs" => Ok(ErrorMetric::Absolute),
            "squared" | "sq" => Ok(ErrorMetric::Squared),
            other => Err(Error::InvalidParameter(format!(
                "unknown error metric `{other}` (expected absolute or squared)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffCurve {
    /// Fraction of points kept, lowest uncertainty first.
    pub retained_fraction: Vec<f64>,
    pub error_on_retained: Vec<f64>,
    pub metric: ErrorMetric,
}

impl CutoffCurve {
    pub fn to_csv(&self) -> String {
        let mut out = format!("retained_fraction,removed_fraction,{}_error\n", self.metric.as_str());
        for (f, e) in self.retained_fraction.iter().zip(&self.error_on_retained) {
            let _ = writeln!(out, "{f:?},{:?},{e:?}", 1.0 - f);
        }
        out
    }
}

/// Mean error over the `⌈f·n⌉` least uncertain points for each fraction `f`.
///
/// Ties in uncertainty are broken by `xs`, then by input order.
pub fn cutoff_curve(
    residuals: &[f64],
    uncertainties: &[f64],
    xs: &[f64],
    fractions: &[f64],
    metric: ErrorMetric,
) -> Result<CutoffCurve> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::Empty("cutoff inputs"));
    }
    same_len(n, uncertainties.len())?;
    same_len(n, xs.len())?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        uncertainties[a]
            .total_cmp(&uncertainties[b])
            .then(xs[a].total_cmp(&xs[b]))
    });
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &i in &order {
        acc += metric.apply(residuals[i]);
        prefix.push(acc);
    }
    let mut errors = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "retained fraction must lie in (0, 1], got {f}"
            )));
        }
        let k = ((f * n as f64).ceil() as usize).clamp(1, n);
        errors.push(prefix[k] / k as f64);
    }
    Ok(CutoffCurve {
        retained_fraction: fractions.to_vec(),
        error_on_retained: errors,
        metric,
    })
}

/// Ratio of the mean of `values` on `(center+gap, center+window]` to the
/// mean on `[center−window, center−gap)`.
///
/// `gap` keeps the peak itself out of both sides.
pub fn pulse_asymmetry(xs: &[f64], values: &[f64], center: f64, window: f64, gap: f64) -> Result<f64> {
    same_len(xs.len(), values.len())?;
    if !(window > gap && gap >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= gap < window, got gap {gap}, window {window}"
        )));
    }
    let side = |right: bool| {
        let (sum, count) = xs
            .iter()
            .zip(values)
            .filter(|(x, _)| {
                let d = if right { **x - center } else { center - **x };
                d > gap && d <= window
            })
            .fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
        if count == 0 {
            Err(Error::Empty(if right {
                "right asymmetry window"
            } else {
                "left asymmetry window"
            }))
        } else {
            Ok(sum / count as f64)
        }
    };
    Ok(side(true)? / side(false)?)
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const SUMMARY_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct EntropySummary {
    pub cohort: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Aligned with [`SUMMARY_QUANTILES`].
    pub quantiles: [f64; 5],
}

/// Distribution of `log(2πσ²)/2` within each cohort.
pub fn entropy_summary(cohorts: &[(String, Vec<f64>)]) -> Result<Vec<EntropySummary>> {
    if cohorts.is_empty() {
        return Err(Error::Empty("entropy cohorts"));
    }
    cohorts
        .iter()
        .map(|(name, sigmas)| {
            if sigmas.is_empty() {
                return Err(Error::Empty("entropy cohort"));
            }
            if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0)) {
                return Err(Error::InvalidParameter(format!("sigma must be positive, got {s}")));
            }
            let mut h: Vec<f64> = sigmas.iter().map(|&s| entropy(s)).collect();
            h.sort_by(f64::total_cmp);
            let n = h.len() as f64;
            let mean = h.iter().sum::<f64>() / n;
            let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            Ok(EntropySummary {
                cohort: name.clone(),
                count: h.len(),
                mean,
                std: var.sqrt(),
                min: h[0],
                max: h[h.len() - 1],
                quantiles: SUMMARY_QUANTILES.map(|q| quantile_sorted(&h, q)),
            })
        })
        .collect()
}

pub fn entropy_summary_csv(summaries: &[EntropySummary]) -> String {
    let mut out = String::from("cohort,count,mean,std,min,q05,q25,q50,q75,q95,max\n");
    for s in summaries {
        let _ = write!(out, "{},{},{:?},{:?},{:?}", s.cohort, s.count, s.mean, s.std, s.min);
        for q in s.quantiles {
            let _ = write!(out, ",{q:?}");
        }
        let _ = writeln!(out, ",{:?}", s.max);
    }
    out
}

fn same_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn cohort(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu_d = Uniform::new(-5.0, 5.0).unwrap();
        let s_d = Uniform::new(0.1, 3.0).unwrap();
        let mut mus = Vec::with_capacity(n);
        let mut sigmas = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let m = mu_d.sample(&mut rng);
            let s = s_d.sample(&mut rng);
            let z: f64 = StandardNormal.sample(&mut rng);
            mus.push(m);
            sigmas.push(s);
            ys.push(m + s * z);
        }
        (mus, sigmas, ys)
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        assert!((inverse_normal_cdf(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!((inverse_normal_cdf(0.05).unwrap() + 1.6448536269514722).abs() < 1e-12);
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
    }

    #[test]
    fn well_specified_cohort_is_calibrated() {
        let (m, s, y) = cohort(100_000, 11);
        let c = calibration_curve(&m, &s, &y, &default_levels()).unwrap();
        assert!(c.max_abs_deviation() < 0.02, "{c:?}");
    }

    #[test]
    fn median_level_hits_half() {
        let (m, _, y) = cohort(100_000, 12);
        let s = vec![7.0; m.len()];
        let c = calibration_curve(&m, &s, &y, &[0.5]).unwrap();
        assert!((c.observed_cl[0] - 0.5).abs() < 0.01);
    }

    #[test]
    fn halved_sigmas_are_overconfident() {
        let (m, s, y) = cohort(100_000, 13);
        let half: Vec<f64> = s.iter().map(|v| v / 2.0).collect();
        let c = calibration_curve(&m, &half, &y, &default_levels()).unwrap();
        for (e, o) in c.expected_cl.iter().zip(&c.observed_cl) {
            if *e > 0.5 + 1e-9 {
                assert!(o < e, "{e} {o}");
            }
        }
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(calibration_curve(&[], &[], &[], &[0.5]), Err(Error::Empty(_))));
        assert!(calibration_curve(&[0.0], &[0.0], &[0.0], &[0.5]).is_err());
        assert!(calibration_curve(&[0.0], &[1.0, 2.0], &[0.0], &[0.5]).is_err());
        assert!(calibration_curve(&[0.0], &[1.0], &[0.0], &[1.5]).is_err());
    }

    #[test]
    fn constant_uncertainty_gives_flat_cutoff() {
        let r: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let u = vec![1.0; 100];
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let c = cutoff_curve(&r, &u, &xs, &[1.0], ErrorMetric::Absolute).unwrap();
        let global = r.iter().map(|v| v.abs()).sum::<f64>() / 100.0;
        assert_eq!(c.error_on_retained[0], global);
    }

    #[test]
    fn uncertainty_equal_to_error_is_monotone() {
        let r: Vec<f64> = (0..200).map(|i| (i as f64 * 1.3).cos() * 2.0).collect();
        let u: Vec<f64> = r.iter().map(|v| v.abs()).collect();
        let xs = vec![0.0; 200];
        let fr: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
        let c = cutoff_curve(&r, &u, &xs, &fr, ErrorMetric::Absolute).unwrap();
        assert!(c.error_on_retained.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn independent_uncertainty_gives_flat_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let r: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let xs = vec![0.0; n];
        let fr = [0.1, 0.25, 0.5, 0.75, 1.0];
        let c = cutoff_curve(&r, &u, &xs, &fr, ErrorMetric::Absolute).unwrap();
        let abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
        let mean = abs.iter().sum::<f64>() / n as f64;
        let sd = (abs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for (f, e) in fr.iter().zip(&c.error_on_retained) {
            let k = (f * n as f64).ceil();
            // sampling without replacement
            let se = sd / k.sqrt() * ((n as f64 - k) / (n as f64 - 1.0)).sqrt();
            assert!((e - mean).abs() <= 3.0 * se + 1e-12, "{f} {e} {mean} {se}");
        }
    }

    #[test]
    fn cutoff_tie_break_is_deterministic() {
        let r = [1.0, 2.0, 3.0];
        let u = [0.5, 0.5, 0.5];
        let c = cutoff_curve(&r, &u, &[2.0, 0.0, 1.0], &[0.34], ErrorMetric::Squared).unwrap();
        // x=0 (second point) comes first: ceil(0.34*3)=2 points, residuals 2 and 3
        assert_eq!(c.error_on_retained[0], (4.0 + 9.0) / 2.0);
    }

    #[test]
    fn cutoff_errors() {
        assert!(cutoff_curve(&[], &[], &[], &[1.0], ErrorMetric::Absolute).is_err());
        assert!(cutoff_curve(&[1.0], &[1.0], &[0.0], &[0.0], ErrorMetric::Absolute).is_err());
        assert!(cutoff_curve(&[1.0], &[1.0, 2.0], &[0.0], &[1.0], ErrorMetric::Absolute).is_err());
        assert_eq!("squared".parse::<ErrorMetric>().unwrap(), ErrorMetric::Squared);
        assert!("l3".parse::<ErrorMetric>().is_err());
    }

    fn symmetric_grid() -> Vec<f64> {
        (0..=200).map(|i| i as f64 / 200.0).collect()
    }

    #[test]
    fn symmetric_curve_has_unit_ratio() {
        let xs = symmetric_grid();
        let v: Vec<f64> = xs.iter().map(|x| 1.0 + (x - 0.5).abs()).collect();
        let r = pulse_asymmetry(&xs, &v, 0.5, 0.25, 0.02).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubled_right_side() {
        let xs = symmetric_grid();
        let v: Vec<f64> = xs.iter().map(|&x| if x > 0.5 { 2.0 } else { 1.0 }).collect();
        assert!((pulse_asymmetry(&xs, &v, 0.5, 0.25, 0.02).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetry_errors() {
        let xs = [0.1, 0.2];
        assert!(matches!(
            pulse_asymmetry(&xs, &[1.0, 1.0], 0.5, 0.25, 0.0),
            Err(Error::Empty(_))
        ));
        assert!(pulse_asymmetry(&xs, &[1.0, 1.0], 0.5, 0.1, 0.2).is_err());
    }

    #[test]
    fn unit_sigma_entropy() {
        let s = entropy_summary(&[("a".into(), vec![1.0; 10])]).unwrap();
        assert!((s[0].mean - 0.918939).abs() < 1e-6);
        assert_eq!(s[0].max - s[0].min, 0.0);
        assert!(s[0].std < 1e-15);
        assert_eq!(s[0].quantiles[0], s[0].quantiles[4]);
    }

    #[test]
    fn doubled_cohort_shifts_by_log_two() {
        let a: Vec<f64> = (1..50).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = a.iter().map(|v| v * 2.0).collect();
        let s = entropy_summary(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert!((s[1].mean - s[0].mean - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(entropy_summary_csv(&s).lines().count() == 3);
    }

    #[test]
    fn entropy_errors() {
        assert!(entropy_summary(&[]).is_err());
        assert!(entropy_summary(&[("a".into(), vec![])]).is_err());
        assert!(entropy_summary(&[("a".into(), vec![0.0])]).is_err());
    }

    #[test]
    fn csv_headers() {
        let c = CalibrationCurve {
            expected_cl: vec![0.5],
            observed_cl: vec![0.4],
        };
        assert_eq!(c.to_csv(), "expected_cl,observed_cl\n0.5,0.4\n");
        let k = cutoff_curve(&[1.0], &[1.0], &[0.0], &[1.0], ErrorMetric::Absolute).unwrap();
        assert!(k
            .to_csv()
            .starts_with("retained_fraction,removed_fraction,absolute_error\n"));
    }

    proptest! {
        #[test]
        fn calibration_is_monotone(seed in 0u64..1000, n in 1usize..200) {
            let (m, s, y) = cohort(n, seed);
            let c = calibration_curve(&m, &s, &y, &default_levels()).unwrap();
            prop_assert!(c.observed_cl.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.observed_cl.iter().all(|o| (0.0..=1.0).contains(o)));
        }

        #[test]
        fn full_retention_is_global_mean(r in proptest::collection::vec(-10.0f64..10.0, 1..100), seed in 0u64..100) {
            let n = r.len();
            let u: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 13) as f64).collect();
            let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let c = cutoff_curve(&r, &u, &xs, &[1.0], ErrorMetric::Absolute).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(xs[a].total_cmp(&xs[b])));
            let direct = order.iter().map(|&i| r[i].abs()).sum::<f64>() / n as f64;
            prop_assert_eq!(c.error_on_retained[0], direct);
        }

        #[test]
        fn asymmetry_scale_invariant(scale in 1e-3f64..1e3, tilt in 0.1f64..3.0) {
            let xs = symmetric_grid();
            let v: Vec<f64> = xs.iter().map(|&x| 1.0 + tilt * x).collect();
            let w: Vec<f64> = v.iter().map(|a| a * scale).collect();
            let a = pulse_asymmetry(&xs, &v, 0.5, 0.25, 0.02).unwrap();
            let b = pulse_asymmetry(&xs, &w, 0.5, 0.25, 0.02).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }
}
