//! Training losses.
//!
//! Every loss is built on a [`Tape`] from the head nodes of one sample, so
//! its gradient with respect to the head inputs (and, through the network,
//! the weights) comes from a single reverse sweep. Per-batch losses are the
//! mean of the per-sample values.
//!
//! The marginal likelihood of an observation under NIG(γ, ν, α, β) is a
//! Student-t with `2α` degrees of freedom, location γ and squared scale
//! `s² = β(1+ν)/(να)`. Writing `Ω = 2α s² = 2β(1+ν)/ν` its negative log is
//!
//! ```text
//! -log St = lnΓ(α) - lnΓ(α + ½) + ½ ln(π Ω) + (α + ½) ln(1 + (y - γ)² / Ω)
//! ```
//!
//! Along `β = cν/(1+ν)` the quantity `Ω = 2c` does not move, so the NLL is
//! flat in ν; [`degeneracy_path_nll`] evaluates exactly that path.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::{evidential_head, gaussian_head, GaussianNodes, NigNodes, NigParams, OUTPUT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Student-t NLL + λ|y−γ|Φ.
    DerOriginal,
    /// Student-t NLL + λ|(y−γ)/w_St|^p Φ.
    DerNormalized,
    /// log σ² + (1+λν)(y−γ)²/σ² with σ² = β/ν.
    GaussianAlt,
    /// Gaussian NLL + λ|y−γ|ν: the evidence term bolted onto a plain
    /// likelihood. Kept as a negative example; ν collapses under training.
    NaiveExtension,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::DerOriginal,
        LossKind::DerNormalized,
        LossKind::GaussianAlt,
        LossKind::NaiveExtension,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::DerOriginal => "der-original",
            LossKind::DerNormalized => "der-normalized",
            LossKind::GaussianAlt => "gaussian-alt",
            LossKind::NaiveExtension => "naive-extension",
        }
    }

    /// Which head transform the loss reads.
    pub fn head(self) -> HeadKind {
        match self {
            LossKind::DerOriginal | LossKind::DerNormalized => HeadKind::Evidential,
            LossKind::GaussianAlt | LossKind::NaiveExtension => HeadKind::Gaussian,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown loss `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Evidential,
    Gaussian,
}

/// Definition of the total evidence Φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiConvention {
    /// Φ = 2ν + α
    #[default]
    TwoNuPlusAlpha,
    /// Φ = ν + 2α
    NuPlusTwoAlpha,
}

impl PhiConvention {
    pub fn weights(self) -> (f64, f64) {
        match self {
            PhiConvention::TwoNuPlusAlpha => (2.0, 1.0),
            PhiConvention::NuPlusTwoAlpha => (1.0, 2.0),
        }
    }
}

impl FromStr for PhiConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-nu-plus-alpha" | "2nu+alpha" => Ok(PhiConvention::TwoNuPlusAlpha),
            "nu-plus-two-alpha" | "nu+2alpha" => Ok(PhiConvention::NuPlusTwoAlpha),
            other => Err(Error::InvalidParameter(format!(
                "unknown evidence convention `{other}`"
            ))),
        }
    }
}

/// Exponent of the normalized residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ResidualPower {
    #[serde(rename = "1")]
    One,
    #[default]
    #[serde(rename = "2")]
    Two,
}

impl ResidualPower {
    pub fn exponent(self) -> f64 {
        match self {
            ResidualPower::One => 1.0,
            ResidualPower::Two => 2.0,
        }
    }
}

impl FromStr for ResidualPower {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(ResidualPower::One),
            "2" => Ok(ResidualPower::Two),
            other => Err(Error::InvalidParameter(format!("p must be 1 or 2, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda: f64,
    /// Only read by [`LossKind::DerNormalized`].
    #[serde(default)]
    pub p: ResidualPower,
    /// Only read by the DER kinds.
    #[serde(default)]
    pub phi: PhiConvention,
    /// Treat w_St in the normalized regularizer as a constant.
    #[serde(default)]
    pub detach_width: bool,
}

impl LossConfig {
    pub fn new(kind: LossKind, lambda: f64) -> Self {
        LossConfig {
            kind,
            lambda,
            p: ResidualPower::default(),
            phi: PhiConvention::default(),
            detach_width: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Plain-value total evidence.
pub fn total_evidence(m: &NigParams, convention: PhiConvention) -> f64 {
    let (wn, wa) = convention.weights();
    wn * m.nu + wa * m.alpha
}

pub fn total_evidence_node(tape: &mut Tape, m: &NigNodes, convention: PhiConvention) -> Var {
    let (wn, wa) = convention.weights();
    let a = tape.mul_const(m.nu, wn);
    let b = tape.mul_const(m.alpha, wa);
    tape.add(a, b)
}

/// `w_St = sqrt(β(1+ν)/(αν))` as a node.
pub fn w_st_node(tape: &mut Tape, m: &NigNodes) -> Var {
    let one_plus_nu = tape.add_const(m.nu, 1.0);
    let num = tape.mul(m.beta, one_plus_nu);
    let den = tape.mul(m.alpha, m.nu);
    let ratio = tape.div(num, den);
    tape.sqrt(ratio)
}

/// Negative log of the Student-t marginal likelihood of `y`.
pub fn nig_nll(tape: &mut Tape, m: &NigNodes, y: f64) -> Var {
    let y = tape.constant(y);
    // Ω = 2β(1+ν)/ν
    let one_plus_nu = tape.add_const(m.nu, 1.0);
    let b1 = tape.mul(m.beta, one_plus_nu);
    let b2 = tape.mul_const(b1, 2.0);
    let omega = tape.div(b2, m.nu);

    let lg_a = tape.ln_gamma(m.alpha);
    let a_half = tape.add_const(m.alpha, 0.5);
    let lg_ah = tape.ln_gamma(a_half);
    let norm = tape.sub(lg_a, lg_ah);

    let pi_omega = tape.mul_const(omega, std::f64::consts::PI);
    let ln_po = tape.ln(pi_omega);
    let half_ln = tape.mul_const(ln_po, 0.5);

    let r = tape.sub(y, m.gamma);
    let r2 = tape.square(r);
    let q = tape.div(r2, omega);
    let q1 = tape.add_const(q, 1.0);
    let lq = tape.ln(q1);
    let tail = tape.mul(a_half, lq);

    let s = tape.add(norm, half_ln);
    tape.add(s, tail)
}

/// λ·|y−γ|·Φ
pub fn der_regularizer(tape: &mut Tape, m: &NigNodes, y: f64, cfg: &LossConfig) -> Var {
    let y = tape.constant(y);
    let r = tape.sub(y, m.gamma);
    let abs_r = tape.abs(r);
    let phi = total_evidence_node(tape, m, cfg.phi);
    let reg = tape.mul(abs_r, phi);
    tape.mul_const(reg, cfg.lambda)
}

/// λ·|(y−γ)/w_St|^p·Φ, with w_St computed from the same parameters.
pub fn normalized_regularizer(tape: &mut Tape, m: &NigNodes, y: f64, cfg: &LossConfig) -> Var {
    let mut w = w_st_node(tape, m);
    if cfg.detach_width {
        w = tape.detach(w);
    }
    let y = tape.constant(y);
    let r = tape.sub(y, m.gamma);
    let z = tape.div(r, w);
    let abs_z = tape.abs(z);
    let zp = tape.powf(abs_z, cfg.p.exponent());
    let phi = total_evidence_node(tape, m, cfg.phi);
    let reg = tape.mul(zp, phi);
    tape.mul_const(reg, cfg.lambda)
}

/// NIG NLL plus the regularizer selected by `cfg.kind`.
pub fn der_loss(tape: &mut Tape, m: &NigNodes, y: f64, cfg: &LossConfig) -> Result<Var> {
    let reg = match cfg.kind {
        LossKind::DerOriginal => der_regularizer(tape, m, y, cfg),
        LossKind::DerNormalized => normalized_regularizer(tape, m, y, cfg),
        other => {
            return Err(Error::InvalidParameter(format!(
                "der_loss needs an evidential loss kind, got {other}"
            )))
        }
    };
    let nll = nig_nll(tape, m, y);
    Ok(tape.add(nll, reg))
}

/// `log σ² + (1 + λν)(y−γ)²/σ²`
pub fn gaussian_alt_loss(tape: &mut Tape, g: &GaussianNodes, y: f64, lambda: f64) -> Var {
    let y = tape.constant(y);
    let r = tape.sub(y, g.gamma);
    let r2 = tape.square(r);
    let scaled = tape.div(r2, g.sigma_sq);
    let lnu = tape.mul_const(g.nu, lambda);
    let w = tape.add_const(lnu, 1.0);
    let fit = tape.mul(w, scaled);
    let ls = tape.ln(g.sigma_sq);
    tape.add(ls, fit)
}

/// Gaussian NLL `½ ln(2πσ²) + (y−γ)²/(2σ²)` plus `λ|y−γ|ν`.
pub fn naive_extension_loss(tape: &mut Tape, g: &GaussianNodes, y: f64, lambda: f64) -> Var {
    let y = tape.constant(y);
    let r = tape.sub(y, g.gamma);
    let r2 = tape.square(r);
    let q = tape.div(r2, g.sigma_sq);
    let half_q = tape.mul_const(q, 0.5);
    let two_pi_s = tape.mul_const(g.sigma_sq, 2.0 * std::f64::consts::PI);
    let ln_s = tape.ln(two_pi_s);
    let half_ln = tape.mul_const(ln_s, 0.5);
    let nll = tape.add(half_ln, half_q);
    let abs_r = tape.abs(r);
    let reg = tape.mul(abs_r, g.nu);
    let reg = tape.mul_const(reg, lambda);
    tape.add(nll, reg)
}

/// Per-sample loss from the raw network outputs θ.
pub fn sample_loss(tape: &mut Tape, theta: [Var; OUTPUT_DIM], y: f64, cfg: &LossConfig) -> Result<Var> {
    match cfg.kind {
        LossKind::DerOriginal | LossKind::DerNormalized => {
            let m = evidential_head(tape, theta);
            der_loss(tape, &m, y, cfg)
        }
        LossKind::GaussianAlt => {
            let g = gaussian_head(tape, theta);
            Ok(gaussian_alt_loss(tape, &g, y, cfg.lambda))
        }
        LossKind::NaiveExtension => {
            let g = gaussian_head(tape, theta);
            Ok(naive_extension_loss(tape, &g, y, cfg.lambda))
        }
    }
}

/// Value and ∂loss/∂θ of [`sample_loss`] at plain θ. Reuses `tape`.
pub fn sample_loss_and_grad(
    tape: &mut Tape,
    theta: [f64; OUTPUT_DIM],
    y: f64,
    cfg: &LossConfig,
) -> Result<(f64, [f64; OUTPUT_DIM])> {
    tape.clear();
    let vars = theta.map(|t| tape.var(t));
    let out = sample_loss(tape, vars, y, cfg)?;
    let g = tape.backward(out)?;
    Ok((
        tape.value(out),
        [g.partials[0], g.partials[1], g.partials[2], g.partials[3]],
    ))
}

fn leaf_nig(tape: &mut Tape, m: &NigParams) -> NigNodes {
    NigNodes {
        gamma: tape.var(m.gamma),
        nu: tape.var(m.nu),
        alpha: tape.var(m.alpha),
        beta: tape.var(m.beta),
    }
}

/// Plain-value NIG NLL. Defined for any ν, α, β > 0.
pub fn nig_nll_value(m: &NigParams, y: f64) -> Result<f64> {
    if !(m.nu > 0.0 && m.alpha > 0.0 && m.beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "NIG NLL needs nu, alpha, beta > 0, got {m:?}"
        )));
    }
    let mut tape = Tape::with_capacity(32);
    let nodes = leaf_nig(&mut tape, m);
    let out = nig_nll(&mut tape, &nodes, y);
    tape.check()?;
    Ok(tape.value(out))
}

/// NIG NLL at `β = c·ν/(1+ν)`. Constant in ν for fixed (γ, α, c, y).
pub fn degeneracy_path_nll(gamma: f64, alpha: f64, c: f64, nu: f64, y: f64) -> Result<f64> {
    if !(nu > 0.0 && c > 0.0 && alpha > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "degeneracy path needs nu > 0, c > 0, alpha > 1 (got nu={nu}, c={c}, alpha={alpha})"
        )));
    }
    let beta = c * nu / (1.0 + nu);
    nig_nll_value(&NigParams { gamma, nu, alpha, beta }, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use proptest::prelude::*;

    fn nig(gamma: f64, nu: f64, alpha: f64, beta: f64) -> NigParams {
        NigParams { gamma, nu, alpha, beta }
    }

    fn eval(f: impl Fn(&mut Tape, &NigNodes) -> Var, m: NigParams) -> f64 {
        let mut t = Tape::new();
        let n = leaf_nig(&mut t, &m);
        let out = f(&mut t, &n);
        t.check().unwrap();
        t.value(out)
    }

    fn gaussian_nll(mean: f64, width: f64, y: f64) -> f64 {
        0.5 * (2.0 * std::f64::consts::PI * width * width).ln() + (y - mean).powi(2) / (2.0 * width * width)
    }

    #[test]
    fn nll_reference_value() {
        // df = 2, width² = 1: f(0) = Γ(1.5)/(√(2π) Γ(1)) = √π/2/√(2π)
        let oracle = -(std::f64::consts::PI.sqrt() / 2.0 / (2.0 * std::f64::consts::PI).sqrt()).ln();
        let v = nig_nll_value(&nig(0.0, 1.0, 1.0, 0.5), 0.0).unwrap();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 1.039721).abs() < 1e-6);
    }

    #[test]
    fn doubling_width_adds_ln2_at_mode() {
        // width² ∝ β, so doubling the width means β → 4β
        let a = nig_nll_value(&nig(0.3, 2.0, 3.0, 0.7), 0.3).unwrap();
        let b = nig_nll_value(&nig(0.3, 2.0, 3.0, 2.8), 0.3).unwrap();
        assert!((b - a - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_alpha_approaches_gaussian() {
        let alpha: f64 = 1e4;
        let width: f64 = 1.7;
        let nu: f64 = 3.0;
        // β(1+ν)/(να) = width²
        let beta = width * width * nu * alpha / (1.0 + nu);
        for y in [-2.0, 0.0, 0.5, 3.0] {
            let v = nig_nll_value(&nig(0.2, nu, alpha, beta), y).unwrap();
            assert!((v - gaussian_nll(0.2, width, y)).abs() < 1e-3, "y={y}");
        }
    }

    #[test]
    fn total_evidence_examples() {
        let m = nig(0.0, 4.0, 3.0, 1.0);
        assert_eq!(total_evidence(&m, PhiConvention::TwoNuPlusAlpha), 11.0);
        assert_eq!(total_evidence(&m, PhiConvention::NuPlusTwoAlpha), 10.0);
        let m = nig(0.0, 0.0, 1.0, 1.0);
        assert_eq!(total_evidence(&m, PhiConvention::TwoNuPlusAlpha), 1.0);
        assert_eq!(total_evidence(&m, PhiConvention::NuPlusTwoAlpha), 2.0);
    }

    #[test]
    fn der_regularizer_examples() {
        let cfg = LossConfig::new(LossKind::DerOriginal, 0.01);
        // Φ = 2·4 + 3 = 11
        let m = nig(0.0, 4.0, 3.0, 1.0);
        let v = eval(|t, n| der_regularizer(t, n, 2.0, &cfg), m);
        assert!((v - 0.22).abs() < 1e-15);
        assert_eq!(eval(|t, n| der_regularizer(t, n, 0.0, &cfg), m), 0.0);

        let mut t = Tape::new();
        let n = leaf_nig(&mut t, &m);
        let r = der_regularizer(&mut t, &n, 2.0, &cfg);
        let g = t.backward(r).unwrap();
        assert!((g.wrt(n.nu).unwrap() - 0.04).abs() < 1e-15);
        assert!((g.wrt(n.alpha).unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn normalized_regularizer_examples() {
        // w_St = 2 with ν = 4, α = 3: β = 4·3·4/5
        let m = nig(0.0, 4.0, 3.0, 4.0 * 12.0 / 5.0);
        let w = eval(w_st_node, m);
        assert!((w - 2.0).abs() < 1e-14);
        for p in [ResidualPower::One, ResidualPower::Two] {
            let cfg = LossConfig {
                p,
                ..LossConfig::new(LossKind::DerNormalized, 0.01)
            };
            let v = eval(|t, n| normalized_regularizer(t, n, 2.0, &cfg), m);
            assert!((v - 0.11).abs() < 1e-14, "{p:?}: {v}");
            assert_eq!(eval(|t, n| normalized_regularizer(t, n, 0.0, &cfg), m), 0.0);
        }
    }

    #[test]
    fn der_loss_reductions() {
        let m = nig(0.4, 1.3, 2.2, 0.9);
        let nll = nig_nll_value(&m, 1.1).unwrap();
        for kind in [LossKind::DerOriginal, LossKind::DerNormalized] {
            let cfg = LossConfig::new(kind, 0.0);
            let v = eval(|t, n| der_loss(t, n, 1.1, &cfg).unwrap(), m);
            assert_eq!(v, nll);
        }
        // w_St = 1 and |y−γ| = 1 make the two regularizers coincide
        let m = nig(0.0, 1.0, 2.0, 1.0);
        let orig = LossConfig::new(LossKind::DerOriginal, 0.01);
        let norm = LossConfig::new(LossKind::DerNormalized, 0.01);
        let a = eval(|t, n| der_loss(t, n, 1.0, &orig).unwrap(), m);
        let b = eval(|t, n| der_loss(t, n, 1.0, &norm).unwrap(), m);
        assert!((a - b).abs() < 1e-15);

        let bad = LossConfig::new(LossKind::GaussianAlt, 0.0);
        let mut t = Tape::new();
        let n = leaf_nig(&mut t, &m);
        assert!(der_loss(&mut t, &n, 0.0, &bad).is_err());
    }

    fn gauss_eval(gamma: f64, nu: f64, beta: f64, y: f64, lambda: f64) -> f64 {
        let mut t = Tape::new();
        let g = t.var(gamma);
        let n = t.var(nu);
        let b = t.var(beta);
        let s = t.div(b, n);
        let nodes = GaussianNodes {
            gamma: g,
            nu: n,
            beta: b,
            sigma_sq: s,
        };
        let out = gaussian_alt_loss(&mut t, &nodes, y, lambda);
        t.value(out)
    }

    #[test]
    fn gaussian_alt_examples() {
        assert_eq!(gauss_eval(0.0, 1.0, 1.0, 1.0, 0.0), 1.0);
        assert_eq!(gauss_eval(0.0, 2.0, 2.0, 1.0, 2.0), 5.0);
    }

    #[test]
    fn gaussian_alt_mle_matches_sample_moments() {
        // λ = 0: minimizing Σ ln σ² + (y−γ)²/σ² gives the sample mean and
        // the biased sample variance.
        let ys = [1.2, -0.4, 2.5, 0.9, 1.7, -1.1, 0.3];
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let total = |g: f64, s2: f64| -> f64 { ys.iter().map(|&y| gauss_eval(g, 1.0, s2, y, 0.0)).sum() };
        let best = total(mean, var);
        for dg in [-1e-3, 1e-3] {
            assert!(total(mean + dg, var) > best);
        }
        for ds in [-1e-3, 1e-3] {
            assert!(total(mean, var + ds) > best);
        }
        // stationarity: gradient at the closed-form optimum vanishes
        let mut t = Tape::new();
        let g = t.var(mean);
        let nu = t.constant(1.0);
        let s2 = t.var(var);
        let nodes = GaussianNodes {
            gamma: g,
            nu,
            beta: s2,
            sigma_sq: s2,
        };
        let terms: Vec<Var> = ys.iter().map(|&y| gaussian_alt_loss(&mut t, &nodes, y, 0.0)).collect();
        let sum = t.sum(&terms);
        let grad = t.backward(sum).unwrap();
        assert!(grad.partials.iter().all(|p| p.abs() < 1e-12), "{:?}", grad.partials);
    }

    #[test]
    fn degeneracy_path_examples() {
        let a = degeneracy_path_nll(0.0, 1.5, 1.0, 0.1, 1.0).unwrap();
        let b = degeneracy_path_nll(0.0, 1.5, 1.0, 10.0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
        let a = degeneracy_path_nll(0.0, 1.5, 4.0, 0.1, -3.7).unwrap();
        let b = degeneracy_path_nll(0.0, 1.5, 4.0, 10.0, -3.7).unwrap();
        assert!((a - b).abs() < 1e-12);
        let vals: Vec<f64> = (0..=60)
            .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 60.0))
            .map(|nu| degeneracy_path_nll(0.0, 1.5, 1.0, nu, 1.0).unwrap())
            .collect();
        let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-10, "{spread}");
        assert!(degeneracy_path_nll(0.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn sample_loss_dispatch_and_grad() {
        let theta = [0.2, -0.3, 0.8, 0.1];
        let mut t = Tape::new();
        for kind in LossKind::ALL {
            let cfg = LossConfig::new(kind, 0.5);
            let (v, g) = sample_loss_and_grad(&mut t, theta, 1.3, &cfg).unwrap();
            assert!(v.is_finite());
            match kind.head() {
                HeadKind::Gaussian => assert_eq!(g[2], 0.0),
                HeadKind::Evidential => assert_ne!(g[2], 0.0),
            }
        }
    }

    #[test]
    fn detach_width_changes_only_the_gradient() {
        let theta = [0.2, -0.3, 0.8, 0.1];
        let cfg = LossConfig::new(LossKind::DerNormalized, 0.5);
        let det = LossConfig {
            detach_width: true,
            ..cfg
        };
        let mut t = Tape::new();
        let (va, ga) = sample_loss_and_grad(&mut t, theta, 1.3, &cfg).unwrap();
        let (vb, gb) = sample_loss_and_grad(&mut t, theta, 1.3, &det).unwrap();
        assert_eq!(va, vb);
        assert_eq!(ga[0], gb[0]);
        assert_ne!(ga[3], gb[3]);
    }

    #[test]
    fn parse_tags() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("der".parse::<LossKind>().is_err());
        assert_eq!("2".parse::<ResidualPower>().unwrap(), ResidualPower::Two);
        assert!("3".parse::<ResidualPower>().is_err());
        assert_eq!(
            "nu+2alpha".parse::<PhiConvention>().unwrap(),
            PhiConvention::NuPlusTwoAlpha
        );
    }

    proptest! {
        #[test]
        fn nll_minimized_at_gamma_equals_y(
            y in -10.0f64..10.0, nu in 0.01f64..50.0, alpha in 1.01f64..20.0,
            beta in 0.01f64..20.0, d in prop_oneof![-5.0f64..-1e-3, 1e-3f64..5.0],
        ) {
            let at = nig_nll_value(&nig(y, nu, alpha, beta), y).unwrap();
            let off = nig_nll_value(&nig(y + d, nu, alpha, beta), y).unwrap();
            prop_assert!(off > at);
        }

        #[test]
        fn gaussian_alt_minimized_at_gamma_equals_y(
            y in -10.0f64..10.0, s2 in 0.01f64..20.0, d in prop_oneof![-5.0f64..-1e-3, 1e-3f64..5.0],
        ) {
            prop_assert!(gauss_eval(y + d, 1.0, s2, y, 0.0) > gauss_eval(y, 1.0, s2, y, 0.0));
        }

        #[test]
        fn normalized_regularizer_is_scale_free(
            y in -10.0f64..10.0, gamma in -10.0f64..10.0, nu in 0.05f64..20.0,
            alpha in 1.05f64..10.0, beta in 0.05f64..20.0, k in 0.1f64..10.0,
            p in prop_oneof![Just(ResidualPower::One), Just(ResidualPower::Two)],
        ) {
            // w_St scales as sqrt(β), so β → k²β rescales it by k
            let cfg = LossConfig { p, ..LossConfig::new(LossKind::DerNormalized, 0.3) };
            let a = eval(|t, n| normalized_regularizer(t, n, y, &cfg), nig(gamma, nu, alpha, beta));
            let b = eval(|t, n| normalized_regularizer(t, n, k * y, &cfg), nig(k * gamma, nu, alpha, k * k * beta));
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn degeneracy_invariance(
            gamma in -10.0f64..10.0, alpha in 1.001f64..20.0, c in 1e-3f64..100.0, y in -10.0f64..10.0,
            nu1 in 1e-3f64..1e3, nu2 in 1e-3f64..1e3,
        ) {
            let a = degeneracy_path_nll(gamma, alpha, c, nu1, y).unwrap();
            let b = degeneracy_path_nll(gamma, alpha, c, nu2, y).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn loss_gradients_match_finite_differences(
            theta in proptest::array::uniform4(-2.0f64..2.0), y in -3.0f64..3.0,
            kind in prop_oneof![
                Just(LossKind::DerOriginal), Just(LossKind::DerNormalized),
                Just(LossKind::GaussianAlt), Just(LossKind::NaiveExtension),
            ],
        ) {
            prop_assume!((y - theta[0]).abs() > 1e-3);
            let cfg = LossConfig::new(kind, 0.7);
            let err = finite_difference_check(
                |t, v| sample_loss(t, [v[0], v[1], v[2], v[3]], y, &cfg).unwrap(),
                &theta,
                1e-5,
            ).unwrap();
            prop_assert!(err < 1e-5, "{err}");
        }
    }
}
