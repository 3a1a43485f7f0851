//! Uncertainty proxies computed from head outputs.
//!
//! Three conventions exist and are never mixed: the moment-based NIG
//! definitions ([`Convention::Sota`]), the t-width based redefinitions
//! ([`Convention::Proposed`]) and the Gaussian-head proxies
//! ([`Convention::Gaussian`]). Every [`UncertaintyEstimate`] carries its tag.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GaussianParams, NigParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// u_al = sqrt(β/(α−1)), u_ep = u_al/√ν
    Sota,
    /// u_al′ = w_St, u_ep′ = 1/√ν
    Proposed,
    /// σ = sqrt(β/ν), 1/√ν
    Gaussian,
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Sota => "sota",
            Convention::Proposed => "proposed",
            Convention::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub prediction: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    pub convention: Convention,
}

/// Width of the Student-t marginal, `sqrt(β(1+ν)/(αν))`.
pub fn w_st(m: &NigParams) -> f64 {
    (m.beta * (1.0 + m.nu) / (m.alpha * m.nu)).sqrt()
}

pub fn sota_uncertainties(m: &NigParams) -> Result<UncertaintyEstimate> {
    if !(m.alpha > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "aleatoric variance β/(α−1) needs alpha > 1, got {}",
            m.alpha
        )));
    }
    let aleatoric = (m.beta / (m.alpha - 1.0)).sqrt();
    Ok(UncertaintyEstimate {
        prediction: m.gamma,
        aleatoric,
        epistemic: aleatoric / m.nu.sqrt(),
        convention: Convention::Sota,
    })
}

pub fn proposed_uncertainties(m: &NigParams) -> UncertaintyEstimate {
    UncertaintyEstimate {
        prediction: m.gamma,
        aleatoric: w_st(m),
        epistemic: 1.0 / m.nu.sqrt(),
        convention: Convention::Proposed,
    }
}

pub fn gaussian_uncertainties(g: &GaussianParams) -> UncertaintyEstimate {
    UncertaintyEstimate {
        prediction: g.gamma,
        aleatoric: (g.beta / g.nu).sqrt(),
        epistemic: 1.0 / g.nu.sqrt(),
        convention: Convention::Gaussian,
    }
}

/// `log(2πσ²)/2`.
///
/// This is the Gaussian differential entropy minus its constant `½`; the
/// offset cancels in any comparison between cohorts.
pub fn entropy(sigma: f64) -> f64 {
    (2.0 * std::f64::consts::PI * sigma * sigma).ln() / 2.0
}
