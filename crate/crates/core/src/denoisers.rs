//! Scalar posterior means and variances ("input functions").
//!
//! Each function takes a Gaussian pseudo-channel `T = x + sqrt(σ²)·ξ` and
//! returns the posterior mean and variance of `x` under one of the two
//! priors of the model:
//!
//! - [`SignalPrior`]: `(1-ρ) δ(x) + ρ N(0, 1)`.
//! - [`MatrixPrior`]: the conditional law of a scaled dictionary element
//!   `F/√N` given its noisy copy `F'`, i.e. `N(F'/√(N(1+η)), η/((1+η)N))`.
//!   The matrix channel variance is expressed on the unscaled element, so the
//!   noise on the scaled pseudo-observation is `σ²/N`.
//!
//! The spike/slab responsibility is formed as a logistic of the log-odds, so
//! neither `e^{-T²/2σ²}` nor its slab counterpart is ever evaluated alone.

use crate::error::{Error, Result};
use crate::params::Eta;

pub mod oracle;

pub const SIGMA2_MIN: f64 = 1e-14;
pub const SIGMA2_MAX: f64 = 1e14;

pub fn clamp_sigma2(sigma2: f64) -> f64 {
    sigma2.clamp(SIGMA2_MIN, SIGMA2_MAX)
}

/// Effective Gaussian channel: variance `sigma2` and pseudo-observation `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelMoment {
    pub sigma2: f64,
    pub t: f64,
}

impl ChannelMoment {
    pub fn new(sigma2: f64, t: f64) -> Self {
        ChannelMoment { sigma2, t }
    }

    fn checked(self) -> Result<Self> {
        if self.sigma2.is_nan() || self.t.is_nan() || self.t.is_infinite() {
            return Err(Error::invalid(format!(
                "non-finite channel (sigma2={}, T={})",
                self.sigma2, self.t
            )));
        }
        if self.sigma2 <= 0.0 {
            return Err(Error::invalid(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        Ok(ChannelMoment {
            sigma2: clamp_sigma2(self.sigma2),
            t: self.t,
        })
    }
}

/// Gauss-Bernoulli signal prior with a unit Gaussian slab.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalPrior {
    rho: f64,
}

impl SignalPrior {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1], got {rho}")));
        }
        Ok(SignalPrior { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn variance(&self) -> f64 {
        self.rho
    }

    /// Log-odds of slab versus spike for `T` observed at variance `sigma2`.
    pub fn slab_log_odds(&self, sigma2: f64, t: f64) -> f64 {
        let s = sigma2;
        (self.rho / (1.0 - self.rho)).ln() + 0.5 * (s / (s + 1.0)).ln() + t * t / (2.0 * s * (s + 1.0))
    }

    /// Posterior probability that `x` came from the slab.
    pub fn slab_responsibility(&self, sigma2: f64, t: f64) -> f64 {
        if self.rho >= 1.0 {
            return 1.0;
        }
        logistic(self.slab_log_odds(sigma2, t))
    }

    /// `(f_a, f_c)` without argument checks; `sigma2` is clamped.
    pub fn posterior(&self, sigma2: f64, t: f64) -> (f64, f64) {
        let s = clamp_sigma2(sigma2);
        let w = self.slab_responsibility(s, t);
        let shrink = 1.0 / (s + 1.0);
        let slab_mean = t * shrink;
        let mean = w * slab_mean;
        // σ²·∂f_a/∂T: slab variance plus the responsibility's sensitivity.
        let var = w * s * shrink + w * (1.0 - w) * slab_mean * slab_mean;
        (mean, var)
    }
}

pub(crate) fn logistic(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Conditional Gaussian prior of one scaled matrix element given `F'`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixPrior {
    pub eta: Eta,
    pub side_value: f64,
}

impl MatrixPrior {
    pub fn new(eta: Eta, side_value: f64) -> Self {
        MatrixPrior { eta, side_value }
    }

    /// Prior `(mean, variance)` of the scaled element.
    pub fn scaled_moments(&self, n: usize) -> (f64, f64) {
        let nf = n as f64;
        (
            self.side_value * self.eta.conditional_mean_scale() / nf.sqrt(),
            self.eta.conditional_variance() / nf,
        )
    }

    /// `(f_r, f_s)` without argument checks; `sigma2` is clamped.
    pub fn posterior(&self, sigma2: f64, t: f64, n: usize) -> (f64, f64) {
        let s = clamp_sigma2(sigma2);
        let nf = n as f64;
        match self.eta {
            Eta::Infinite => (t / (s + 1.0), s / (nf * (s + 1.0))),
            Eta::Finite(eta) if eta == 0.0 => (self.side_value / nf.sqrt(), 0.0),
            Eta::Finite(eta) => {
                let denom = (1.0 + 1.0 / eta) * s + 1.0;
                let pull = s * self.side_value * (1.0 + eta).sqrt() / (nf.sqrt() * eta);
                ((t + pull) / denom, s / (nf * denom))
            }
        }
    }
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("N must be >= 1"));
    }
    Ok(())
}

/// Posterior mean of a spike-slab signal element.
pub fn f_a(ch: ChannelMoment, prior: &SignalPrior) -> Result<f64> {
    let ch = ch.checked()?;
    Ok(prior.posterior(ch.sigma2, ch.t).0)
}

/// Posterior variance of a spike-slab signal element.
pub fn f_c(ch: ChannelMoment, prior: &SignalPrior) -> Result<f64> {
    let ch = ch.checked()?;
    Ok(prior.posterior(ch.sigma2, ch.t).1)
}

/// Posterior mean of a scaled matrix element `F/√N`.
pub fn f_r(ch: ChannelMoment, prior: &MatrixPrior, n: usize) -> Result<f64> {
    let ch = ch.checked()?;
    check_count(n)?;
    if !prior.side_value.is_finite() {
        return Err(Error::invalid("non-finite side value"));
    }
    Ok(prior.posterior(ch.sigma2, ch.t, n).0)
}

/// Posterior variance of a scaled matrix element `F/√N`.
pub fn f_s(ch: ChannelMoment, prior: &MatrixPrior, n: usize) -> Result<f64> {
    let ch = ch.checked()?;
    check_count(n)?;
    Ok(prior.posterior(ch.sigma2, ch.t, n).1)
}
