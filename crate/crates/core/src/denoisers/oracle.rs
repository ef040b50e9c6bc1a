//! Independent posterior moments by Gauss-Hermite quadrature.
//!
//! The spike is handled analytically and the Gaussian component by
//! quadrature. The integration variable follows whichever of prior and
//! likelihood is narrower, so the remaining integrand is a Gaussian at least
//! as wide as the Hermite weight. Results are accepted only when halving the
//! node count changes them by at most [`ORACLE_TOLERANCE`].

use std::f64::consts::PI;

use super::{ChannelMoment, MatrixPrior, SignalPrior};
use crate::error::{Error, Result};
use crate::params::Eta;
use crate::quadrature::gauss_hermite;

pub const ORACLE_NODES: usize = 512;
pub const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub enum OraclePrior<'a> {
    Signal(&'a SignalPrior),
    /// Matrix prior together with the dimension `N` that scales the element.
    Matrix(&'a MatrixPrior, usize),
}

fn log_gauss_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -(d * d) / (2.0 * var) - 0.5 * (2.0 * PI * var).ln()
}

/// `(log K, Z, Z·E[x], Z·E[x²])` with the evidence equal to `K·Z`, for a
/// Gaussian prior `N(pm, pv)` observed through `t = x + N(0, lv)`. The common
/// factor `K` keeps far-off observations from underflowing.
fn gaussian_component(nodes: usize, pm: f64, pv: f64, t: f64, lv: f64) -> (f64, f64, f64, f64) {
    let gh = gauss_hermite(nodes);
    let points: Vec<(f64, f64, f64)> = if lv <= pv {
        let sd = lv.sqrt();
        gh.nodes
            .iter()
            .zip(&gh.weights)
            .map(|(&u, &w)| {
                let x = t + std::f64::consts::SQRT_2 * sd * u;
                (x, w, log_gauss_pdf(x, pm, pv))
            })
            .collect()
    } else {
        let sd = pv.sqrt();
        gh.nodes
            .iter()
            .zip(&gh.weights)
            .map(|(&u, &w)| {
                let x = pm + std::f64::consts::SQRT_2 * sd * u;
                (x, w, log_gauss_pdf(t, x, lv))
            })
            .collect()
    };
    let shift = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for &(x, w, lg) in &points {
        let g = w * (lg - shift).exp();
        z += g;
        m1 += g * x;
        m2 += g * x * x;
    }
    let norm = 1.0 / PI.sqrt();
    (shift, z * norm, m1 * norm, m2 * norm)
}

fn moments_with(nodes: usize, ch: ChannelMoment, prior: OraclePrior<'_>) -> Result<(f64, f64)> {
    match prior {
        OraclePrior::Signal(p) => {
            let rho = p.rho();
            let (k1, z1, m1, m2) = gaussian_component(nodes, 0.0, 1.0, ch.t, ch.sigma2);
            let l0 = (1.0 - rho).ln() + log_gauss_pdf(ch.t, 0.0, ch.sigma2);
            let l1 = rho.ln() + k1;
            let top = l0.max(l1);
            let (w0, w1) = ((l0 - top).exp(), (l1 - top).exp());
            let z = w0 + w1 * z1;
            if !(z > 0.0) || !z.is_finite() {
                return Err(Error::OracleFailure(format!(
                    "zero evidence at sigma2={}, T={}",
                    ch.sigma2, ch.t
                )));
            }
            let mean = w1 * m1 / z;
            let second = w1 * m2 / z;
            Ok((mean, second - mean * mean))
        }
        OraclePrior::Matrix(p, n) => {
            if p.eta.is_known() {
                return Ok(p.posterior(ch.sigma2, ch.t, n));
            }
            let (pm, pv) = p.scaled_moments(n);
            let lv = ch.sigma2 / n as f64;
            let (_, z, m1, m2) = gaussian_component(nodes, pm, pv, ch.t, lv);
            if !(z > 0.0) {
                return Err(Error::OracleFailure("zero evidence for matrix element".into()));
            }
            let mean = m1 / z;
            Ok((mean, m2 / z - mean * mean))
        }
    }
}

/// Posterior `(mean, variance)` by quadrature over the prior.
pub fn oracle_posterior_moments(ch: ChannelMoment, prior: OraclePrior<'_>) -> Result<(f64, f64)> {
    if !(ch.sigma2 > 0.0) || !ch.sigma2.is_finite() || !ch.t.is_finite() {
        return Err(Error::invalid(format!(
            "oracle needs finite sigma2 > 0 and finite T (got {}, {})",
            ch.sigma2, ch.t
        )));
    }
    if let OraclePrior::Matrix(p, n) = prior {
        if n == 0 || matches!(p.eta, Eta::Finite(e) if !e.is_finite()) {
            return Err(Error::invalid("invalid matrix prior for oracle"));
        }
    }
    let coarse = moments_with(ORACLE_NODES / 2, ch, prior)?;
    let fine = moments_with(ORACLE_NODES, ch, prior)?;
    let change = (coarse.0 - fine.0).abs().max((coarse.1 - fine.1).abs());
    if !(change <= ORACLE_TOLERANCE) {
        return Err(Error::OracleFailure(format!(
            "node doubling changed moments by {change:e} at sigma2={}, T={}",
            ch.sigma2, ch.t
        )));
    }
    Ok(fine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_prior_matches_conjugate_update() {
        // rho = 1: posterior of N(0,1) through variance s is N(T/(1+s), s/(1+s)).
        let p = SignalPrior::new(1.0).unwrap();
        for (s, t) in [(0.01, 2.0), (1.0, -0.3), (10.0, 5.0)] {
            let (m, v) = oracle_posterior_moments(ChannelMoment::new(s, t), OraclePrior::Signal(&p)).unwrap();
            assert!((m - t / (1.0 + s)).abs() < 1e-12);
            assert!((v - s / (1.0 + s)).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_agrees_with_closed_form() {
        let p = SignalPrior::new(0.2).unwrap();
        let ch = ChannelMoment::new(1.0, 0.0);
        let (m, v) = oracle_posterior_moments(ch, OraclePrior::Signal(&p)).unwrap();
        let (ma, va) = p.posterior(1.0, 0.0);
        assert!((m - ma).abs() <= 1e-10);
        assert!((v - va).abs() <= 1e-10);
    }

    #[test]
    fn rejects_invalid_channel() {
        let p = SignalPrior::new(0.2).unwrap();
        assert!(oracle_posterior_moments(ChannelMoment::new(0.0, 1.0), OraclePrior::Signal(&p)).is_err());
    }
}
