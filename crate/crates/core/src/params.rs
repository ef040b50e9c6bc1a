//! Control parameters shared by the generator, the solver, and the theory.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Replacement for `delta = 0` wherever the theory needs a strictly positive
/// noise level.
pub const DELTA_FLOOR: f64 = 1e-12;

/// Side-information noise ratio.
///
/// `Infinite` is the dictionary-learning limit where the noisy copy `F'`
/// carries no information; it is kept distinct from large finite values so
/// that `1 + 1/eta` never has to be formed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eta {
    Finite(f64),
    Infinite,
}

impl Eta {
    pub fn finite(eta: f64) -> Result<Self> {
        if eta.is_nan() || eta < 0.0 {
            return Err(Error::invalid(format!("eta must be >= 0, got {eta}")));
        }
        if eta.is_infinite() {
            return Ok(Eta::Infinite);
        }
        Ok(Eta::Finite(eta))
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Eta::Infinite)
    }

    /// True when the matrix is known exactly (`eta == 0`).
    pub fn is_known(self) -> bool {
        matches!(self, Eta::Finite(e) if e == 0.0)
    }

    /// Conditional variance `eta / (1 + eta)` of an unscaled element given `F'`.
    pub fn conditional_variance(self) -> f64 {
        match self {
            Eta::Finite(e) => e / (1.0 + e),
            Eta::Infinite => 1.0,
        }
    }

    /// Factor `1 / sqrt(1 + eta)` multiplying `F'` in the conditional mean.
    pub fn conditional_mean_scale(self) -> f64 {
        match self {
            Eta::Finite(e) => 1.0 / (1.0 + e).sqrt(),
            Eta::Infinite => 0.0,
        }
    }

    /// Encoding used by the instance file and the C ABI: `+inf` for `Infinite`.
    pub fn to_f64(self) -> f64 {
        match self {
            Eta::Finite(e) => e,
            Eta::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Eta::Finite(e) => write!(f, "{}", ryu::Buffer::new().format(*e)),
            Eta::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Eta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" | "+inf" => Ok(Eta::Infinite),
            _ => {
                let v: f64 = t
                    .parse()
                    .map_err(|_| Error::invalid(format!("cannot parse eta from {s:?}")))?;
                Eta::finite(v)
            }
        }
    }
}

/// The five dimensionless control parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Measurement ratio `M / N`.
    pub alpha: f64,
    /// Sample ratio `P / N`.
    pub pi: f64,
    /// Sparsity fraction `K / N`.
    pub rho: f64,
    /// Measurement-noise variance.
    pub delta: f64,
    pub eta: Eta,
}

impl ModelParams {
    pub fn new(alpha: f64, pi: f64, rho: f64, delta: f64, eta: Eta) -> Result<Self> {
        let p = ModelParams {
            alpha,
            pi,
            rho,
            delta,
            eta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.pi, self.rho, self.delta]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if self.alpha <= 0.0 || self.pi <= 0.0 {
            return Err(Error::invalid(format!(
                "alpha and pi must be positive (alpha={}, pi={})",
                self.alpha, self.pi
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.delta < 0.0 {
            return Err(Error::invalid(format!("delta must be >= 0, got {}", self.delta)));
        }
        if let Eta::Finite(e) = self.eta {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("eta must be >= 0, got {e}")));
            }
        }
        Ok(())
    }

    /// Noise variance with zero replaced by [`DELTA_FLOOR`].
    pub fn floored_delta(&self) -> f64 {
        self.delta.max(DELTA_FLOOR)
    }

    pub fn with_pi(mut self, pi: f64) -> Self {
        self.pi = pi;
        self
    }

    /// `pi (alpha - rho) > alpha`, the ratio form of the counting bound.
    pub fn exceeds_counting_bound(&self) -> bool {
        self.pi * (self.alpha - self.rho) > self.alpha
    }
}

/// `M P > N (M + P rho)`: more measurements than unknowns.
pub fn exceeds_counting_bound_counts(n: u64, m: u64, p: u64, k: u64) -> bool {
    let (n, m, p, k) = (n as u128, m as u128, p as u128, k as u128);
    m * p > n * m + p * k
}

/// Exact rational form of [`ModelParams::exceeds_counting_bound`], with each
/// ratio given as `(numerator, denominator)` over positive denominators.
pub fn exceeds_counting_bound_ratios(alpha: (i64, i64), pi: (i64, i64), rho: (i64, i64)) -> bool {
    let (an, ad) = (alpha.0 as i128, alpha.1 as i128);
    let (pn, pd) = (pi.0 as i128, pi.1 as i128);
    let (rn, rd) = (rho.0 as i128, rho.1 as i128);
    // pi * (alpha - rho) > alpha, cleared of the positive denominators.
    pn * (an * rd - rn * ad) > an * pd * rd
}

/// Dimension derived from a ratio by round-half-to-even.
pub fn scaled_size(ratio: f64, n: usize) -> usize {
    let v = (ratio * n as f64).round_ties_even();
    if v <= 0.0 {
        0
    } else {
        v as usize
    }
}
