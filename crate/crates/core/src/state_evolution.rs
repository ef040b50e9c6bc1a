//! Large-system recursion for the signal MSE `E` and the matrix MSE `D`.

use crate::denoisers::{clamp_sigma2, SignalPrior};
use crate::error::{Error, Result};
use crate::params::{Eta, ModelParams};
use crate::potential::{potential_log_gradient, potential_with};
use crate::quadrature::{NormalIntegrator, Transition};

/// Starting `D` for dictionary learning. `(ρ, 1)` is an exact fixed point
/// when `η = ∞`, so the uninformative start is nudged off it.
pub const DICTIONARY_START_OFFSET: f64 = 1e-6;
pub const FIXED_POINT_DEDUP: f64 = 1e-9;
pub const STATIONARITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SePoint {
    pub e: f64,
    pub d: f64,
}

impl SePoint {
    pub fn new(e: f64, d: f64) -> Self {
        SePoint { e, d }
    }
}

/// `(m̂_x, m̂_F)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HatParams {
    pub m_x: f64,
    pub m_f: f64,
}

/// `Δ + E + ρD − ED` with `Δ` floored.
pub fn denominator(p: SePoint, params: &ModelParams) -> f64 {
    params.floored_delta() + p.e + params.rho * p.d - p.e * p.d
}

fn check_point(p: SePoint, params: &ModelParams) -> Result<()> {
    let slack = 1e-12;
    let ok = p.e.is_finite()
        && p.d.is_finite()
        && p.e >= 0.0
        && p.d >= 0.0
        && p.e <= params.rho * (1.0 + slack)
        && p.d <= 1.0 + slack;
    if !ok {
        return Err(Error::domain(format!(
            "(E, D) = ({}, {}) outside [0, rho] x [0, 1]",
            p.e, p.d
        )));
    }
    Ok(())
}

pub fn hat_params(p: SePoint, params: &ModelParams) -> Result<HatParams> {
    check_point(p, params)?;
    let q = denominator(p, params);
    if !(q > 0.0) {
        return Err(Error::domain(format!("nonpositive denominator {q}")));
    }
    Ok(HatParams {
        m_x: params.alpha * (1.0 - p.d).max(0.0) / q,
        m_f: params.pi * (params.rho - p.e).max(0.0) / q,
    })
}

/// Channel-averaged posterior variance of the signal prior at precision `m_hat`.
pub fn signal_mmse(rho: f64, m_hat: f64, quad: &NormalIntegrator) -> f64 {
    if !(m_hat > 0.0) {
        return rho;
    }
    let s2 = clamp_sigma2(1.0 / m_hat);
    let prior = SignalPrior::new(rho).expect("rho validated by caller");
    let offset = (rho / (1.0 - rho)).ln() + 0.5 * (s2 / (s2 + 1.0)).ln();
    let slab_sd = (1.0 + s2).sqrt();
    let slab = quad.expect_even(
        Some(Transition {
            offset,
            curvature: 1.0 / (2.0 * s2),
        }),
        |z| prior.posterior(s2, z * slab_sd).1,
    );
    if rho >= 1.0 {
        return slab.min(rho);
    }
    let spike_sd = s2.sqrt();
    let spike = quad.expect_even(
        Some(Transition {
            offset,
            curvature: 1.0 / (2.0 * (s2 + 1.0)),
        }),
        |z| prior.posterior(s2, z * spike_sd).1,
    );
    ((1.0 - rho) * spike + rho * slab).clamp(0.0, rho)
}

/// `D' = 1/(m̂_F + (1+η)/η)`, written to stay finite at `η = 0` and `η = ∞`.
pub fn matrix_mmse(eta: Eta, m_f: f64) -> f64 {
    match eta {
        Eta::Infinite => 1.0 / (m_f + 1.0),
        Eta::Finite(e) => e / (1.0 + e + e * m_f),
    }
}

/// The map with both coordinates read from `p`. `run_se` uses the sequential
/// sweep instead; the two share their fixed points.
pub fn se_step_with(p: SePoint, params: &ModelParams, quad: &NormalIntegrator) -> Result<SePoint> {
    let h = hat_params(p, params)?;
    Ok(SePoint {
        e: signal_mmse(params.rho, h.m_x, quad),
        d: matrix_mmse(params.eta, h.m_f),
    })
}

pub fn se_step(p: SePoint, params: &ModelParams) -> Result<SePoint> {
    se_step_with(p, params, &NormalIntegrator::default())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SeInit {
    /// Prior variances: `(ρ, 1)`, or `(ρ, 1 − 1e-6)` when `η = ∞`.
    Uninformative,
    /// `(ε, ε)`.
    Informed(f64),
    Custom(SePoint),
}

impl SeInit {
    pub fn point(self, params: &ModelParams) -> SePoint {
        match self {
            SeInit::Uninformative => {
                let d = if params.eta.is_infinite() {
                    1.0 - DICTIONARY_START_OFFSET
                } else {
                    1.0
                };
                SePoint::new(params.rho, d)
            }
            SeInit::Informed(eps) => SePoint::new(eps, eps),
            SeInit::Custom(p) => p,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeOptions {
    /// Weight on the previous point; 0 is the plain recursion.
    pub damping: f64,
    /// Relative change in both coordinates below which the run stops.
    pub tol: f64,
    pub max_steps: usize,
    pub quadrature: NormalIntegrator,
}

impl Default for SeOptions {
    fn default() -> Self {
        SeOptions {
            damping: 0.0,
            tol: 1e-12,
            max_steps: 10_000,
            quadrature: NormalIntegrator::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeTrajectory {
    pub points: Vec<SePoint>,
    /// Hat parameters evaluated at the matching entry of `points`.
    pub hats: Vec<HatParams>,
    pub converged: bool,
    /// Sign alternation was seen and damping 0.5 was switched on.
    pub oscillation_detected: bool,
    pub damping: f64,
}

impl SeTrajectory {
    pub fn fixed_point(&self) -> SePoint {
        *self.points.last().expect("trajectory is never empty")
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }
}

fn relative_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

const OSCILLATION_RUN: usize = 8;

pub fn run_se(params: &ModelParams, init: SeInit, opts: &SeOptions) -> Result<SeTrajectory> {
    params.validate()?;
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::invalid(format!("SE damping must lie in [0, 1), got {}", opts.damping)));
    }
    let mut p = init.point(params);
    check_point(p, params)?;
    let mut damping = opts.damping;
    let mut points = vec![p];
    let mut hats = Vec::new();
    let mut converged = false;
    let mut oscillation_detected = false;
    let mut last_sign = 0.0f64;
    let mut alternations = 0usize;
    let mut last_change = f64::INFINITY;

    for _ in 0..opts.max_steps {
        let h = hat_params(p, params)?;
        hats.push(h);
        // E first, then D from the updated E. With both read from the old
        // point, the E and D sequences seen at alternate steps decouple into
        // two chains; at η = ∞ one of them sits on the trivial fixed point.
        let e = damping * p.e + (1.0 - damping) * signal_mmse(params.rho, h.m_x, &opts.quadrature);
        let h_mid = hat_params(SePoint::new(e, p.d), params)?;
        let next = SePoint {
            e,
            d: damping * p.d + (1.0 - damping) * matrix_mmse(params.eta, h_mid.m_f),
        };
        let change = relative_change(next.e, p.e).max(relative_change(next.d, p.d));

        // Escaping a saddle can also flip the sign every step, but with
        // growing steps; only a sustained back-and-forth counts.
        let sign = (next.e - p.e).signum();
        if sign != 0.0 && sign == -last_sign && change <= 1.01 * last_change {
            alternations += 1;
        } else {
            alternations = 0;
        }
        last_sign = sign;
        last_change = change;
        if damping == 0.0 && alternations >= OSCILLATION_RUN {
            damping = 0.5;
            oscillation_detected = true;
        }

        p = next;
        points.push(p);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    hats.push(hat_params(p, params)?);
    Ok(SeTrajectory {
        points,
        hats,
        converged,
        oscillation_detected,
        damping,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basin {
    Uninformative,
    Informed,
    Both,
    /// Reached from a grid cell of the potential scan.
    Refined,
}

impl Basin {
    pub fn as_str(self) -> &'static str {
        match self {
            Basin::Uninformative => "uninformative",
            Basin::Informed => "informed",
            Basin::Both => "both",
            Basin::Refined => "refined",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPoint {
    pub point: SePoint,
    pub phi: f64,
    pub basin: Basin,
    pub converged: bool,
}

pub const INFORMED_START: f64 = 1e-10;

/// Checks that a converged point is a stationary point of the potential.
pub fn check_stationary(p: SePoint, params: &ModelParams) -> Result<f64> {
    let g = potential_log_gradient(p, params)?;
    let norm = g[0].hypot(g[1]);
    if !(norm <= STATIONARITY_TOL) {
        return Err(Error::Consistency(format!(
            "potential gradient {norm:e} at SE fixed point (E={}, D={})",
            p.e, p.d
        )));
    }
    Ok(norm)
}

/// Fixed points reached from the uninformative and informed starts.
pub fn se_fixed_points_with(params: &ModelParams, opts: &SeOptions) -> Result<Vec<FixedPoint>> {
    let mut out: Vec<FixedPoint> = Vec::new();
    for (init, basin) in [
        (SeInit::Uninformative, Basin::Uninformative),
        (SeInit::Informed(INFORMED_START), Basin::Informed),
    ] {
        let traj = run_se(params, init, opts)?;
        let p = traj.fixed_point();
        if let Some(existing) = out.iter_mut().find(|f| {
            (f.point.e - p.e).abs() <= FIXED_POINT_DEDUP && (f.point.d - p.d).abs() <= FIXED_POINT_DEDUP
        }) {
            existing.basin = Basin::Both;
            existing.converged |= traj.converged;
            continue;
        }
        if traj.converged {
            check_stationary(p, params)?;
        }
        out.push(FixedPoint {
            point: p,
            phi: potential_with(p, params, &opts.quadrature)?,
            basin,
            converged: traj.converged,
        });
    }
    Ok(out)
}

pub fn se_fixed_points(params: &ModelParams) -> Result<Vec<FixedPoint>> {
    se_fixed_points_with(params, &SeOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pi: f64, delta: f64, eta: Eta) -> ModelParams {
        ModelParams::new(0.5, pi, 0.2, delta, eta).unwrap()
    }

    #[test]
    fn hat_parameter_examples() {
        let p = params(4.0, 1e-3, Eta::Finite(1e-2));
        let h = hat_params(SePoint::new(0.2, 1.0), &p).unwrap();
        assert_eq!((h.m_x, h.m_f), (0.0, 0.0));
        let h = hat_params(SePoint::new(0.0, 0.0), &p).unwrap();
        assert!((h.m_x - 0.5 / 1e-3).abs() < 1e-9);
        assert!((h.m_f - 0.8 / 1e-3).abs() < 1e-9);
        let p0 = params(4.0, 0.0, Eta::Finite(1e-2));
        let h = hat_params(SePoint::new(0.1, 0.005), &p0).unwrap();
        assert!((h.m_x - 4.9502).abs() < 1e-4);
        assert!((h.m_f - 3.9801).abs() < 1e-4);
        assert!(hat_params(SePoint::new(0.3, 0.5), &p0).is_err());
    }

    #[test]
    fn zero_information_step() {
        let p = params(4.0, 1e-8, Eta::Finite(1e-2));
        let next = se_step(SePoint::new(0.2, 1.0), &p).unwrap();
        assert_eq!(next.e, 0.2);
        assert!((next.d - 1e-2 / 1.01).abs() < 1e-16);
        let inf = params(4.0, 1e-8, Eta::Infinite);
        assert_eq!(se_step(SePoint::new(0.2, 1.0), &inf).unwrap(), SePoint::new(0.2, 1.0));
    }

    #[test]
    fn exact_recovery_persists() {
        // Linearised around E = D = 0: E = ρQ/α, D = Q/(πρ), Q = Δ/(1 − ρ/α − 1/π).
        let p = params(4.0, 0.0, Eta::Finite(1e-2));
        let f = crate::params::DELTA_FLOOR;
        let q = f / (1.0 - 0.2 / 0.5 - 1.0 / 4.0);
        let mut pt = SePoint::new(f, f);
        for _ in 0..200 {
            pt = se_step(pt, &p).unwrap();
            assert!(pt.e <= 10.0 * q && pt.d <= 10.0 * q, "{pt:?}");
        }
        assert!((pt.e - 0.4 * q).abs() <= 1e-2 * q, "{pt:?}");
        assert!((pt.d - q / 0.8).abs() <= 1e-2 * q, "{pt:?}");
    }

    #[test]
    fn signal_mmse_is_quadrature_stable() {
        let q = NormalIntegrator::default();
        let q2 = q.doubled();
        for rho in [0.05, 0.2, 0.5, 1.0] {
            for m in [1e-3, 0.1, 1.0, 10.0, 1e3, 1e6, 1e9, 1e12] {
                let a = signal_mmse(rho, m, &q);
                let b = signal_mmse(rho, m, &q2);
                assert!((a - b).abs() <= 1e-10 * a.max(1e-300) + 1e-300, "rho={rho} m={m}: {a} {b}");
                assert!(a <= rho);
            }
        }
    }

    #[test]
    fn signal_mmse_gaussian_case() {
        let q = NormalIntegrator::default();
        for m in [0.01, 1.0, 100.0] {
            assert!((signal_mmse(1.0, m, &q) - 1.0 / (1.0 + m)).abs() < 1e-14);
        }
    }

    #[test]
    fn known_matrix_limit_keeps_d_at_floor() {
        let p = params(4.0, 1e-8, Eta::Finite(1e-10));
        let traj = run_se(&p, SeInit::Uninformative, &SeOptions::default()).unwrap();
        assert!(traj.points.iter().skip(1).all(|q| q.d <= 1e-10));
    }

    #[test]
    fn informed_start_converges_above_threshold() {
        let p = params(4.0, 0.0, Eta::Finite(1e-2));
        let traj = run_se(&p, SeInit::Informed(1e-10), &SeOptions::default()).unwrap();
        assert!(traj.converged);
        let fp = traj.fixed_point();
        assert!(fp.e <= 1e-8 && fp.d <= 1e-8, "{fp:?}");
        assert_eq!(traj.hats.len(), traj.points.len());
    }

    #[test]
    fn single_fixed_point_below_threshold() {
        let p = params(1.5, 0.0, Eta::Finite(1e-2));
        let fps = se_fixed_points(&p).unwrap();
        assert_eq!(fps.len(), 1, "{fps:?}");
        assert_eq!(fps[0].basin, Basin::Both);
        assert!(fps[0].point.e > 1e-4);
    }

    #[test]
    fn large_noise_has_one_fixed_point() {
        let p = params(3.0, 0.1, Eta::Finite(1e-2));
        let fps = se_fixed_points(&p).unwrap();
        assert_eq!(fps.len(), 1, "{fps:?}");
    }

    #[test]
    fn step_never_exceeds_prior_or_floor() {
        let p = params(2.5, 1e-6, Eta::Finite(1e-2));
        for e in [1e-9, 1e-4, 0.05, 0.2] {
            for d in [1e-9, 1e-3, 0.5, 1.0] {
                let next = se_step(SePoint::new(e, d), &p).unwrap();
                assert!(next.e <= 0.2 && next.d <= 1e-2 / 1.01 * (1.0 + 1e-15));
            }
        }
    }
}
