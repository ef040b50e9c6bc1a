//! Replica-symmetric potential `Φ(E, D)`, its maximiser, and the two phase
//! boundaries in the sample ratio `π`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{Eta, ModelParams, DELTA_FLOOR};
use crate::quadrature::{NormalIntegrator, Transition};
use crate::state_evolution::{
    check_stationary, denominator, hat_params, run_se, se_fixed_points_with, Basin, FixedPoint, SeInit, SeOptions,
    SePoint, FIXED_POINT_DEDUP,
};

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

/// `E_z log(1−ρ + c e^{b z²})` with `c = ρ/√(m̂+1)`, `b = m̂/(2(m̂+1))`.
fn spike_log_integral(rho: f64, m: f64, quad: &NormalIntegrator) -> f64 {
    let ln_c = rho.ln() - 0.5 * m.ln_1p();
    let b = m / (2.0 * (m + 1.0));
    let ln_spike = (1.0 - rho).ln();
    if rho >= 1.0 {
        return ln_c + b;
    }
    quad.expect_even(
        Some(Transition {
            offset: ln_c - ln_spike,
            curvature: b,
        }),
        |z| logaddexp(ln_spike, ln_c + b * z * z),
    )
}

/// `E_z log((1−ρ) e^{−m̂ z²/2} + c)`: the slab integral with its `m̂/2` growth removed.
fn slab_log_integral(rho: f64, m: f64, quad: &NormalIntegrator) -> f64 {
    let ln_c = rho.ln() - 0.5 * m.ln_1p();
    if rho >= 1.0 {
        return ln_c;
    }
    let a = 0.5 * m;
    let ln_spike = (1.0 - rho).ln();
    quad.expect_even(
        Some(Transition {
            offset: ln_spike - ln_c,
            curvature: -a,
        }),
        |z| logaddexp(ln_spike - a * z * z, ln_c),
    )
}

fn check_potential_domain(p: SePoint, params: &ModelParams) -> Result<()> {
    let ok = p.e.is_finite()
        && p.d.is_finite()
        && p.e >= 0.0
        && p.d >= 0.0
        && p.e <= params.rho
        && p.d <= 1.0;
    if !ok {
        return Err(Error::domain(format!(
            "potential needs E in [0, rho] and D in [0, 1], got ({}, {})",
            p.e, p.d
        )));
    }
    Ok(())
}

pub fn potential_with(p: SePoint, params: &ModelParams, quad: &NormalIntegrator) -> Result<f64> {
    params.validate()?;
    check_potential_domain(p, params)?;
    let q = denominator(p, params);
    let h = hat_params(p, params)?;
    let (alpha, pi, rho) = (params.alpha, params.pi, params.rho);
    let delta = params.floored_delta();

    let mut phi = -0.5 * alpha * q.ln() - 0.5 * alpha * (delta + p.e * p.d) / q;
    if h.m_x > 0.0 {
        phi += (1.0 - rho) * spike_log_integral(rho, h.m_x, quad) + rho * slab_log_integral(rho, h.m_x, quad);
    }
    let side = match params.eta {
        Eta::Infinite => h.m_f.ln_1p(),
        Eta::Finite(e) => (h.m_f * e / (1.0 + e)).ln_1p(),
    };
    phi -= alpha / (2.0 * pi) * side;
    Ok(phi)
}

pub fn potential(p: SePoint, params: &ModelParams) -> Result<f64> {
    potential_with(p, params, &NormalIntegrator::default())
}

const GRADIENT_STEP: f64 = 1e-4;

/// `(E ∂Φ/∂E, D ∂Φ/∂D)` by finite differences in the logarithms of the
/// coordinates; one-sided second-order differences next to `E = ρ` and `D = 1`.
pub fn potential_log_gradient(p: SePoint, params: &ModelParams) -> Result<[f64; 2]> {
    let quad = NormalIntegrator::default();
    let phi = |e: f64, d: f64| potential_with(SePoint::new(e, d), params, &quad);
    let h = GRADIENT_STEP;

    let grad_along = |x: f64, upper: f64, eval: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let dx = h * x;
        if x + dx <= upper {
            Ok((eval(x + dx)? - eval(x - dx)?) / (2.0 * h))
        } else {
            Ok((3.0 * eval(x)? - 4.0 * eval(x - dx)? + eval(x - 2.0 * dx)?) / (2.0 * h))
        }
    };
    let ge = grad_along(p.e, params.rho, &|e| phi(e, p.d))?;
    let gd = grad_along(p.d, 1.0, &|d| phi(p.e, d))?;
    Ok([ge, gd])
}

#[derive(Clone, Debug)]
pub struct Mmse {
    pub point: SePoint,
    pub phi: f64,
    pub candidates: Vec<FixedPoint>,
    /// A safety-net grid cell beat every fixed point and seeded an extra SE run.
    pub refined: bool,
}

pub const GRID_SIZE: usize = 40;
pub const GRID_MIN: f64 = 1e-12;
const GRID_MARGIN: f64 = 1e-6;
const PHI_TIE: f64 = 1e-9;

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

fn best_candidate(cands: &[FixedPoint]) -> FixedPoint {
    let mut best = cands[0];
    for c in &cands[1..] {
        let better = c.phi > best.phi + PHI_TIE || ((c.phi - best.phi).abs() <= PHI_TIE && c.point.e < best.point.e);
        if better {
            best = *c;
        }
    }
    best
}

/// Highest-potential SE fixed point, guarded by a log-spaced grid scan.
pub fn mmse_with(params: &ModelParams, opts: &SeOptions) -> Result<Mmse> {
    let mut candidates = se_fixed_points_with(params, opts)?;
    let best_phi = candidates.iter().map(|c| c.phi).fold(f64::NEG_INFINITY, f64::max);

    let es = log_spaced(GRID_MIN, params.rho, GRID_SIZE);
    let ds = log_spaced(GRID_MIN, 1.0, GRID_SIZE);
    let mut top: Option<(f64, SePoint)> = None;
    for &e in &es {
        for &d in &ds {
            let p = SePoint::new(e, d);
            let v = potential_with(p, params, &opts.quadrature)?;
            if v > best_phi + GRID_MARGIN && top.is_none_or(|(t, _)| v > t) {
                top = Some((v, p));
            }
        }
    }
    let refined = top.is_some();
    if let Some((_, start)) = top {
        let traj = run_se(params, SeInit::Custom(start), opts)?;
        let p = traj.fixed_point();
        let known = candidates.iter().any(|c| {
            (c.point.e - p.e).abs() <= FIXED_POINT_DEDUP && (c.point.d - p.d).abs() <= FIXED_POINT_DEDUP
        });
        if !known {
            if traj.converged {
                check_stationary(p, params)?;
            }
            candidates.push(FixedPoint {
                point: p,
                phi: potential_with(p, params, &opts.quadrature)?,
                basin: Basin::Refined,
                converged: traj.converged,
            });
        }
    }
    let best = best_candidate(&candidates);
    Ok(Mmse {
        point: best.point,
        phi: best.phi,
        candidates,
        refined,
    })
}

pub fn mmse(params: &ModelParams) -> Result<Mmse> {
    mmse_with(params, &SeOptions::default())
}

/// Exact-recovery threshold `α/(α−ρ)`, defined for `α > ρ`.
pub fn pi_star(alpha: f64, rho: f64) -> Option<f64> {
    (alpha > rho).then(|| alpha / (alpha - rho))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Spinodal {
    /// SE already succeeds just above `π*`.
    NoHardPhase,
    At(f64),
    /// SE still fails at the top of the scan range.
    BeyondRange,
}

impl Spinodal {
    pub fn value(self) -> Option<f64> {
        match self {
            Spinodal::At(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpinodalOptions {
    pub pi_max: f64,
    pub tol: f64,
    /// Points of the coarse scan that precedes bisection.
    pub scan_points: usize,
    pub se: SeOptions,
}

impl Default for SpinodalOptions {
    fn default() -> Self {
        SpinodalOptions {
            pi_max: 20.0,
            tol: 1e-3,
            scan_points: 40,
            se: SeOptions::default(),
        }
    }
}

/// SE from the uninformative start ends at `E ≤ 10·max(Δ, Δ_floor)`.
pub fn uninformative_succeeds(params: &ModelParams, opts: &SeOptions) -> Result<bool> {
    let traj = run_se(params, SeInit::Uninformative, opts)?;
    Ok(traj.fixed_point().e <= 10.0 * params.delta.max(DELTA_FLOOR))
}

pub fn spinodal_pi_with(alpha: f64, rho: f64, eta: Eta, delta: f64, opts: &SpinodalOptions) -> Result<Spinodal> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("spinodal tolerance must be > 0"));
    }
    let Some(star) = pi_star(alpha, rho) else {
        return Err(Error::domain(format!("no exact-recovery threshold for alpha={alpha} <= rho={rho}")));
    };
    let base = ModelParams::new(alpha, star, rho, delta, eta)?;
    let lo = star + opts.tol;
    if !(opts.pi_max > lo) {
        return Err(Error::invalid(format!("pi_max {} must exceed pi* + tol = {lo}", opts.pi_max)));
    }
    let n = opts.scan_points.max(2);
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (opts.pi_max - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let samples: Vec<(f64, bool)> = grid
        .par_iter()
        .map(|&pi| uninformative_succeeds(&base.with_pi(pi), &opts.se).map(|ok| (pi, ok)))
        .collect::<Result<_>>()?;

    let first_true = samples.iter().position(|s| s.1);
    let monotone = match first_true {
        Some(k) => samples[k..].iter().all(|s| s.1),
        None => true,
    };
    if !monotone {
        return Err(Error::Scan { samples });
    }
    match first_true {
        None => Ok(Spinodal::BeyondRange),
        Some(0) => Ok(Spinodal::NoHardPhase),
        Some(k) => {
            let (mut a, mut b) = (samples[k - 1].0, samples[k].0);
            while b - a > opts.tol {
                let mid = 0.5 * (a + b);
                if uninformative_succeeds(&base.with_pi(mid), &opts.se)? {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            Ok(Spinodal::At(0.5 * (a + b)))
        }
    }
}

pub fn spinodal_pi(alpha: f64, rho: f64, eta: Eta, delta: f64, tol: f64) -> Result<Spinodal> {
    spinodal_pi_with(
        alpha,
        rho,
        eta,
        delta,
        &SpinodalOptions {
            tol,
            ..SpinodalOptions::default()
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseTag {
    Impossible,
    Hard,
    Tractable,
    Failed,
}

impl PhaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseTag::Impossible => "impossible",
            PhaseTag::Hard => "hard",
            PhaseTag::Tractable => "tractable",
            PhaseTag::Failed => "failed",
        }
    }
}

/// Factor over `max(Δ, Δ_floor)` below which `E` counts as exact recovery
/// when tagging phases.
pub const RECOVERY_FACTOR: f64 = 1e4;

#[derive(Clone, Debug)]
pub struct CurvePoint {
    pub pi: f64,
    pub e: f64,
    pub d: f64,
    pub phi: f64,
    pub phase: PhaseTag,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct PhaseRecord {
    pub alpha: f64,
    pub rho: f64,
    pub eta: Eta,
    pub delta: f64,
    pub pi_star: Option<f64>,
    /// `None` when the spinodal search failed; see `spinodal_error`.
    pub pi_spinodal: Option<Spinodal>,
    pub spinodal_error: Option<String>,
    pub mmse_curve: Vec<CurvePoint>,
}

fn phase_cell(params: &ModelParams, opts: &SeOptions) -> CurvePoint {
    let threshold = RECOVERY_FACTOR * params.delta.max(DELTA_FLOOR);
    let result = mmse_with(params, opts);
    match result {
        Ok(m) => {
            let phase = if m.point.e > threshold {
                PhaseTag::Impossible
            } else {
                let uninf = m
                    .candidates
                    .iter()
                    .find(|c| matches!(c.basin, Basin::Uninformative | Basin::Both))
                    .map(|c| c.point.e);
                match uninf {
                    Some(e) if e <= threshold => PhaseTag::Tractable,
                    _ => PhaseTag::Hard,
                }
            };
            CurvePoint {
                pi: params.pi,
                e: m.point.e,
                d: m.point.d,
                phi: m.phi,
                phase,
                error: None,
            }
        }
        Err(err) => CurvePoint {
            pi: params.pi,
            e: f64::NAN,
            d: f64::NAN,
            phi: f64::NAN,
            phase: PhaseTag::Failed,
            error: Some(err.to_string()),
        },
    }
}

/// One record per `ρ`, each with the MMSE curve over `pi_grid`.
pub fn phase_diagram_with(
    alpha: f64,
    delta: f64,
    eta: Eta,
    rho_grid: &[f64],
    pi_grid: &[f64],
    opts: &SpinodalOptions,
) -> Result<Vec<PhaseRecord>> {
    if rho_grid.is_empty() || pi_grid.is_empty() {
        return Err(Error::invalid("phase diagram needs nonempty rho and pi grids"));
    }
    for &rho in rho_grid {
        for &pi in pi_grid {
            ModelParams::new(alpha, pi, rho, delta, eta)?;
        }
    }
    let records = rho_grid
        .par_iter()
        .map(|&rho| {
            let star = pi_star(alpha, rho);
            let (pi_spinodal, spinodal_error) = if star.is_some() {
                match spinodal_pi_with(alpha, rho, eta, delta, opts) {
                    Ok(s) => (Some(s), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            } else {
                (None, Some("alpha <= rho: no exact-recovery threshold".to_string()))
            };
            let mmse_curve = pi_grid
                .par_iter()
                .map(|&pi| {
                    let params = ModelParams::new(alpha, pi, rho, delta, eta).expect("validated above");
                    phase_cell(&params, &opts.se)
                })
                .collect();
            PhaseRecord {
                alpha,
                rho,
                eta,
                delta,
                pi_star: star,
                pi_spinodal,
                spinodal_error,
                mmse_curve,
            }
        })
        .collect();
    Ok(records)
}

pub fn phase_diagram(alpha: f64, delta: f64, eta: Eta, rho_grid: &[f64], pi_grid: &[f64]) -> Result<Vec<PhaseRecord>> {
    phase_diagram_with(alpha, delta, eta, rho_grid, pi_grid, &SpinodalOptions::default())
}
