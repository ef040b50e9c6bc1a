//! Approximate message passing for blind calibration and dictionary learning.
//!
//! One sweep updates the residual field `ω` with its Onsager correction,
//! forms the scalar channel variances `Σ_R²`, `Σ_S²` and the pseudo-data
//! `R`, `S`, and passes them through the scalar denoisers. Only `a, v, r, s`
//! are damped; the other quantities are recomputed every sweep.
//!
//! By default the signal variance `c̄`, the squared mean `ā²` and the residual
//! are averaged per signal column, since the columns are separate regression
//! problems sharing one matrix. `AmpOptions::column_variances = false` gives
//! the fully pooled averages.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::denoisers::{MatrixPrior, SignalPrior};
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::metrics::{align_dictionary, mse_matrix, mse_signal};
use crate::params::Eta;
use crate::rng::{standard_normal, substream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Matrix prior centred on the side information `F'`.
    Calibration,
    /// No side information; the matrix prior is standard Gaussian and errors
    /// are measured after permutation/sign alignment.
    Dictionary,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Calibration => "calibration",
            Mode::Dictionary => "dictionary",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "calibration" => Ok(Mode::Calibration),
            "dictionary" => Ok(Mode::Dictionary),
            _ => Err(Error::invalid(format!("unknown mode {s:?} (calibration|dictionary)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmpOptions {
    /// Weight on the freshly computed `a, v, r, s`, in `(0, 1]`.
    pub damping: f64,
    pub max_iter: usize,
    /// Stop once the largest change of `a` between sweeps is below this.
    pub conv_tol: f64,
    /// Scale of the initial jitter on `a` (and on `r` in dictionary mode).
    pub init_jitter: f64,
    /// Floor for the residual and the squared-mean overlines.
    pub delta_floor: f64,
    pub mode: Mode,
    /// Seed of the jitter stream; the instance seed when `None`.
    pub jitter_seed: Option<u64>,
    /// Take the signal averages and the residual per signal column. When
    /// false every average runs over the whole instance, which couples the
    /// columns and stalls at moderate sizes.
    pub column_variances: bool,
}

impl Default for AmpOptions {
    fn default() -> Self {
        AmpOptions {
            damping: 0.5,
            max_iter: 500,
            conv_tol: 1e-8,
            init_jitter: 0.1,
            delta_floor: 1e-12,
            mode: Mode::Calibration,
            jitter_seed: None,
            column_variances: true,
        }
    }
}

impl AmpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.conv_tol > 0.0) {
            return Err(Error::invalid(format!("conv_tol must be > 0, got {}", self.conv_tol)));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::invalid(format!("init_jitter must be >= 0, got {}", self.init_jitter)));
        }
        if !(self.delta_floor > 0.0 && self.delta_floor.is_finite()) {
            return Err(Error::invalid(format!("delta_floor must be > 0, got {}", self.delta_floor)));
        }
        Ok(())
    }
}

/// Scalar averages shared by every element update of one sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlines {
    pub a2: f64,
    pub c: f64,
    pub r2: f64,
    pub s: f64,
    pub resid: f64,
}

impl Overlines {
    /// Raw averages, before any flooring.
    pub fn of(state: &AmpState, y: &Array2<f64>) -> Overlines {
        let m = state.r.nrows() as f64;
        let resid = Zip::from(y).and(&state.omega).fold(0.0, |acc, &yv, &w| acc + (yv - w) * (yv - w))
            / y.len() as f64;
        Overlines {
            a2: state.a.iter().map(|x| x * x).sum::<f64>() / state.a.len() as f64,
            c: state.v.sum() / state.v.len() as f64,
            r2: state.r.iter().map(|x| x * x).sum::<f64>() / m,
            s: state.s.sum() / m,
            resid,
        }
    }

    fn floored(self, floor: f64) -> Overlines {
        Overlines {
            a2: self.a2.max(floor),
            r2: self.r2.max(floor),
            resid: self.resid.max(floor),
            ..self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmpState {
    /// `N × P` signal means.
    pub a: Array2<f64>,
    /// `N × P` signal variances.
    pub v: Array2<f64>,
    /// `M × N` means of the scaled matrix `F/√N`.
    pub r: Array2<f64>,
    /// `M × N` variances of the scaled matrix.
    pub s: Array2<f64>,
    /// `M × P` residual field.
    pub omega: Array2<f64>,
    /// Averages of the current state, as used by the next sweep.
    pub overlines: Overlines,
    pub t: usize,
    /// Negative variances set to zero so far.
    pub clamped: usize,
}

fn check_mode(inst: &ProblemInstance, mode: Mode) -> Result<()> {
    if mode == Mode::Calibration && inst.fprime.is_none() {
        return Err(Error::invalid("calibration mode needs side information (finite eta)"));
    }
    Ok(())
}

/// Initial state with explicitly supplied standard-normal jitter draws.
///
/// `jitter_a` is `N × P`; `jitter_r` is `M × N` and only read in dictionary mode.
pub fn init_state_with_jitter(
    inst: &ProblemInstance,
    opts: &AmpOptions,
    jitter_a: &Array2<f64>,
    jitter_r: &Array2<f64>,
) -> Result<AmpState> {
    opts.validate()?;
    check_mode(inst, opts.mode)?;
    let (n, m, p) = (inst.n, inst.m, inst.p);
    if jitter_a.dim() != (n, p) || jitter_r.dim() != (m, n) {
        return Err(Error::ShapeMismatch("jitter arrays do not match the instance".into()));
    }
    let rho = inst.params.rho;
    let nf = n as f64;
    let a = jitter_a * (opts.init_jitter * rho.sqrt());
    let v = Array2::from_elem((n, p), rho);
    let (r, s) = match opts.mode {
        Mode::Calibration => {
            let fp = inst.fprime.as_ref().expect("checked above");
            let eta = inst.params.eta;
            let r = fp * (eta.conditional_mean_scale() / nf.sqrt());
            (r, Array2::from_elem((m, n), eta.conditional_variance() / nf))
        }
        Mode::Dictionary => (jitter_r * (opts.init_jitter / nf.sqrt()), Array2::from_elem((m, n), 1.0 / nf)),
    };
    let mut state = AmpState {
        a,
        v,
        r,
        s,
        omega: inst.y.clone(),
        overlines: Overlines {
            a2: 0.0,
            c: 0.0,
            r2: 0.0,
            s: 0.0,
            resid: 0.0,
        },
        t: 0,
        clamped: 0,
    };
    state.overlines = Overlines::of(&state, &inst.y);
    Ok(state)
}

/// Standard-normal jitter draws for `a` and `r` from the jitter stream.
pub fn jitter_draws(inst: &ProblemInstance, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = substream(seed, Stream::Jitter);
    let ja = Array2::from_shape_simple_fn((inst.n, inst.p), || standard_normal(&mut rng));
    let jr = Array2::from_shape_simple_fn((inst.m, inst.n), || standard_normal(&mut rng));
    (ja, jr)
}

pub fn init_state(inst: &ProblemInstance, opts: &AmpOptions) -> Result<AmpState> {
    let (ja, jr) = jitter_draws(inst, opts.jitter_seed.unwrap_or(inst.seed));
    init_state_with_jitter(inst, opts, &ja, &jr)
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

fn matrix_eta(inst: &ProblemInstance, mode: Mode) -> Eta {
    match mode {
        Mode::Calibration => inst.params.eta,
        Mode::Dictionary => Eta::Infinite,
    }
}

type Fields = (Array2<f64>, Array1<f64>, f64, Array2<f64>, Array2<f64>);

fn mean_square(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// The written form: every average is taken over the whole instance.
fn global_fields(state: &AmpState, y: &Array2<f64>, ov: &Overlines, alpha: f64, pi: f64, p: usize, floor: f64) -> Fields {
    let onsager = (ov.c * ov.r2 + ov.a2 * ov.s) / ov.resid;
    let mut omega = state.r.dot(&state.a);
    Zip::from(&mut omega)
        .and(y)
        .and(&state.omega)
        .for_each(|w, &yv, &old| *w -= (yv - old) * onsager);
    let g = y - &omega;
    let resid = mean_square(&g).max(floor);

    let sigma_r2 = Array1::from_elem(p, resid / (alpha * ov.r2));
    let sigma_s2 = resid / (pi * ov.a2);

    let mut big_r = state.r.t().dot(&g);
    big_r /= alpha * ov.r2;
    big_r.scaled_add(1.0 - ov.s / ov.r2, &state.a);

    let mut big_s = g.dot(&state.a.t());
    big_s /= p as f64 * ov.a2;
    big_s.scaled_add(1.0 - ov.c / ov.a2, &state.r);
    (omega, sigma_r2, sigma_s2, big_r, big_s)
}

/// Signal-side averages and the residual taken per column `l`; each column
/// then enters the matrix field with weight `1 / resid_l`.
fn column_fields(state: &AmpState, y: &Array2<f64>, ov: &Overlines, alpha: f64, floor: f64) -> Fields {
    let n = state.a.nrows() as f64;
    let col_mean = |x: &Array2<f64>, f: fn(f64) -> f64| -> Array1<f64> {
        x.axis_iter(Axis(1)).map(|c| c.iter().map(|&v| f(v)).sum::<f64>() / c.len() as f64).collect()
    };
    let c_l = col_mean(&state.v, |v| v);
    let a2_l = col_mean(&state.a, |v| v * v);
    let old = y - &state.omega;
    let resid_old = col_mean(&old, |v| v * v).mapv(|v| v.max(floor));

    let mut omega = state.r.dot(&state.a);
    for l in 0..omega.ncols() {
        let k = (c_l[l] * ov.r2 + a2_l[l] * ov.s) / resid_old[l];
        Zip::from(omega.column_mut(l)).and(old.column(l)).for_each(|w, &o| *w -= o * k);
    }
    let g = y - &omega;
    let resid = col_mean(&g, |v| v * v).mapv(|v| v.max(floor));
    let w = resid.mapv(|v| 1.0 / v);

    let sigma_r2 = resid.mapv(|v| v / (alpha * ov.r2));
    let mut big_r = state.r.t().dot(&g);
    big_r /= alpha * ov.r2;
    big_r.scaled_add(1.0 - ov.s / ov.r2, &state.a);

    let weight_a2 = (&a2_l * &w).sum().max(floor);
    let sigma_s2 = n / weight_a2;
    let gw = &g * &w;
    let mut big_s = gw.dot(&state.a.t());
    big_s *= sigma_s2 / n;
    big_s.scaled_add(1.0 - (&c_l * &w).sum() / weight_a2, &state.r);
    (omega, sigma_r2, sigma_s2, big_r, big_s)
}

/// One full sweep with damping weight `damping`.
fn sweep(state: &AmpState, inst: &ProblemInstance, opts: &AmpOptions, damping: f64) -> Result<AmpState> {
    let y = &inst.y;
    let (n, m, p) = (inst.n, inst.m, inst.p);
    let alpha = m as f64 / n as f64;
    let pi = p as f64 / n as f64;
    let ov = Overlines::of(state, y).floored(opts.delta_floor);

    let (omega, sigma_r2, sigma_s2, big_r, big_s) = if opts.column_variances {
        column_fields(state, y, &ov, alpha, opts.delta_floor)
    } else {
        global_fields(state, y, &ov, alpha, pi, p, opts.delta_floor)
    };
    let prior = SignalPrior::new(inst.params.rho)?;
    let mut a_new = Array2::zeros((n, p));
    let mut v_new = Array2::zeros((n, p));
    for (l, s2) in sigma_r2.iter().enumerate() {
        Zip::from(a_new.column_mut(l))
            .and(v_new.column_mut(l))
            .and(big_r.column(l))
            .for_each(|a, v, &t| {
                let (mean, var) = prior.posterior(*s2, t);
                *a = mean;
                *v = var;
            });
    }

    let eta = matrix_eta(inst, opts.mode);
    let mut r_new = Array2::zeros((m, n));
    let mut s_new = Array2::zeros((m, n));
    match (opts.mode, inst.fprime.as_ref()) {
        (Mode::Calibration, Some(fp)) => {
            Zip::from(&mut r_new).and(&mut s_new).and(&big_s).and(fp).for_each(|r, s, &t, &side| {
                let (mean, var) = MatrixPrior::new(eta, side).posterior(sigma_s2, t, n);
                *r = mean;
                *s = var;
            });
        }
        _ => {
            let mp = MatrixPrior::new(Eta::Infinite, 0.0);
            Zip::from(&mut r_new).and(&mut s_new).and(&big_s).for_each(|r, s, &t| {
                let (mean, var) = mp.posterior(sigma_s2, t, n);
                *r = mean;
                *s = var;
            });
        }
    }

    let damp = |old: &Array2<f64>, new: &mut Array2<f64>| {
        Zip::from(new).and(old).for_each(|x, &o| *x = o + damping * (*x - o));
    };
    damp(&state.a, &mut a_new);
    damp(&state.v, &mut v_new);
    damp(&state.r, &mut r_new);
    damp(&state.s, &mut s_new);

    let mut clamped = state.clamped;
    for x in v_new.iter_mut().chain(s_new.iter_mut()) {
        if *x < 0.0 {
            *x = 0.0;
            clamped += 1;
        }
    }

    let mut next = AmpState {
        a: a_new,
        v: v_new,
        r: r_new,
        s: s_new,
        omega,
        overlines: ov,
        t: state.t + 1,
        clamped,
    };
    let finite = all_finite(&next.a)
        && all_finite(&next.v)
        && all_finite(&next.r)
        && all_finite(&next.s)
        && all_finite(&next.omega);
    if !finite {
        return Err(Error::Divergence {
            iteration: next.t,
            partial: Box::new(AmpResult::empty()),
        });
    }
    next.overlines = Overlines::of(&next, y);
    Ok(next)
}

/// One sweep with the configured damping.
pub fn amp_iterate(state: &AmpState, inst: &ProblemInstance, opts: &AmpOptions) -> Result<AmpState> {
    opts.validate()?;
    check_mode(inst, opts.mode)?;
    sweep(state, inst, opts, opts.damping)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub e: f64,
    pub d: f64,
    /// `(1/MP) Σ (Y − r a)²`.
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AmpResult {
    pub a: Array2<f64>,
    pub r: Array2<f64>,
    /// One entry per completed sweep plus the initial state.
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
    pub iterations: usize,
    pub clamped: usize,
    /// Damping in force at the end (halved after a recovered divergence).
    pub damping: f64,
}

impl AmpResult {
    fn empty() -> Self {
        AmpResult::default()
    }

    pub fn last(&self) -> Option<&TrajectoryPoint> {
        self.trajectory.last()
    }
}

/// Errors of the current state against the ground truth.
pub fn measure(state: &AmpState, inst: &ProblemInstance, mode: Mode) -> Result<TrajectoryPoint> {
    let pred = state.r.dot(&state.a);
    let residual = (&inst.y - &pred).iter().map(|x| x * x).sum::<f64>() / inst.y.len() as f64;
    let (e, d) = match mode {
        Mode::Calibration => (
            mse_signal(state.a.view(), inst.x0.view())?,
            mse_matrix(state.r.view(), inst.f0.view(), inst.n)?,
        ),
        Mode::Dictionary => {
            let scaled = &state.r * (inst.n as f64).sqrt();
            let al = align_dictionary(scaled.view(), inst.f0.view())?;
            let a = al.apply_rows(state.a.view());
            (mse_signal(a.view(), inst.x0.view())?, al.residual)
        }
    };
    Ok(TrajectoryPoint {
        t: state.t,
        e,
        d,
        residual,
    })
}

/// Iterates from `state` until convergence or `max_iter` sweeps.
pub fn run_amp_from(mut state: AmpState, inst: &ProblemInstance, opts: &AmpOptions) -> Result<AmpResult> {
    opts.validate()?;
    check_mode(inst, opts.mode)?;
    let mut damping = opts.damping;
    let mut retried = false;
    let mut trajectory = vec![measure(&state, inst, opts.mode)?];
    let mut converged = false;
    while state.t < opts.max_iter {
        let next = match sweep(&state, inst, opts, damping) {
            Ok(next) => next,
            Err(Error::Divergence { iteration, .. }) => {
                if retried {
                    let partial = AmpResult {
                        a: state.a.clone(),
                        r: state.r.clone(),
                        iterations: state.t,
                        clamped: state.clamped,
                        converged: false,
                        damping,
                        trajectory,
                    };
                    return Err(Error::Divergence {
                        iteration,
                        partial: Box::new(partial),
                    });
                }
                retried = true;
                damping *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        let change = Zip::from(&next.a)
            .and(&state.a)
            .fold(0.0f64, |acc, &x, &y| acc.max((x - y).abs()));
        state = next;
        trajectory.push(measure(&state, inst, opts.mode)?);
        if change < opts.conv_tol {
            converged = true;
            break;
        }
    }
    Ok(AmpResult {
        a: state.a,
        r: state.r,
        iterations: state.t,
        clamped: state.clamped,
        converged,
        damping,
        trajectory,
    })
}

pub fn run_amp(inst: &ProblemInstance, opts: &AmpOptions) -> Result<AmpResult> {
    let state = init_state(inst, opts)?;
    run_amp_from(state, inst, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_instance;
    use crate::params::ModelParams;

    fn instance(eta: Eta, delta: f64, n: usize, seed: u64) -> ProblemInstance {
        let p = ModelParams::new(0.5, 2.0, 0.2, delta, eta).unwrap();
        generate_instance(p, n, seed).unwrap()
    }

    #[test]
    fn initial_state_follows_priors() {
        let inst = instance(Eta::Finite(1e-2), 0.0, 100, 1);
        let st = init_state(&inst, &AmpOptions::default()).unwrap();
        assert!(st.s.iter().all(|&s| (s - 1e-2 / (100.0 * 1.01)).abs() < 1e-18));
        assert_eq!(st.omega, inst.y);
        assert!(st.v.iter().all(|&v| v == 0.2));
        let d0 = mse_matrix(st.r.view(), inst.f0.view(), inst.n).unwrap();
        assert!((d0 - 1e-2 / 1.01).abs() < 0.1 * 1e-2, "D0 = {d0}");

        let dict = AmpOptions {
            mode: Mode::Dictionary,
            ..AmpOptions::default()
        };
        let st = init_state(&inst, &dict).unwrap();
        assert!(st.s.iter().all(|&s| s == 0.01));
    }

    #[test]
    fn calibration_needs_side_information() {
        let inst = instance(Eta::Infinite, 0.0, 20, 1);
        assert!(init_state(&inst, &AmpOptions::default()).is_err());
        let bad = AmpOptions {
            damping: 0.0,
            ..AmpOptions::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let inst = instance(Eta::Finite(1e-2), 0.0, 60, 4);
        let opts = AmpOptions::default();
        let mut st = init_state(&inst, &opts).unwrap();
        st.a = inst.x0.clone();
        st.v.fill(0.0);
        st.r = inst.scaled_dictionary();
        st.s.fill(0.0);
        st.omega = inst.y.clone();
        let next = amp_iterate(&st, &inst, &opts).unwrap();
        let drift = |x: &Array2<f64>, y: &Array2<f64>| Zip::from(x).and(y).fold(0.0f64, |m, &p, &q| m.max((p - q).abs()));
        assert!(drift(&next.a, &st.a) <= 1e-10);
        assert!(drift(&next.r, &st.r) <= 1e-10);
    }

    #[test]
    fn matched_filter_first_step() {
        // Frozen exact matrix, a = 0, v = 0: R = Fᵀ y / (α r̄²).
        let inst = instance(Eta::Finite(0.0), 0.0, 40, 2);
        for column_variances in [false, true] {
            let opts = AmpOptions {
                init_jitter: 0.0,
                column_variances,
                ..AmpOptions::default()
            };
            let mut st = init_state(&inst, &opts).unwrap();
            st.v.fill(0.0);
            let ov = Overlines::of(&st, &inst.y);
            let alpha = inst.m as f64 / inst.n as f64;
            let expected = inst.scaled_dictionary().t().dot(&inst.y) / (alpha * ov.r2);
            // ω starts at y, so the refreshed residual is the mean of y².
            let pooled = inst.y.iter().map(|x| x * x).sum::<f64>() / inst.y.len() as f64;
            let prior = SignalPrior::new(0.2).unwrap();
            let next = amp_iterate(&st, &inst, &opts).unwrap();
            for l in 0..inst.p {
                let resid = if column_variances {
                    inst.y.column(l).iter().map(|x| x * x).sum::<f64>() / inst.m as f64
                } else {
                    pooled
                };
                let sigma2 = resid / (alpha * ov.r2);
                for i in 0..inst.n {
                    let want = opts.damping * prior.posterior(sigma2, expected[[i, l]]).0;
                    let got = next.a[[i, l]];
                    assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn deterministic_runs() {
        let inst = instance(Eta::Finite(1e-2), 1e-8, 40, 9);
        let opts = AmpOptions {
            max_iter: 30,
            ..AmpOptions::default()
        };
        let a = run_amp(&inst, &opts).unwrap();
        let b = run_amp(&inst, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.len(), a.iterations + 1);
        assert_eq!(a.clamped, 0);
    }

    #[test]
    fn calibration_reduces_errors() {
        let p = ModelParams::new(0.5, 4.0, 0.2, 1e-8, Eta::Finite(1e-2)).unwrap();
        let inst = generate_instance(p, 64, 3).unwrap();
        let res = run_amp(&inst, &AmpOptions::default()).unwrap();
        let first = res.trajectory[0];
        let last = *res.last().unwrap();
        assert!(last.d < first.d, "{first:?} -> {last:?}");
        assert!(last.e < first.e, "{first:?} -> {last:?}");
    }
}
