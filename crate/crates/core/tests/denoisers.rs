use mfamp::denoisers::oracle::{oracle_posterior_moments, OraclePrior};
use mfamp::denoisers::{f_a, f_c, f_r, f_s, ChannelMoment, MatrixPrior, SignalPrior};
use mfamp::quadrature::gauss_hermite;
use mfamp::Eta;
use proptest::prelude::*;

const SIGMAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
const RHOS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

fn t_grid() -> impl Iterator<Item = f64> {
    (0..=48).map(|k| -6.0 + 0.25 * k as f64)
}

fn ch(s2: f64, t: f64) -> ChannelMoment {
    ChannelMoment::new(s2, t)
}

#[test]
fn signal_moments_match_quadrature_on_grid() {
    let mut worst = 0.0f64;
    for rho in RHOS {
        let prior = SignalPrior::new(rho).unwrap();
        for s2 in SIGMAS {
            for t in t_grid() {
                let (m, v) = oracle_posterior_moments(ch(s2, t), OraclePrior::Signal(&prior)).unwrap();
                let a = f_a(ch(s2, t), &prior).unwrap();
                let c = f_c(ch(s2, t), &prior).unwrap();
                worst = worst.max((a - m).abs()).max((c - v).abs());
            }
        }
    }
    assert!(worst <= 1e-8, "largest deviation {worst:e}");
}

#[test]
fn variance_is_sigma2_times_slope() {
    let h = 1e-6;
    for rho in RHOS {
        let prior = SignalPrior::new(rho).unwrap();
        for s2 in SIGMAS {
            for t in t_grid().filter(|t| t.abs() >= 1e-3) {
                let slope = (f_a(ch(s2, t + h), &prior).unwrap() - f_a(ch(s2, t - h), &prior).unwrap()) / (2.0 * h);
                let c = f_c(ch(s2, t), &prior).unwrap();
                let rel = (c - s2 * slope).abs() / c.abs();
                assert!(rel <= 1e-5, "rho={rho} s2={s2} T={t}: f_c={c:e} fd={:e}", s2 * slope);
            }
        }
    }
}

#[test]
fn signal_examples() {
    let p = SignalPrior::new(0.2).unwrap();
    assert_eq!(f_a(ch(1.0, 0.0), &p).unwrap(), 0.0);
    assert!(f_a(ch(1e14, 3.0), &p).unwrap().abs() < 1e-12);
    assert!((f_c(ch(1e14, 0.0), &p).unwrap() - 0.2).abs() < 1e-6);
    let gauss = SignalPrior::new(1.0).unwrap();
    assert!((f_c(ch(1.0, 0.0), &gauss).unwrap() - 0.5).abs() < 1e-15);
    let (m, v) = oracle_posterior_moments(ch(0.5, 1.0), OraclePrior::Signal(&p)).unwrap();
    assert!((f_a(ch(0.5, 1.0), &p).unwrap() - m).abs() < 1e-10);
    assert!((f_c(ch(0.5, 1.0), &p).unwrap() - v).abs() < 1e-10);
}

/// Posterior of `x ~ N(m0, v0)` seen through `t = x + N(0, lv)`.
fn conjugate(m0: f64, v0: f64, t: f64, lv: f64) -> (f64, f64) {
    let prec = 1.0 / v0 + 1.0 / lv;
    ((m0 / v0 + t / lv) / prec, 1.0 / prec)
}

#[test]
fn matrix_moments_are_conjugate_gaussian() {
    let n = 100;
    for (eta, side, s2, t) in [(0.01, 1.0, 0.3, 0.05), (1.0, -0.7, 2.0, 0.3), (1e-6, 2.0, 1e-3, -0.1)] {
        let prior = MatrixPrior::new(Eta::Finite(eta), side);
        let nf = n as f64;
        let (m, v) = conjugate(side / (nf * (1.0 + eta)).sqrt(), eta / ((1.0 + eta) * nf), t, s2 / nf);
        let r = f_r(ch(s2, t), &prior, n).unwrap();
        let s = f_s(ch(s2, t), &prior, n).unwrap();
        assert!((r - m).abs() <= 1e-12 * (1.0 + m.abs()), "eta={eta}: {r} vs {m}");
        assert!((s - v).abs() <= 1e-12 * v, "eta={eta}: {s} vs {v}");
        let (qm, qv) = oracle_posterior_moments(ch(s2, t), OraclePrior::Matrix(&prior, n)).unwrap();
        assert!((qm - m).abs() < 1e-10 && (qv - v).abs() < 1e-10);
    }
}

#[test]
fn matrix_examples() {
    let free = MatrixPrior::new(Eta::Infinite, 0.0);
    assert!((f_r(ch(1.0, 0.4), &free, 1).unwrap() - 0.2).abs() < 1e-15);
    assert!((f_s(ch(1.0, 0.0), &free, 4).unwrap() - 0.125).abs() < 1e-15);
    let known = MatrixPrior::new(Eta::Finite(0.0), 1.5);
    assert!((f_r(ch(0.7, 3.0), &known, 100).unwrap() - 0.15).abs() < 1e-15);
    assert_eq!(f_s(ch(0.7, 3.0), &known, 100).unwrap(), 0.0);
    let nearly = MatrixPrior::new(Eta::Finite(1e-14), 1.5);
    assert!((f_r(ch(0.7, 3.0), &nearly, 100).unwrap() - 0.15).abs() < 1e-9);
}

#[test]
fn averaged_posterior_variance_is_below_prior_variance() {
    let gh = gauss_hermite(200);
    for rho in RHOS {
        let prior = SignalPrior::new(rho).unwrap();
        for s2 in SIGMAS {
            // E over x0 ~ prior and z ~ N(0,1) of f_c(s2, x0 + sqrt(s2) z).
            let spike = gh.expect_normal(|z| f_c(ch(s2, s2.sqrt() * z), &prior).unwrap());
            let slab = gh.expect_normal(|z| f_c(ch(s2, (1.0 + s2).sqrt() * z), &prior).unwrap());
            let mmse = (1.0 - rho) * spike + rho * slab;
            assert!(mmse <= rho + 1e-12, "rho={rho} s2={s2}: {mmse}");
            assert!(mmse >= 0.0);
        }
    }
}

proptest! {
    #[test]
    fn signal_mean_is_odd(rho in 0.01f64..=1.0, ls2 in -4.0f64..4.0, t in -20.0f64..20.0) {
        let p = SignalPrior::new(rho).unwrap();
        let s2 = 10f64.powf(ls2);
        let a = f_a(ch(s2, t), &p).unwrap();
        let b = f_a(ch(s2, -t), &p).unwrap();
        prop_assert!((a + b).abs() <= 1e-14 * (1.0 + a.abs()));
        prop_assert!(f_c(ch(s2, t), &p).unwrap() >= 0.0);
        prop_assert!(a.abs() <= t.abs() / (1.0 + s2) * (1.0 + 1e-14));
    }

    #[test]
    fn extreme_channels_stay_finite(rho in 0.001f64..=1.0, ls2 in -20.0f64..20.0, t in -1e3f64..1e3) {
        let p = SignalPrior::new(rho).unwrap();
        let s2 = 10f64.powf(ls2);
        prop_assert!(f_a(ch(s2, t), &p).unwrap().is_finite());
        prop_assert!(f_c(ch(s2, t), &p).unwrap().is_finite());
    }

    #[test]
    fn matrix_variance_is_monotone_and_bounded(leta in -8.0f64..4.0, ls2 in -6.0f64..6.0, n in 1usize..1000) {
        let eta = 10f64.powf(leta);
        let prior = MatrixPrior::new(Eta::Finite(eta), 0.3);
        let s2 = 10f64.powf(ls2);
        let lo = f_s(ch(s2, 0.0), &prior, n).unwrap();
        let hi = f_s(ch(2.0 * s2, 0.0), &prior, n).unwrap();
        let bound = eta / ((1.0 + eta) * n as f64);
        prop_assert!(lo >= 0.0 && lo <= hi * (1.0 + 1e-12));
        prop_assert!(hi <= bound * (1.0 + 1e-12));
        prop_assert!(f_r(ch(s2, 0.1), &prior, n).unwrap().is_finite());
    }
}

#[test]
fn non_finite_inputs_are_rejected() {
    let p = SignalPrior::new(0.3).unwrap();
    assert!(f_a(ch(f64::NAN, 1.0), &p).is_err());
    assert!(f_c(ch(1.0, f64::INFINITY), &p).is_err());
    assert!(f_a(ch(-1.0, 1.0), &p).is_err());
    assert!(oracle_posterior_moments(ch(0.0, 1.0), OraclePrior::Signal(&p)).is_err());
}
