//! Quadrature rules for expectations over a standard Gaussian.
//!
//! Two families are provided:
//!
//! - [`GaussHermite`]: the classical rule for `∫ e^{-x²} g(x) dx`, used where
//!   the integrand is a smooth Gaussian-scale function (the denoiser oracle).
//! - [`NormalIntegrator`]: composite Gauss-Legendre on `[0, z_max]` with
//!   panels graded around a known transition. The integrands of the
//!   order-parameter recursion and of the potential switch between two
//!   regimes at `offset + curvature·z² = 0`, and at high signal-to-noise the
//!   switch is far too sharp for a fixed Hermite rule to resolve.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

/// Nodes and weights for `∫ e^{-x²} g(x) dx ≈ Σ w_i g(x_i)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch eigenvalues, polished by Newton steps on the orthonormal
    /// Hermite recurrence. Weights come from the recurrence (not from the
    /// eigenvectors) so tail weights keep full relative accuracy.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (pn, pn1, _) = orthonormal_hermite(n, *x);
                let dx = pn / ((2.0 * n as f64).sqrt() * pn1);
                if dx.is_finite() {
                    *x -= dx;
                }
            }
            let (_, pn1, log_scale) = orthonormal_hermite(n, *x);
            // w = 1 / (n p_{n-1}(x)^2); p carries an extra factor e^{log_scale}.
            let log_w = -(n as f64).ln() - 2.0 * (pn1.abs().ln() + log_scale);
            weights.push(if log_w < -745.0 { 0.0 } else { log_w.exp() });
        }
        GaussHermite { nodes, weights }
    }

    /// `E[g(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect_normal(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        let norm = 1.0 / PI.sqrt();
        let s2 = std::f64::consts::SQRT_2;
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&x, &w)| w * g(s2 * x))
            .sum::<f64>()
            * norm
    }
}

/// `(p_n(x), p_{n-1}(x), log_scale)` for Hermite polynomials orthonormal
/// under `e^{-x²}`; both values are divided by `e^{log_scale}` to stay finite.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut log_scale = 0.0;
    for k in 0..n {
        let next = (2.0 / (k as f64 + 1.0)).sqrt() * x * cur
            - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= 1e-150;
            prev *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    (cur, prev, log_scale)
}

/// Nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rule_cache<T: Clone>(
    cache: &'static OnceLock<Mutex<HashMap<usize, Arc<T>>>>,
    n: usize,
    build: impl FnOnce(usize) -> T,
) -> Arc<T> {
    let map = cache.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = map.lock().unwrap_or_else(|e| e.into_inner());
    guard.entry(n).or_insert_with(|| Arc::new(build(n))).clone()
}

/// Shared, lazily built Gauss-Hermite rule.
pub fn gauss_hermite(n: usize) -> Arc<GaussHermite> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    rule_cache(&CACHE, n, GaussHermite::new)
}

/// Shared, lazily built Gauss-Legendre rule.
pub fn gauss_legendre(n: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
    rule_cache(&CACHE, n, GaussLegendre::new)
}

/// Integrand regime switch located where `offset + curvature·z² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub offset: f64,
    pub curvature: f64,
}

/// Composite rule for `E[g(Z)]`, `Z ~ N(0,1)`, with `g` even.
#[derive(Clone, Debug)]
pub struct NormalIntegrator {
    rule: Arc<GaussLegendre>,
    z_max: f64,
    max_panel: f64,
}

impl Default for NormalIntegrator {
    fn default() -> Self {
        Self::new(16)
    }
}

impl NormalIntegrator {
    /// `order` Gauss-Legendre nodes per panel.
    pub fn new(order: usize) -> Self {
        NormalIntegrator {
            rule: gauss_legendre(order),
            z_max: 12.0,
            max_panel: 0.5,
        }
    }

    pub fn order(&self) -> usize {
        self.rule.nodes.len()
    }

    /// Same panels, twice the nodes per panel.
    pub fn doubled(&self) -> Self {
        NormalIntegrator {
            rule: gauss_legendre(2 * self.order()),
            ..self.clone()
        }
    }

    fn breakpoints(&self, transition: Option<Transition>) -> Vec<f64> {
        let z_max = self.z_max;
        let mut pts = vec![0.0, z_max];
        if let Some(Transition { offset, curvature }) = transition {
            let k = curvature.abs();
            if k > 0.0 && k.is_finite() {
                let mut h = 1.0 / k.sqrt();
                while h < z_max {
                    pts.push(h);
                    h *= 2.0;
                }
                let z2 = -offset / curvature;
                if z2 > 0.0 && z2.is_finite() {
                    let zs = z2.sqrt();
                    if zs < z_max {
                        pts.push(zs);
                        let width = 1.0 / (2.0 * k * zs + k.sqrt());
                        let mut h = width;
                        while zs + h < z_max {
                            pts.push(zs + h);
                            h *= 2.0;
                        }
                        let mut h = width;
                        while zs - h > 0.0 {
                            pts.push(zs - h);
                            h *= 2.0;
                        }
                    }
                }
            }
        }
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-300);

        let mut out = Vec::with_capacity(pts.len() * 2);
        out.push(pts[0]);
        for w in pts.windows(2) {
            let len = w[1] - w[0];
            let pieces = (len / self.max_panel).ceil().max(1.0) as usize;
            for j in 1..=pieces {
                out.push(w[0] + len * j as f64 / pieces as f64);
            }
        }
        out
    }

    /// `E[g(Z)] = 2 ∫_0^∞ φ(z) g(z) dz` for even `g`.
    pub fn expect_even(&self, transition: Option<Transition>, mut g: impl FnMut(f64) -> f64) -> f64 {
        let pts = self.breakpoints(transition);
        let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
        let mut total = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut panel = 0.0;
            for (&x, &wt) in self.rule.nodes.iter().zip(&self.rule.weights) {
                let z = mid + half * x;
                panel += wt * (-0.5 * z * z).exp() * g(z);
            }
            total += half * panel;
        }
        2.0 * inv_sqrt_2pi * total
    }
}
