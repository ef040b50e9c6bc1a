//! Reference implementations shared by the integration suites.
#![allow(dead_code)]

use mfamp::instance::ProblemInstance;
use ndarray::Array2;

/// Posterior mean and variance under (1-ρ)δ + ρN(0,1) given T = x + N(0, s2),
/// written out directly from the two-component mixture.
pub fn spike_slab(rho: f64, s2: f64, t: f64) -> (f64, f64) {
    let log_slab = rho.ln() - 0.5 * (s2 + 1.0).ln() - t * t / (2.0 * (s2 + 1.0));
    let log_spike = (1.0 - rho).ln() - 0.5 * s2.ln() - t * t / (2.0 * s2);
    let w = 1.0 / (1.0 + (log_spike - log_slab).exp());
    let m = t / (s2 + 1.0);
    let v = s2 / (s2 + 1.0);
    let mean = w * m;
    (mean, w * (v + m * m) - mean * mean)
}

/// Known-matrix AMP, one column at a time, with the residual-based channel
/// variance and damping on the signal means and variances.
pub struct ColumnAmp {
    f: Vec<Vec<f64>>,
    r2: f64,
    alpha: f64,
    rho: f64,
    damping: f64,
    a: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    omega: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl ColumnAmp {
    /// `known` is the unscaled matrix the reference treats as exact.
    pub fn new(inst: &ProblemInstance, known: &Array2<f64>, a0: &Array2<f64>, damping: f64) -> Self {
        let (n, m, p) = (inst.n, inst.m, inst.p);
        let scale = 1.0 / (n as f64).sqrt();
        let f: Vec<Vec<f64>> = (0..m).map(|mu| (0..n).map(|i| known[[mu, i]] * scale).collect()).collect();
        let r2 = f.iter().flatten().map(|x| x * x).sum::<f64>() / m as f64;
        let y: Vec<Vec<f64>> = (0..p).map(|l| (0..m).map(|mu| inst.y[[mu, l]]).collect()).collect();
        ColumnAmp {
            f,
            r2,
            alpha: m as f64 / n as f64,
            rho: inst.params.rho,
            damping,
            a: (0..p).map(|l| (0..n).map(|i| a0[[i, l]]).collect()).collect(),
            v: vec![vec![inst.params.rho; n]; p],
            omega: y.clone(),
            y,
        }
    }

    pub fn step(&mut self) {
        let m = self.f.len();
        let n = self.f[0].len();
        for l in 0..self.a.len() {
            let (a, v, y) = (&self.a[l], &self.v[l], &self.y[l]);
            let c = v.iter().sum::<f64>() / n as f64;
            let old: Vec<f64> = (0..m).map(|mu| y[mu] - self.omega[l][mu]).collect();
            let resid_old = (old.iter().map(|x| x * x).sum::<f64>() / m as f64).max(1e-12);
            let mut omega = vec![0.0; m];
            for mu in 0..m {
                let fa: f64 = (0..n).map(|i| self.f[mu][i] * a[i]).sum();
                omega[mu] = fa - old[mu] * c * self.r2 / resid_old;
            }
            let g: Vec<f64> = (0..m).map(|mu| y[mu] - omega[mu]).collect();
            let resid = (g.iter().map(|x| x * x).sum::<f64>() / m as f64).max(1e-12);
            let s2 = resid / (self.alpha * self.r2);
            let mut a_new = vec![0.0; n];
            let mut v_new = vec![0.0; n];
            for i in 0..n {
                let field: f64 = (0..m).map(|mu| self.f[mu][i] * g[mu]).sum();
                let t = a[i] + field / (self.alpha * self.r2);
                let (mean, var) = spike_slab(self.rho, s2, t);
                a_new[i] = a[i] + self.damping * (mean - a[i]);
                v_new[i] = (v[i] + self.damping * (var - v[i])).max(0.0);
            }
            self.a[l] = a_new;
            self.v[l] = v_new;
            self.omega[l] = omega;
        }
    }

    pub fn a(&self) -> Array2<f64> {
        let (p, n) = (self.a.len(), self.a[0].len());
        Array2::from_shape_fn((n, p), |(i, l)| self.a[l][i])
    }
}
