//! Mean squared errors and permutation/sign alignment of dictionaries.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

fn check_shapes(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn mean_sq_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, scale_a: f64) -> f64 {
    let len = a.len();
    if len == 0 {
        return 0.0;
    }
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = scale_a * x - y;
            d * d
        })
        .sum();
    sum / len as f64
}

/// `(1/NP) Σ (a − X0)²`.
pub fn mse_signal(a: ArrayView2<'_, f64>, x0: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(a, x0, "signal")?;
    Ok(mean_sq_diff(a, x0, 1.0))
}

/// `(1/MN) Σ (√N r − F0)²` for a scaled estimate `r` of `F0/√N`.
pub fn mse_matrix(r: ArrayView2<'_, f64>, f0: ArrayView2<'_, f64>, n: usize) -> Result<f64> {
    check_shapes(r, f0, "matrix")?;
    Ok(mean_sq_diff(r, f0, (n as f64).sqrt()))
}

/// Gauge that best maps an estimated dictionary onto a reference.
///
/// Reference column `k` is matched with estimated column `perm[k]`, multiplied
/// by `signs[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
    /// Mean squared error per element after alignment.
    pub residual: f64,
    /// Reference columns with zero norm; they were paired with leftover columns
    /// after matching and contribute to the residual with sign `+1`.
    pub degenerate: Vec<usize>,
}

impl Alignment {
    pub fn identity(n: usize) -> Self {
        Alignment {
            perm: (0..n).collect(),
            signs: vec![1.0; n],
            residual: f64::NAN,
            degenerate: Vec::new(),
        }
    }

    /// Reorders and flips the columns of `fhat` into the reference gauge.
    pub fn apply_columns(&self, fhat: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(fhat.dim());
        for (k, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            out.column_mut(k).assign(&(&fhat.column(j) * s));
        }
        out
    }

    /// Applies the matching transformation to the rows of a signal estimate.
    pub fn apply_rows(&self, a: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(a.dim());
        for (k, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            out.row_mut(k).assign(&(&a.row(j) * s));
        }
        out
    }
}

/// Squared distances between columns, minimised over the sign of the
/// estimated column. Returns `(cost, best_sign)` indexed `[k][j]`.
fn sign_min_costs(fhat: ArrayView2<'_, f64>, f0: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let n = f0.ncols();
    let mut cost = Array2::zeros((n, n));
    let mut sign = Array2::zeros((n, n));
    for k in 0..n {
        let c0 = f0.column(k);
        for j in 0..n {
            let ch = fhat.column(j);
            let (mut plus, mut minus) = (0.0, 0.0);
            for (x, y) in ch.iter().zip(c0.iter()) {
                plus += (x - y) * (x - y);
                minus += (x + y) * (x + y);
            }
            if minus < plus {
                cost[[k, j]] = minus;
                sign[[k, j]] = -1.0;
            } else {
                cost[[k, j]] = plus;
                sign[[k, j]] = 1.0;
            }
        }
    }
    (cost, sign)
}

/// Minimum-cost assignment of each row to a distinct column for an
/// `n × m` cost matrix with `n ≤ m`. Returns the column chosen for each row.
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "hungarian needs rows <= columns");
    // Potentials and matching are 1-based with slot 0 as the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Optimal column permutation and signs taking `fhat` onto `f0`.
pub fn align_dictionary(fhat: ArrayView2<'_, f64>, f0: ArrayView2<'_, f64>) -> Result<Alignment> {
    check_shapes(fhat, f0, "alignment")?;
    let n = f0.ncols();
    if fhat.iter().chain(f0.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("alignment needs finite matrices"));
    }
    let norms = f0.map_axis(Axis(0), |c| c.dot(&c));
    let degenerate: Vec<usize> = (0..n).filter(|&k| norms[k] == 0.0).collect();
    let live: Vec<usize> = (0..n).filter(|&k| norms[k] > 0.0).collect();

    let (cost, sign) = sign_min_costs(fhat, f0);
    let mut perm = vec![usize::MAX; n];
    let mut signs = vec![1.0; n];
    let mut taken = vec![false; n];
    if !live.is_empty() {
        let sub = cost.select(Axis(0), &live);
        for (row, j) in hungarian(sub.view()).into_iter().enumerate() {
            let k = live[row];
            perm[k] = j;
            signs[k] = sign[[k, j]];
            taken[j] = true;
        }
    }
    let mut leftovers = (0..n).filter(|&j| !taken[j]);
    for &k in &degenerate {
        perm[k] = leftovers.next().expect("one leftover per degenerate column");
    }

    let total: f64 = (0..n)
        .map(|k| {
            let j = perm[k];
            if signs[k] == sign[[k, j]] {
                cost[[k, j]]
            } else {
                // Zero reference column: both signs give the same cost.
                fhat.column(j).dot(&fhat.column(j))
            }
        })
        .sum();
    let len = f0.len();
    Ok(Alignment {
        perm,
        signs,
        residual: if len == 0 { 0.0 } else { total / len as f64 },
        degenerate,
    })
}
