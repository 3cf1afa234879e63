//! Numerical kernels: weighted least squares through a column-pivoted QR
//! factorization, and limited-memory quasi-Newton minimization with
//! orthant-wise handling of an L1 penalty.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Relative size of a pivot in `R` below which a column counts as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// `min_theta sum_i w_i (y_i - z_i' theta)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsProblem {
    /// Row-major design matrix.
    pub design: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub response: Vec<f64>,
}

impl WlsProblem {
    pub fn new(design: Vec<Vec<f64>>, weights: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        let p = WlsProblem {
            design,
            weights,
            response,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let m = self.design.len();
        if self.weights.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: self.weights.len(),
            });
        }
        if self.response.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: self.response.len(),
            });
        }
        if let Some(n) = self.design.first().map(Vec::len) {
            if let Some(bad) = self.design.iter().find(|r| r.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: bad.len(),
                });
            }
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Householder QR of `diag(sqrt(w)) Z` with column pivoting by remaining norm.
#[derive(Debug, Clone)]
pub struct WlsFactorization {
    rows: usize,
    /// Active (factored) columns in original indexing.
    active: Vec<usize>,
    total_columns: usize,
    /// Row indices of the design kept (positive weight).
    kept_rows: Vec<usize>,
    sqrt_w: Vec<f64>,
    /// Column-major storage: Householder vectors below the diagonal, `R` above.
    qr: Vec<f64>,
    r_diag: Vec<f64>,
    tau: Vec<f64>,
    /// `perm[k]` = position in `active` of the k-th pivoted column.
    perm: Vec<usize>,
}

impl WlsFactorization {
    /// Factors the weighted design. Rows with zero weight are dropped; with
    /// `drop_null_columns`, columns identically zero on the kept rows are
    /// excluded and receive a zero coefficient.
    pub fn new(design: &[Vec<f64>], weights: &[f64], drop_null_columns: bool) -> Result<Self> {
        let n_total = design.first().map(Vec::len).unwrap_or(0);
        let kept_rows: Vec<usize> = (0..design.len()).filter(|&i| weights[i] > 0.0).collect();
        let active: Vec<usize> = (0..n_total)
            .filter(|&j| !drop_null_columns || kept_rows.iter().any(|&i| design[i][j] != 0.0))
            .collect();
        let m = kept_rows.len();
        let n = active.len();
        if m < n || n == 0 {
            let mut null = vec![0.0; n_total];
            if let Some(&j) = active.get(m) {
                null[j] = 1.0;
            }
            return Err(Error::RankDeficient {
                null_direction: null,
            });
        }
        let sqrt_w: Vec<f64> = kept_rows.iter().map(|&i| weights[i].sqrt()).collect();
        let mut qr = vec![0.0; m * n];
        for (c, &j) in active.iter().enumerate() {
            for (r, &i) in kept_rows.iter().enumerate() {
                qr[c * m + r] = sqrt_w[r] * design[i][j];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut r_diag = vec![0.0; n];
        let mut tau = vec![0.0; n];
        for k in 0..n {
            // pivot: largest remaining column norm
            let (mut best, mut best_norm) = (k, -1.0);
            for c in k..n {
                let col = &qr[c * m + k..c * m + m];
                let nrm: f64 = col.iter().map(|v| v * v).sum();
                if nrm > best_norm {
                    best = c;
                    best_norm = nrm;
                }
            }
            if best != k {
                for r in 0..m {
                    qr.swap(k * m + r, best * m + r);
                }
                perm.swap(k, best);
            }
            let col = &mut qr[k * m + k..k * m + m];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                r_diag[k] = 0.0;
                tau[k] = 0.0;
                continue;
            }
            let alpha = if col[0] > 0.0 { -norm } else { norm };
            col[0] -= alpha;
            let v0 = col[0];
            for v in col.iter_mut() {
                *v /= v0;
            }
            // v = (1, col[1..]); H = I - tau v v'
            let t = -v0 / alpha;
            r_diag[k] = alpha;
            tau[k] = t;
            let (head, tail) = qr.split_at_mut((k + 1) * m);
            let v = &head[k * m + k..k * m + m];
            for c in 0..(n - k - 1) {
                let target = &mut tail[c * m + k..c * m + m];
                let dot: f64 = v[0] * target[0]
                    + v[1..].iter().zip(&target[1..]).map(|(a, b)| a * b).sum::<f64>();
                let s = t * dot;
                target[0] -= s;
                for (x, vi) in target[1..].iter_mut().zip(&v[1..]) {
                    *x -= s * vi;
                }
            }
        }
        let f = WlsFactorization {
            rows: m,
            active,
            total_columns: n_total,
            kept_rows,
            sqrt_w,
            qr,
            r_diag,
            tau,
            perm,
        };
        if let Some(null) = f.null_direction() {
            return Err(Error::RankDeficient {
                null_direction: null,
            });
        }
        Ok(f)
    }

    pub fn active_columns(&self) -> &[usize] {
        &self.active
    }

    pub fn kept_rows(&self) -> &[usize] {
        &self.kept_rows
    }

    /// Numerical rank of the factored columns.
    pub fn rank(&self) -> usize {
        let scale = self.r_diag.first().map(|d| d.abs()).unwrap_or(0.0);
        self.r_diag
            .iter()
            .take_while(|d| d.abs() > RANK_TOLERANCE * scale && scale > 0.0)
            .count()
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.r_diag[i]
        } else {
            self.qr[j * self.rows + i]
        }
    }

    fn null_direction(&self) -> Option<Vec<f64>> {
        let n = self.active.len();
        let rank = self.rank();
        if rank == n {
            return None;
        }
        // R11 y = R12[:, 0]; null vector is (-y, 1, 0, ...) in pivoted order.
        let mut y: Vec<f64> = (0..rank).map(|i| self.r(i, rank)).collect();
        for i in (0..rank).rev() {
            let mut s = y[i];
            for j in i + 1..rank {
                s -= self.r(i, j) * y[j];
            }
            y[i] = s / self.r(i, i);
        }
        let mut pivoted = vec![0.0; n];
        for i in 0..rank {
            pivoted[i] = -y[i];
        }
        pivoted[rank] = 1.0;
        let norm = pivoted.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut out = vec![0.0; self.total_columns];
        for (k, v) in pivoted.into_iter().enumerate() {
            out[self.active[self.perm[k]]] = v / norm;
        }
        Some(out)
    }

    /// Coefficients for a response vector indexed like the original design rows.
    pub fn solve(&self, response: &[f64]) -> Vec<f64> {
        let m = self.rows;
        let n = self.active.len();
        let mut b: Vec<f64> = self
            .kept_rows
            .iter()
            .zip(&self.sqrt_w)
            .map(|(&i, w)| w * response[i])
            .collect();
        for k in 0..n {
            let v = &self.qr[k * m + k..k * m + m];
            let seg = &mut b[k..];
            let dot = seg[0] + v[1..].iter().zip(&seg[1..]).map(|(a, c)| a * c).sum::<f64>();
            let s = self.tau[k] * dot;
            seg[0] -= s;
            for (x, vi) in seg[1..].iter_mut().zip(&v[1..]) {
                *x -= s * vi;
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.r(i, j) * x[j];
            }
            x[i] = s / self.r_diag[i];
        }
        let mut out = vec![0.0; self.total_columns];
        for (k, v) in x.into_iter().enumerate() {
            out[self.active[self.perm[k]]] = v;
        }
        out
    }
}

/// Solves a weighted least squares problem; rank deficiency is an error.
pub fn solve_wls(problem: &WlsProblem) -> Result<Vec<f64>> {
    problem.validate()?;
    let f = WlsFactorization::new(&problem.design, &problem.weights, false)?;
    Ok(f.solve(&problem.response))
}

/// Smooth objective returning its value and writing its gradient.
pub trait Objective {
    fn evaluate(&self, x: &[f64], gradient: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn evaluate(&self, x: &[f64], gradient: &mut [f64]) -> f64 {
        self(x, gradient)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    /// Stop once the (pseudo-)gradient sup-norm is at most this.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the L1 penalty `l1_weight * ||x||_1`.
    pub l1_weight: f64,
    /// Number of curvature pairs kept.
    pub history_size: usize,
    /// Coordinates excluded from the L1 penalty.
    pub unpenalized: Vec<usize>,
    /// Per-coordinate multipliers of `l1_weight`; empty means all ones.
    pub l1_scales: Vec<f64>,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            gradient_tolerance: 1e-6,
            max_iterations: 1000,
            l1_weight: 0.0,
            history_size: 10,
            unpenalized: Vec::new(),
            l1_scales: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step satisfying sufficient decrease was found.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    /// Objective plus penalty at `x`.
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub gradient_norm: f64,
    /// Penalized objective at every accepted iterate, starting point first.
    pub trace: Vec<f64>,
}

impl MinimizeResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f(x) + l1_weight * ||x||_1` with an orthant-wise L-BFGS.
///
/// With `l1_weight == 0` this is plain L-BFGS with a backtracking
/// sufficient-decrease line search. Otherwise the search direction is built
/// from the pseudo-gradient, restricted to agree in sign with its negative,
/// and each trial point is projected onto the orthant of the current iterate.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    start: &[f64],
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    if !(opts.gradient_tolerance > 0.0) {
        return Err(Error::InvalidInput("gradient tolerance must be positive".into()));
    }
    if !(opts.l1_weight >= 0.0) {
        return Err(Error::InvalidInput("L1 weight must be nonnegative".into()));
    }
    let n = start.len();
    if !opts.l1_scales.is_empty()
        && (opts.l1_scales.len() != n || opts.l1_scales.iter().any(|v| !(*v >= 0.0)))
    {
        return Err(Error::InvalidInput(
            "L1 scales must be nonnegative, one per coordinate".into(),
        ));
    }
    let lambda: Vec<f64> = (0..n)
        .map(|i| {
            if opts.unpenalized.contains(&i) {
                0.0
            } else {
                opts.l1_weight * opts.l1_scales.get(i).copied().unwrap_or(1.0)
            }
        })
        .collect();
    let l1 = lambda.iter().any(|l| *l > 0.0);
    let penalty = |x: &[f64]| -> f64 { x.iter().zip(&lambda).map(|(v, l)| l * v.abs()).sum() };
    let pseudo_gradient = |x: &[f64], g: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let l = lambda[i];
                if l == 0.0 {
                    g[i]
                } else if x[i] > 0.0 {
                    g[i] + l
                } else if x[i] < 0.0 {
                    g[i] - l
                } else if g[i] + l < 0.0 {
                    g[i] + l
                } else if g[i] - l > 0.0 {
                    g[i] - l
                } else {
                    0.0
                }
            })
            .collect()
    };

    let mut x = start.to_vec();
    let mut g = vec![0.0; n];
    let fx = objective.evaluate(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { point: x });
    }
    let mut value = fx + penalty(&x);
    let mut trace = vec![value];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut g_new = vec![0.0; n];

    loop {
        let pg = pseudo_gradient(&x, &g);
        let gnorm = sup_norm(&pg);
        if gnorm <= opts.gradient_tolerance {
            return Ok(MinimizeResult {
                x,
                value,
                iterations,
                termination: Termination::Converged,
                gradient_norm: gnorm,
                trace,
            });
        }
        if iterations >= opts.max_iterations {
            return Ok(MinimizeResult {
                x,
                value,
                iterations,
                termination: Termination::MaxIterations,
                gradient_norm: gnorm,
                trace,
            });
        }

        // two-loop recursion on the pseudo-gradient
        let mut d: Vec<f64> = pg.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        if l1 {
            for i in 0..n {
                if d[i] * pg[i] >= 0.0 {
                    d[i] = 0.0;
                }
            }
        }
        if dot(&d, &pg) >= 0.0 {
            // not a descent direction; fall back to steepest descent
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let orthant: Vec<f64> = (0..n)
            .map(|i| {
                if x[i] != 0.0 {
                    x[i].signum()
                } else {
                    -pg[i].signum()
                }
            })
            .collect();

        let mut step = if history.is_empty() {
            (1.0 / dot(&d, &d).sqrt()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if l1 {
                for i in 0..n {
                    if lambda[i] > 0.0 && trial[i] * orthant[i] <= 0.0 {
                        trial[i] = 0.0;
                    }
                }
            }
            let ft = objective.evaluate(&trial, &mut g_new);
            let vt = ft + penalty(&trial);
            let decrease: f64 = (0..n).map(|i| pg[i] * (trial[i] - x[i])).sum();
            if vt.is_finite()
                && g_new.iter().all(|v| v.is_finite())
                && vt <= value + 1e-4 * decrease
            {
                accepted = Some((trial, vt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, v_new)) = accepted else {
            return Ok(MinimizeResult {
                x,
                value,
                iterations,
                termination: Termination::LineSearchStalled,
                gradient_norm: gnorm,
                trace,
            });
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == opts.history_size.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        std::mem::swap(&mut g, &mut g_new);
        let improved = v_new < value;
        value = v_new;
        trace.push(value);
        if !improved && history.is_empty() {
            let pg = pseudo_gradient(&x, &g);
            return Ok(MinimizeResult {
                gradient_norm: sup_norm(&pg),
                x,
                value,
                iterations,
                termination: Termination::LineSearchStalled,
                trace,
            });
        }
    }
}

/// Central finite-difference gradient, used to check analytic gradients.
pub fn finite_difference_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            let step = h * orig.abs().max(1.0);
            xp[i] = orig + step;
            let fp = f(&xp);
            xp[i] = orig - step;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}
