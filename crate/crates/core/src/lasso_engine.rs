//! Coordinate-descent Lasso in data form and covariance form, lambda grids,
//! and the square-root-Lasso stopping rule.
//!
//! Both forms minimise a smooth quadratic plus `lambda * ||b||_1` with the
//! same active-set driver ([`CdSolver`]); they differ only in how the
//! partial gradients are maintained:
//!
//! * data form keeps the residual `r = y - X b` and uses `x_j' r / n`;
//! * covariance form keeps `G b` and uses `gamma_j - (G b)_j - eps * b_j`,
//!   where `eps` is the ridge shift of a PSD-corrected surrogate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::missing_data::CovSurrogate;

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

/// Strictly decreasing positive tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("lambda grid is empty".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("lambda values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("lambda values must strictly decrease".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Log-spaced grid from `lambda_max` down to `ratio * lambda_max`.
    pub fn log_spaced(lambda_max: f64, len: usize, ratio: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidConfig("need at least one lambda".into()));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidConfig(format!("lambda ratio {ratio} not in (0, 1)")));
        }
        if !(lambda_max > 0.0) {
            return Err(Error::DegenerateResponse);
        }
        if len == 1 {
            return Self::new(vec![lambda_max]);
        }
        let step = ratio.ln() / (len - 1) as f64;
        Self::new(
            (0..len)
                .map(|l| lambda_max * (step * l as f64).exp())
                .collect(),
        )
    }
}

/// Smallest lambda giving the all-zero solution: `max_j |x_j' y| / n`.
pub fn lambda_max(data: &Dataset) -> f64 {
    let n = data.n() as f64;
    (0..data.p())
        .map(|j| dot(column(&data.x, j), data.y.as_slice()).abs() / n)
        .fold(0.0, f64::max)
}

/// Ratio of the smallest to the largest lambda: 0.01 when p > n, else 1e-4.
pub fn default_lambda_ratio(n: usize, p: usize) -> f64 {
    if p > n {
        0.01
    } else {
        1e-4
    }
}

/// `len` log-spaced values from `lambda_max(data)` down to `ratio` times it.
/// Expects standardized (centered) data.
pub fn lambda_grid(data: &Dataset, len: usize, ratio: f64) -> Result<LambdaGrid> {
    let lmax = lambda_max(data);
    if lmax == 0.0 {
        return Err(Error::DegenerateResponse);
    }
    LambdaGrid::log_spaced(lmax, len, ratio)
}

/// Sparse coefficient vector with an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCoef {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub p: usize,
    pub intercept: f64,
}

impl SparseCoef {
    pub fn zeros(p: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            p,
            intercept: 0.0,
        }
    }

    pub fn from_dense(beta: &[f64]) -> Self {
        let (indices, values) = beta
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .unzip();
        Self {
            indices,
            values,
            p: beta.len(),
            intercept: 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.indices
            .binary_search(&j)
            .map_or(0.0, |pos| self.values[pos])
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// `X b` without the intercept.
    pub fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = vec![0.0; x.nrows()];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            axpy(v, column(x, j), &mut out);
        }
        DVector::from_vec(out)
    }

    /// `intercept + X b`.
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.apply(x).add_scalar(self.intercept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqrtLassoConfig {
    pub lambda_sq: f64,
    pub enabled: bool,
}

impl SqrtLassoConfig {
    pub fn disabled() -> Self {
        Self {
            lambda_sq: 1.0,
            enabled: false,
        }
    }

    pub fn enabled(lambda_sq: f64) -> Result<Self> {
        if !(lambda_sq > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda_sq must be positive, got {lambda_sq}")));
        }
        Ok(Self {
            lambda_sq,
            enabled: true,
        })
    }

    pub fn with_default(n: usize, p: usize) -> Self {
        Self {
            lambda_sq: default_lambda_sq(n, p),
            enabled: true,
        }
    }
}

/// Whether the path may continue past `lambda`: true iff
/// `residual_norm / lambda <= sqrt(n) / lambda_sq`.
pub fn sqrt_lasso_stop(residual_norm: f64, lambda: f64, n: usize, cfg: &SqrtLassoConfig) -> bool {
    if !cfg.enabled {
        return true;
    }
    residual_norm / lambda <= (n as f64).sqrt() / cfg.lambda_sq
}

/// Half of the rate-optimal square-root-Lasso level `1.1 sqrt(2 log(p) / n)`.
pub fn default_lambda_sq(n: usize, p: usize) -> f64 {
    0.5 * 1.1 * (2.0 * (p.max(2) as f64).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Largest coefficient change in a sweep at which a sweep counts as converged.
    pub tol: f64,
    /// Allowed KKT violation in the final verification pass.
    pub kkt_tol: f64,
    /// Cap on the number of coordinate sweeps per solve.
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            kkt_tol: 1e-7,
            max_iter: 100_000,
        }
    }
}

impl SolverConfig {
    pub fn tight() -> Self {
        Self {
            tol: 1e-11,
            kkt_tol: 1e-9,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub sweeps: usize,
    pub updates: usize,
}

/// Smooth part of a Lasso objective, seen one coordinate at a time.
pub(crate) trait CoordinateProblem {
    fn n_vars(&self) -> usize;
    fn n_obs(&self) -> usize;
    /// Second derivative of the smooth part along coordinate `j`.
    fn curvature(&self, j: usize) -> f64;
    /// Negative partial derivative of the smooth part at the current point.
    fn gradient(&self, j: usize, beta_j: f64) -> f64;
    /// Record that coordinate `j` moved by `delta`.
    fn apply(&mut self, j: usize, delta: f64);
    /// `||y - X b||_2` (or its surrogate estimate).
    fn residual_norm(&self, beta: &[f64]) -> f64;
    /// Residual sum of squares implied by the minimised objective, for
    /// problems where it can go negative.
    fn rss_estimate(&self, _beta: &[f64]) -> Option<f64> {
        None
    }
    /// `y'y`, the scale of the residual estimate.
    fn total_ss(&self) -> f64 {
        f64::INFINITY
    }
}

pub(crate) struct DataProblem<'a> {
    x: &'a DMatrix<f64>,
    residual: Vec<f64>,
    col_sq: Vec<f64>,
}

impl<'a> DataProblem<'a> {
    pub(crate) fn new(data: &'a Dataset) -> Self {
        let n = data.n() as f64;
        let col_sq = (0..data.p())
            .map(|j| {
                let c = column(&data.x, j);
                dot(c, c) / n
            })
            .collect();
        Self {
            x: &data.x,
            residual: data.y.as_slice().to_vec(),
            col_sq,
        }
    }
}

impl CoordinateProblem for DataProblem<'_> {
    fn n_vars(&self) -> usize {
        self.x.ncols()
    }
    fn n_obs(&self) -> usize {
        self.x.nrows()
    }
    #[inline]
    fn curvature(&self, j: usize) -> f64 {
        self.col_sq[j]
    }
    #[inline]
    fn gradient(&self, j: usize, _beta_j: f64) -> f64 {
        dot(column(self.x, j), &self.residual) / self.x.nrows() as f64
    }
    #[inline]
    fn apply(&mut self, j: usize, delta: f64) {
        axpy(-delta, column(self.x, j), &mut self.residual);
    }
    fn residual_norm(&self, _beta: &[f64]) -> f64 {
        dot(&self.residual, &self.residual).sqrt()
    }
}

pub(crate) struct CovProblem<'a> {
    gram: &'a DMatrix<f64>,
    gamma: &'a DVector<f64>,
    shift: f64,
    y_sq: f64,
    n: usize,
    gb: Vec<f64>,
}

impl<'a> CovProblem<'a> {
    pub(crate) fn new(s: &'a CovSurrogate) -> Result<Self> {
        let shift = s.ridge_shift.ok_or(Error::NotPsdCorrected)?;
        Ok(Self {
            gram: &s.gram,
            gamma: &s.gamma,
            shift,
            y_sq: s.y_sq,
            n: s.n,
            gb: vec![0.0; s.gram.ncols()],
        })
    }
}

impl CoordinateProblem for CovProblem<'_> {
    fn n_vars(&self) -> usize {
        self.gram.ncols()
    }
    fn n_obs(&self) -> usize {
        self.n
    }
    #[inline]
    fn curvature(&self, j: usize) -> f64 {
        self.gram[(j, j)] + self.shift
    }
    #[inline]
    fn gradient(&self, j: usize, beta_j: f64) -> f64 {
        self.gamma[j] - self.gb[j] - self.shift * beta_j
    }
    #[inline]
    fn apply(&mut self, j: usize, delta: f64) {
        axpy(delta, column(self.gram, j), &mut self.gb);
    }
    fn residual_norm(&self, beta: &[f64]) -> f64 {
        let bg = dot(beta, self.gamma.as_slice());
        let bgb = dot(beta, &self.gb);
        (self.n as f64 * (self.y_sq - 2.0 * bg + bgb).max(0.0)).sqrt()
    }
    fn total_ss(&self) -> f64 {
        self.n as f64 * self.y_sq
    }
    fn rss_estimate(&self, beta: &[f64]) -> Option<f64> {
        // measured with the shifted Gram that is actually minimised against
        let bg = dot(beta, self.gamma.as_slice());
        let bgb = dot(beta, &self.gb) + self.shift * dot(beta, beta);
        Some(self.n as f64 * (self.y_sq - 2.0 * bg + bgb))
    }
}

/// Active-set coordinate descent over a restricted variable set, keeping its
/// state between solves so that consecutive fits are warm-started.
pub(crate) struct CdSolver<P> {
    problem: P,
    beta: Vec<f64>,
}

impl<P: CoordinateProblem> CdSolver<P> {
    pub(crate) fn new(problem: P) -> Self {
        let p = problem.n_vars();
        Self {
            problem,
            beta: vec![0.0; p],
        }
    }

    pub(crate) fn set_beta(&mut self, coef: &SparseCoef) {
        for j in 0..self.beta.len() {
            let b = self.beta[j];
            if b != 0.0 {
                self.problem.apply(j, -b);
                self.beta[j] = 0.0;
            }
        }
        for (&j, &v) in coef.indices.iter().zip(&coef.values) {
            self.problem.apply(j, v);
            self.beta[j] = v;
        }
    }

    pub(crate) fn coef(&self) -> SparseCoef {
        SparseCoef::from_dense(&self.beta)
    }

    pub(crate) fn residual_norm(&self) -> f64 {
        self.problem.residual_norm(&self.beta)
    }

    pub(crate) fn n_obs(&self) -> usize {
        self.problem.n_obs()
    }

    #[inline]
    fn update(&mut self, j: usize, lambda: f64, stats: &mut SolveStats) -> f64 {
        let curv = self.problem.curvature(j);
        let old = self.beta[j];
        if curv <= 0.0 {
            if old != 0.0 {
                self.problem.apply(j, -old);
                self.beta[j] = 0.0;
            }
            return old.abs();
        }
        let z = self.problem.gradient(j, old) + curv * old;
        let new = soft_threshold(z, lambda) / curv;
        stats.updates += 1;
        let delta = new - old;
        if delta != 0.0 {
            self.problem.apply(j, delta);
            self.beta[j] = new;
        }
        delta.abs()
    }

    fn sweep(&mut self, vars: &[usize], lambda: f64, stats: &mut SolveStats) -> Result<f64> {
        stats.sweeps += 1;
        let mut max_change = 0.0f64;
        for &j in vars {
            max_change = max_change.max(self.update(j, lambda, stats));
        }
        // a singular corrected Gram leaves the objective unbounded below for
        // small lambda; the iterates then drive the RSS estimate to -infinity
        let floor = -self.problem.total_ss();
        if self.problem.rss_estimate(&self.beta).is_some_and(|r| r < floor) {
            return Err(Error::SurrogateBreakdown { lambda });
        }
        Ok(max_change)
    }

    pub(crate) fn kkt_violation(&self, subset: &[usize], lambda: f64) -> f64 {
        subset
            .iter()
            .map(|&j| {
                let b = self.beta[j];
                let g = self.problem.gradient(j, b);
                if b == 0.0 {
                    (g.abs() - lambda).max(0.0)
                } else {
                    (g - lambda * b.signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Minimise over coefficients supported on `subset`, starting from the
    /// current state.
    pub(crate) fn solve(&mut self, subset: &[usize], lambda: f64, cfg: &SolverConfig) -> Result<SolveStats> {
        let mut stats = SolveStats::default();
        let mut active: Vec<usize> = Vec::new();
        loop {
            let change = self.sweep(subset, lambda, &mut stats)?;
            if change < cfg.tol {
                let viol = self.kkt_violation(subset, lambda);
                if viol <= cfg.kkt_tol {
                    return Ok(stats);
                }
                if stats.sweeps >= cfg.max_iter {
                    return Err(self.exceeded(cfg, viol));
                }
            }
            active.clear();
            active.extend(subset.iter().copied().filter(|&j| self.beta[j] != 0.0));
            loop {
                if stats.sweeps >= cfg.max_iter {
                    // slow but certified: accept an iterate that meets the
                    // optimality conditions even if it is still creeping
                    let viol = self.kkt_violation(subset, lambda);
                    if viol <= cfg.kkt_tol {
                        return Ok(stats);
                    }
                    return Err(self.exceeded(cfg, viol));
                }
                if self.sweep(&active, lambda, &mut stats)? < cfg.tol {
                    break;
                }
            }
        }
    }

    fn exceeded(&self, cfg: &SolverConfig, kkt_violation: f64) -> Error {
        Error::MaxIterExceeded {
            max_iter: cfg.max_iter,
            kkt_violation,
            best: Box::new(self.coef()),
        }
    }
}

fn check_subset(subset: &[usize], p: usize, init: &SparseCoef) -> Result<()> {
    if init.p != p {
        return Err(Error::DimensionMismatch(format!(
            "initial coefficients have dimension {}, expected {p}",
            init.p
        )));
    }
    let mut member = vec![false; p];
    for &j in subset {
        if j >= p {
            return Err(Error::DimensionMismatch(format!("variable {j} out of range")));
        }
        member[j] = true;
    }
    if let Some(&j) = init.indices.iter().find(|&&j| !member[j]) {
        return Err(Error::InvalidConfig(format!(
            "initial estimate uses variable {j} outside the subset"
        )));
    }
    Ok(())
}

/// Lasso `(1/2n)||y - X b||^2 + lambda ||b||_1` over coefficients supported
/// on `subset`, warm-started from `init`. Expects centered data; the
/// returned intercept is zero.
pub fn cd_lasso(
    data: &Dataset,
    subset: &[usize],
    lambda: f64,
    init: &SparseCoef,
    cfg: &SolverConfig,
) -> Result<(SparseCoef, SolveStats)> {
    check_subset(subset, data.p(), init)?;
    let mut solver = CdSolver::new(DataProblem::new(data));
    solver.set_beta(init);
    let stats = solver.solve(subset, lambda, cfg)?;
    Ok((solver.coef(), stats))
}

/// Covariance-form Lasso `-b'gamma + (1/2) b'(G + eps I)b + lambda ||b||_1`
/// on a PSD-corrected surrogate.
pub fn cov_cd_lasso(
    surrogate: &CovSurrogate,
    subset: &[usize],
    lambda: f64,
    init: &SparseCoef,
    cfg: &SolverConfig,
) -> Result<(SparseCoef, SolveStats)> {
    let mut solver = CdSolver::new(CovProblem::new(surrogate)?);
    check_subset(subset, surrogate.p(), init)?;
    solver.set_beta(init);
    let stats = solver.solve(subset, lambda, cfg)?;
    Ok((solver.coef(), stats))
}

/// Largest KKT violation of `coef` for the data-form Lasso restricted to
/// `subset`, computed directly from the data.
pub fn lasso_kkt_violation(data: &Dataset, subset: &[usize], lambda: f64, coef: &SparseCoef) -> f64 {
    let n = data.n() as f64;
    let r = &data.y - coef.apply(&data.x);
    subset
        .iter()
        .map(|&j| {
            let g = dot(column(&data.x, j), r.as_slice()) / n;
            let b = coef.get(j);
            if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Data-form Lasso objective value.
pub fn lasso_objective(data: &Dataset, lambda: f64, coef: &SparseCoef) -> f64 {
    let r = &data.y - coef.apply(&data.x);
    r.norm_squared() / (2.0 * data.n() as f64) + lambda * coef.l1_norm()
}
