//! Ridge regression on every nested subset at once.
//!
//! Predictions use the kernel form `Z X^T (X X^T + lambda I)^{-1} Y`, so the
//! state that changes as a variable enters or leaves is an `n x n` inverse
//! and an `n' x n` cross product. Each change is a rank-one update costing
//! `O(n^2)`, giving `O(n^2 p)` for the whole path at one lambda.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, Ordering};
use crate::error::{Error, Result};
use crate::lasso_engine::{axpy, column, dot, LambdaGrid};

/// Rank-one updates between full refactorizations.
pub const REFACTOR_INTERVAL: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateDirection {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeTraversal {
    /// Start from the one-variable subset and add columns.
    #[default]
    SmallestFirst,
    /// Start from the full model (via one SVD of `X`) and remove columns.
    FullSvd,
}

/// `A = (X_S X_S^T + lambda I)^{-1}`, `cross = Z_S X_S^T` and `w = A y`.
#[derive(Debug, Clone)]
pub struct KernelState {
    pub a: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub w: DVector<f64>,
    pub included: Vec<bool>,
    pub lambda: f64,
    y: DVector<f64>,
    since_refactor: usize,
}

impl KernelState {
    /// State for the given subset, computed directly.
    pub fn factorize(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        z: &DMatrix<f64>,
        subset: &[usize],
        lambda: f64,
    ) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::SingularSystem);
        }
        let mut s = Self {
            a: DMatrix::zeros(x.nrows(), x.nrows()),
            cross: DMatrix::zeros(z.nrows(), x.nrows()),
            w: DVector::zeros(x.nrows()),
            included: vec![false; x.ncols()],
            lambda,
            y: y.clone(),
            since_refactor: 0,
        };
        for &j in subset {
            s.included[j] = true;
        }
        s.refactorize(x, z)?;
        Ok(s)
    }

    /// State for the empty subset, `A = I / lambda`.
    pub fn empty(y: &DVector<f64>, n_test: usize, p: usize, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::SingularSystem);
        }
        let n = y.len();
        Ok(Self {
            a: DMatrix::identity(n, n) / lambda,
            cross: DMatrix::zeros(n_test, n),
            w: y / lambda,
            included: vec![false; p],
            lambda,
            y: y.clone(),
            since_refactor: 0,
        })
    }

    fn refactorize(&mut self, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
        let cols: Vec<usize> = (0..x.ncols()).filter(|&j| self.included[j]).collect();
        let xs = x.select_columns(&cols);
        let zs = z.select_columns(&cols);
        let mut g = &xs * xs.transpose();
        for i in 0..g.nrows() {
            g[(i, i)] += self.lambda;
        }
        let chol = g.cholesky().ok_or(Error::SingularSystem)?;
        self.a = chol.inverse();
        symmetrize(&mut self.a);
        self.cross = zs * xs.transpose();
        self.w = &self.a * &self.y;
        self.since_refactor = 0;
        Ok(())
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.a.nrows();
        let mut m: f64 = 0.0;
        for j in 0..n {
            for i in 0..j {
                m = m.max((self.a[(i, j)] - self.a[(j, i)]).abs());
            }
        }
        m
    }

    /// Current kernel-form predictions `cross * A * y`.
    pub fn predictions(&self) -> DVector<f64> {
        &self.cross * &self.w
    }
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Sherman-Morrison update of `state` for adding or removing the training
/// column `x` (with matching test column `z`).
pub fn smw_rank_one(state: &mut KernelState, x: &[f64], z: &[f64], dir: UpdateDirection) -> Result<()> {
    let n = state.a.nrows();
    if x.len() != n || z.len() != state.cross.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "update column lengths {} and {}, expected {n} and {}",
            x.len(),
            z.len(),
            state.cross.nrows()
        )));
    }
    let sign = match dir {
        UpdateDirection::Add => 1.0,
        UpdateDirection::Remove => -1.0,
    };
    let mut u = vec![0.0; n];
    let a = state.a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            axpy(xj, &a[j * n..(j + 1) * n], &mut u);
        }
    }
    let xu = dot(x, &u);
    let denom = 1.0 + sign * xu;
    if denom <= 64.0 * f64::EPSILON * (1.0 + xu.abs()) {
        return Err(Error::NumericalBreakdown(denom));
    }
    let scale = sign / denom;
    let a = state.a.as_mut_slice();
    for j in 0..n {
        let col = &mut a[j * n..(j + 1) * n];
        for i in 0..n {
            // the product u_i u_j is computed identically for (i, j) and
            // (j, i), which keeps A exactly symmetric
            col[i] -= (u[i] * u[j]) * scale;
        }
    }
    let uy = dot(&u, state.y.as_slice());
    axpy(-uy * scale, &u, state.w.as_mut_slice());
    let m = state.cross.nrows();
    let cross = state.cross.as_mut_slice();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(sign * xi, z, &mut cross[i * m..(i + 1) * m]);
        }
    }
    state.since_refactor += 1;
    Ok(())
}

/// Exact ridge solution `argmin ||y - X b||^2 + lambda ||b||^2` restricted to
/// `subset`, as a dense `p`-vector. Uses the kernel form when the subset is
/// wider than `n`.
pub fn ridge_fit(data: &Dataset, subset: &[usize], lambda: f64) -> Result<DVector<f64>> {
    if lambda <= 0.0 {
        return Err(Error::SingularSystem);
    }
    let xs = data.x.select_columns(subset);
    let coef = if subset.len() > data.n() {
        let mut g = &xs * xs.transpose();
        for i in 0..g.nrows() {
            g[(i, i)] += lambda;
        }
        let alpha = g.cholesky().ok_or(Error::SingularSystem)?.solve(&data.y);
        xs.transpose() * alpha
    } else {
        let mut g = xs.transpose() * &xs;
        for i in 0..g.nrows() {
            g[(i, i)] += lambda;
        }
        g.cholesky()
            .ok_or(Error::SingularSystem)?
            .solve(&(xs.transpose() * &data.y))
    };
    let mut beta = DVector::zeros(data.p());
    for (c, &j) in subset.iter().enumerate() {
        beta[j] = coef[c];
    }
    Ok(beta)
}

/// Log-spaced ridge penalties from `||X||_F^2` down to `ratio` times that.
pub fn ridge_lambda_grid(data: &Dataset, len: usize, ratio: f64) -> Result<LambdaGrid> {
    let top = data.x.norm_squared();
    if top <= 0.0 {
        return Err(Error::DegenerateResponse);
    }
    LambdaGrid::log_spaced(top, len, ratio)
}

/// Test-set predictions for every nested subset and every lambda.
#[derive(Debug, Clone)]
pub struct RidgePredictions {
    /// One `n' x p` matrix per lambda; column `c` holds the subset made of
    /// the first `p - c` variables in the ordering.
    pub slices: Vec<DMatrix<f64>>,
    pub lambdas: Vec<f64>,
}

impl RidgePredictions {
    /// Predictions for the subset of the first `size` ordered variables.
    pub fn for_size(&self, l: usize, size: usize) -> DVector<f64> {
        let p = self.slices[l].ncols();
        self.slices[l].column(p - size).into_owned()
    }
}

/// Predictions on `test_x` for the subsets `{pi_1..pi_s}`, `s = 1..p`, at
/// every lambda. Requires `n' <= n`. Data are used as given (no centering).
pub fn ridge_all_subsets_predict(
    data: &Dataset,
    ordering: &Ordering,
    lambdas: &[f64],
    test_x: &DMatrix<f64>,
    traversal: RidgeTraversal,
) -> Result<RidgePredictions> {
    let (n, p) = (data.n(), data.p());
    if test_x.nrows() > n {
        return Err(Error::TestWiderThanTrain {
            test: test_x.nrows(),
            train: n,
        });
    }
    if test_x.ncols() != p || ordering.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "training has {p} columns, test {} and ordering {}",
            test_x.ncols(),
            ordering.len()
        )));
    }
    if let Some(&bad) = lambdas.iter().find(|&&l| l <= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge penalty {bad} must be positive")));
    }
    let svd = match traversal {
        RidgeTraversal::FullSvd => Some(data.x.clone().svd(true, false)),
        RidgeTraversal::SmallestFirst => None,
    };
    let slices = lambdas
        .par_iter()
        .map(|&lam| match &svd {
            None => slice_adding(data, ordering, lam, test_x),
            Some(svd) => slice_removing(data, ordering, lam, test_x, svd),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RidgePredictions {
        slices,
        lambdas: lambdas.to_vec(),
    })
}

fn step(
    state: &mut KernelState,
    data: &Dataset,
    test_x: &DMatrix<f64>,
    j: usize,
    dir: UpdateDirection,
) -> Result<()> {
    state.included[j] = dir == UpdateDirection::Add;
    if state.since_refactor + 1 >= REFACTOR_INTERVAL {
        return state.refactorize(&data.x, test_x);
    }
    let z: Vec<f64> = test_x.column(j).iter().copied().collect();
    smw_rank_one(state, column(&data.x, j), &z, dir)
}

fn slice_adding(data: &Dataset, ordering: &Ordering, lam: f64, test_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = data.p();
    let perm = ordering.perm();
    let mut out = DMatrix::zeros(test_x.nrows(), p);
    // the one-variable start is a single rank-one step away from I / lambda
    let mut state = KernelState::empty(&data.y, test_x.nrows(), p, lam)?;
    for s in 1..=p {
        step(&mut state, data, test_x, perm[s - 1], UpdateDirection::Add)?;
        out.set_column(p - s, &state.predictions());
    }
    Ok(out)
}

fn slice_removing(
    data: &Dataset,
    ordering: &Ordering,
    lam: f64,
    test_x: &DMatrix<f64>,
    svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
) -> Result<DMatrix<f64>> {
    let (n, p) = (data.n(), data.p());
    let u = svd.u.as_ref().ok_or(Error::EigenFailure)?;
    // A = U diag(1/(s^2 + lam)) U^T + (I - U U^T) / lam
    let mut scaled = u.clone();
    for (c, &s) in svd.singular_values.iter().enumerate() {
        let f = 1.0 / (s * s + lam) - 1.0 / lam;
        scaled.column_mut(c).scale_mut(f);
    }
    let mut a = scaled * u.transpose();
    for i in 0..n {
        a[(i, i)] += 1.0 / lam;
    }
    symmetrize(&mut a);
    let mut state = KernelState {
        w: &a * &data.y,
        a,
        cross: test_x * data.x.transpose(),
        included: vec![true; p],
        lambda: lam,
        y: data.y.clone(),
        since_refactor: 0,
    };
    let perm = ordering.perm();
    let mut out = DMatrix::zeros(test_x.nrows(), p);
    out.set_column(0, &state.predictions());
    for s in (1..p).rev() {
        step(&mut state, data, test_x, perm[s], UpdateDirection::Remove)?;
        out.set_column(p - s, &state.predictions());
    }
    Ok(out)
}
