//! The full `K x L` grid of Lasso fits over nested subsets.
//!
//! Rows are subsets (largest first) and columns are lambdas (largest first).
//! A cell is copied from the row above whenever that row's solution at the
//! same lambda already lives inside the smaller subset: restricting the
//! feasible set to a set that still contains the optimum leaves the optimum
//! unchanged. Within a row, fits are warm-started from the previous lambda,
//! and the square-root-Lasso rule may end the row early, in which case the
//! remaining cells repeat the last solved one and are flagged. A covariance
//! fit whose residual estimate turns negative ends its row the same way.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, Ordering, StandardizationInfo, SubsetSchedule};
use crate::error::{Error, Result};
use crate::lasso_engine::{
    sqrt_lasso_stop, CdSolver, CoordinateProblem, CovProblem, DataProblem, LambdaGrid,
    SolverConfig, SparseCoef, SqrtLassoConfig,
};
use crate::missing_data::CovSurrogate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub solver: SolverConfig,
    pub sqrt_stop: SqrtLassoConfig,
    /// Copy cells whose upper neighbour is supported inside the subset.
    pub skip_rule: bool,
}

impl PathConfig {
    pub fn new(sqrt_stop: SqrtLassoConfig) -> Self {
        Self {
            solver: SolverConfig::default(),
            sqrt_stop,
            skip_rule: true,
        }
    }

    pub fn without_early_stop() -> Self {
        Self::new(SqrtLassoConfig::disabled())
    }
}

/// Solutions for every `(subset, lambda)` pair.
#[derive(Debug, Clone)]
pub struct CoefficientGrid {
    /// `coefs[k][l]`, in the standardized coordinates of the fit.
    pub coefs: Vec<Vec<SparseCoef>>,
    /// Cell copied from row `k - 1` by the containment rule.
    pub skipped: Vec<Vec<bool>>,
    /// Cell is a repeat of an earlier lambda because the row stopped early.
    pub early_stopped: Vec<Vec<bool>>,
    pub residual_norms: Vec<Vec<f64>>,
    /// Coordinate updates spent on each cell.
    pub updates: Vec<Vec<usize>>,
    pub schedule: SubsetSchedule,
    pub lambdas: LambdaGrid,
    pub ordering: Ordering,
    pub standardization: StandardizationInfo,
}

impl CoefficientGrid {
    pub fn k(&self) -> usize {
        self.coefs.len()
    }

    pub fn l(&self) -> usize {
        self.lambdas.len()
    }

    /// `A(k, l)`: the variables with nonzero coefficients.
    pub fn active(&self, k: usize, l: usize) -> &[usize] {
        active_set(&self.coefs[k][l])
    }

    pub fn total_updates(&self) -> usize {
        self.updates.iter().flatten().sum()
    }

    pub fn solved_cells(&self) -> usize {
        self.skipped
            .iter()
            .flatten()
            .zip(self.early_stopped.iter().flatten())
            .filter(|(s, e)| !**s && !**e)
            .count()
    }

    pub fn skipped_cells(&self) -> usize {
        self.skipped.iter().flatten().filter(|s| **s).count()
    }

    /// Attach the transform that maps raw designs into the fit's coordinates.
    pub fn with_standardization(mut self, info: StandardizationInfo) -> Self {
        self.standardization = info;
        self
    }
}

/// Exact nonzero support of a coefficient vector.
pub fn active_set(coef: &SparseCoef) -> &[usize] {
    &coef.indices
}

struct RowCell {
    coef: SparseCoef,
    residual_norm: f64,
    updates: usize,
}

fn check_dims(p: usize, ordering: &Ordering, schedule: &SubsetSchedule) -> Result<()> {
    if ordering.len() != p || schedule.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "data has {p} variables, ordering {}, schedule {}",
            ordering.len(),
            schedule.p()
        )));
    }
    Ok(())
}

fn fit_grid<P: CoordinateProblem>(
    mut solver: CdSolver<P>,
    p: usize,
    ordering: &Ordering,
    schedule: &SubsetSchedule,
    grid: &LambdaGrid,
    cfg: &PathConfig,
) -> Result<CoefficientGrid> {
    let (kk, ll) = (schedule.k(), grid.len());
    let lambdas = grid.values();
    let n = solver.n_obs();
    let mut coefs: Vec<Vec<SparseCoef>> = Vec::with_capacity(kk);
    let mut skipped = vec![vec![false; ll]; kk];
    let mut early = vec![vec![false; ll]; kk];
    let mut resid = vec![vec![0.0; ll]; kk];
    let mut updates = vec![vec![0usize; ll]; kk];
    // which cell of the current row the solver state holds; None = zero
    let mut state: Option<usize> = None;
    let zero = SparseCoef::zeros(p);

    for k in 0..kk {
        let member = schedule.membership(ordering, k);
        let mut subset: Vec<usize> = ordering.top(schedule.cutoffs()[k]).to_vec();
        subset.sort_unstable();
        let mut row: Vec<SparseCoef> = Vec::with_capacity(ll);
        let mut halted = false;

        for l in 0..ll {
            if k > 0 && cfg.skip_rule {
                let above = &coefs[k - 1][l];
                if above.indices.iter().all(|&j| member[j]) {
                    row.push(above.clone());
                    skipped[k][l] = true;
                    early[k][l] = early[k - 1][l];
                    resid[k][l] = resid[k - 1][l];
                    continue;
                }
            }
            if halted || (l > 0 && !sqrt_lasso_stop(resid[k][l - 1], lambdas[l - 1], n, &cfg.sqrt_stop)) {
                row.push(if l == 0 { zero.clone() } else { row[l - 1].clone() });
                early[k][l] = true;
                resid[k][l] = if l == 0 { 0.0 } else { resid[k][l - 1] };
                continue;
            }
            let warm = if l == 0 { None } else { Some(l - 1) };
            if state != warm || (k > 0 && l == 0) {
                solver.set_beta(warm.map_or(&zero, |w| &row[w]));
            }
            let cell = match solve_cell(&mut solver, &subset, lambdas[l], &cfg.solver) {
                Ok(c) => c,
                Err(Error::SurrogateBreakdown { .. }) => {
                    // no usable minimiser from here down: stop the row
                    halted = true;
                    state = None;
                    row.push(if l == 0 { zero.clone() } else { row[l - 1].clone() });
                    early[k][l] = true;
                    resid[k][l] = if l == 0 { 0.0 } else { resid[k][l - 1] };
                    continue;
                }
                Err(e) => return Err(e),
            };
            state = Some(l);
            resid[k][l] = cell.residual_norm;
            updates[k][l] = cell.updates;
            row.push(cell.coef);
        }
        state = None;
        solver.set_beta(&zero);
        coefs.push(row);
    }

    Ok(CoefficientGrid {
        coefs,
        skipped,
        early_stopped: early,
        residual_norms: resid,
        updates,
        schedule: schedule.clone(),
        lambdas: grid.clone(),
        ordering: ordering.clone(),
        standardization: StandardizationInfo::identity(p),
    })
}

fn solve_cell<P: CoordinateProblem>(
    solver: &mut CdSolver<P>,
    subset: &[usize],
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<RowCell> {
    let stats = solver.solve(subset, lambda, cfg)?;
    Ok(RowCell {
        coef: solver.coef(),
        residual_norm: solver.residual_norm(),
        updates: stats.updates,
    })
}

/// Fit the whole grid on standardized (centered) data.
pub fn fit_order_path(
    data: &Dataset,
    ordering: &Ordering,
    schedule: &SubsetSchedule,
    grid: &LambdaGrid,
    cfg: &PathConfig,
) -> Result<CoefficientGrid> {
    check_dims(data.p(), ordering, schedule)?;
    let solver = CdSolver::new(DataProblem::new(data));
    fit_grid(solver, data.p(), ordering, schedule, grid, cfg)
}

/// Fit the whole grid against a PSD-corrected covariance surrogate.
pub fn fit_order_path_cov(
    surrogate: &CovSurrogate,
    ordering: &Ordering,
    schedule: &SubsetSchedule,
    grid: &LambdaGrid,
    cfg: &PathConfig,
) -> Result<CoefficientGrid> {
    check_dims(surrogate.p(), ordering, schedule)?;
    let solver = CdSolver::new(CovProblem::new(surrogate)?);
    fit_grid(solver, surrogate.p(), ordering, schedule, grid, cfg)
}

fn refit<P: CoordinateProblem>(
    mut solver: CdSolver<P>,
    subset: &[usize],
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<SparseCoef> {
    let mut subset = subset.to_vec();
    subset.sort_unstable();
    for &lam in lambdas {
        solver.solve(&subset, lam, cfg)?;
    }
    Ok(solver.coef())
}

/// Warm-started path on one subset down to the last of `lambdas`; returns
/// the final solution.
pub fn fit_subset_path(
    data: &Dataset,
    subset: &[usize],
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<SparseCoef> {
    refit(CdSolver::new(DataProblem::new(data)), subset, lambdas, cfg)
}

/// Covariance-form counterpart of [`fit_subset_path`].
pub fn fit_subset_path_cov(
    surrogate: &CovSurrogate,
    subset: &[usize],
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<SparseCoef> {
    refit(CdSolver::new(CovProblem::new(surrogate)?), subset, lambdas, cfg)
}

/// Predictions of every cell on a raw design, in response units.
/// Element `k` is an `n' x L` matrix.
pub fn grid_predict(grid: &CoefficientGrid, new_x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let xs = grid.standardization.transform_x(new_x, None)?;
    let yc = grid.standardization.y_center;
    Ok(grid
        .coefs
        .iter()
        .map(|row| {
            let mut out = DMatrix::from_element(xs.nrows(), row.len(), yc);
            for (l, coef) in row.iter().enumerate() {
                let pred = coef.apply(&xs);
                let mut col = out.column_mut(l);
                col += pred;
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{make_subset_schedule, standardize, StandardizePolicy};
    use crate::lasso_engine::{cd_lasso, lambda_grid, lasso_kkt_violation};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, seed: u64) -> (Dataset, StandardizationInfo) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| {
            2.0 * x[(i, 0)] - 1.5 * x[(i, 3)] + x[(i, p - 1)] + rng.sample::<f64, _>(StandardNormal)
        });
        standardize(&Dataset::new(x, y).unwrap(), StandardizePolicy::CenterAndScale).unwrap()
    }

    #[test]
    fn single_row_is_plain_lasso_path() {
        let (d, _) = instance(40, 15, 1);
        let grid = lambda_grid(&d, 20, 0.01).unwrap();
        let o = Ordering::identity(15);
        let sched = make_subset_schedule(15, 1, 1).unwrap();
        let mut cfg = PathConfig::without_early_stop();
        cfg.solver = SolverConfig::tight();
        let fit = fit_order_path(&d, &o, &sched, &grid, &cfg).unwrap();
        assert_eq!(fit.k(), 1);
        let all: Vec<usize> = (0..15).collect();
        for (l, &lam) in grid.values().iter().enumerate() {
            let (b, _) = cd_lasso(&d, &all, lam, &SparseCoef::zeros(15), &SolverConfig::tight()).unwrap();
            for j in 0..15 {
                assert!((b.get(j) - fit.coefs[0][l].get(j)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn skipped_cells_are_exact_copies_with_no_work() {
        let (d, _) = instance(50, 30, 2);
        let grid = lambda_grid(&d, 15, 0.01).unwrap();
        let o = Ordering::identity(30);
        let sched = make_subset_schedule(30, 6, 2).unwrap();
        let fit = fit_order_path(&d, &o, &sched, &grid, &PathConfig::without_early_stop()).unwrap();
        assert!(fit.skipped_cells() > 0);
        for k in 1..fit.k() {
            let member = sched.membership(&o, k);
            for l in 0..fit.l() {
                let above = &fit.coefs[k - 1][l];
                if above.indices.iter().all(|&j| member[j]) {
                    assert!(fit.skipped[k][l]);
                    assert_eq!(&fit.coefs[k][l], above);
                    assert_eq!(fit.updates[k][l], 0);
                }
            }
        }
    }

    #[test]
    fn supports_stay_inside_subsets() {
        for seed in 0..5 {
            let (d, _) = instance(30, 25, 10 + seed);
            let grid = lambda_grid(&d, 12, 0.01).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..25).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let o = Ordering::new(perm).unwrap();
            let sched = make_subset_schedule(25, 5, 1).unwrap();
            let fit = fit_order_path(&d, &o, &sched, &grid, &PathConfig::new(SqrtLassoConfig::with_default(30, 25))).unwrap();
            for k in 0..fit.k() {
                let member = sched.membership(&o, k);
                for l in 0..fit.l() {
                    assert!(fit.active(k, l).iter().all(|&j| member[j]));
                }
            }
        }
    }

    #[test]
    fn solved_cells_satisfy_kkt() {
        let (d, _) = instance(40, 20, 3);
        let grid = lambda_grid(&d, 10, 0.01).unwrap();
        let o = Ordering::identity(20);
        let sched = make_subset_schedule(20, 4, 2).unwrap();
        let fit = fit_order_path(&d, &o, &sched, &grid, &PathConfig::without_early_stop()).unwrap();
        for k in 0..fit.k() {
            let subset = o.top(sched.cutoffs()[k]).to_vec();
            for l in 0..fit.l() {
                let v = lasso_kkt_violation(&d, &subset, grid.values()[l], &fit.coefs[k][l]);
                assert!(v <= 1e-6, "cell ({k},{l}) violation {v}");
            }
        }
    }

    #[test]
    fn skip_rule_never_adds_work() {
        for seed in 0..4 {
            let (d, _) = instance(40, 40, 20 + seed);
            let grid = lambda_grid(&d, 20, 0.01).unwrap();
            let o = Ordering::identity(40);
            let sched = make_subset_schedule(40, 8, 1).unwrap();
            let mut cfg = PathConfig::without_early_stop();
            let with = fit_order_path(&d, &o, &sched, &grid, &cfg).unwrap();
            cfg.skip_rule = false;
            let without = fit_order_path(&d, &o, &sched, &grid, &cfg).unwrap();
            assert!(with.total_updates() <= without.total_updates());
        }
    }

    #[test]
    fn early_stop_flags_and_copies() {
        let (d, _) = instance(40, 30, 4);
        let grid = lambda_grid(&d, 30, 0.001).unwrap();
        let o = Ordering::identity(30);
        let sched = make_subset_schedule(30, 3, 5).unwrap();
        let cfg = PathConfig::new(SqrtLassoConfig::enabled(0.5).unwrap());
        let fit = fit_order_path(&d, &o, &sched, &grid, &cfg).unwrap();
        let stopped = fit.early_stopped.iter().flatten().filter(|e| **e).count();
        assert!(stopped > 0);
        for k in 0..fit.k() {
            for l in 1..fit.l() {
                if fit.early_stopped[k][l] && !fit.skipped[k][l] {
                    assert_eq!(fit.coefs[k][l], fit.coefs[k][l - 1]);
                }
            }
        }
    }

    #[test]
    fn predictions() {
        let (d, info) = instance(30, 10, 5);
        let grid = lambda_grid(&d, 5, 0.05).unwrap();
        let o = Ordering::identity(10);
        let sched = make_subset_schedule(10, 1, 1).unwrap();
        let fit = fit_order_path(&d, &o, &sched, &grid, &PathConfig::without_early_stop())
            .unwrap()
            .with_standardization(info.clone());
        let raw = DMatrix::from_fn(3, 10, |i, j| (i * 10 + j) as f64 * 0.1);
        let pred = grid_predict(&fit, &raw).unwrap();
        // first lambda is lambda_max: constant prediction at the training mean
        for i in 0..3 {
            assert!((pred[0][(i, 0)] - info.y_center).abs() < 1e-12);
        }
        let xs = info.transform_x(&raw, None).unwrap();
        let manual = fit.coefs[0][4].apply(&xs).add_scalar(info.y_center);
        for i in 0..3 {
            assert!((pred[0][(i, 4)] - manual[i]).abs() < 1e-12);
        }
        let dup = DMatrix::from_fn(2, 10, |_, j| j as f64);
        let pd = grid_predict(&fit, &dup).unwrap();
        assert_eq!(pd[0].row(0), pd[0].row(1));
        assert!(grid_predict(&fit, &DMatrix::zeros(2, 9)).is_err());
    }

    #[test]
    fn dimension_checks() {
        let (d, _) = instance(20, 8, 6);
        let grid = lambda_grid(&d, 5, 0.05).unwrap();
        let sched = make_subset_schedule(8, 2, 1).unwrap();
        assert!(matches!(
            fit_order_path(&d, &Ordering::identity(7), &sched, &grid, &PathConfig::without_early_stop()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn unbounded_surrogate_ends_the_row() {
        // singular Gram with gamma outside its range: bounded only for lambda >= 0.5
        let s = CovSurrogate {
            gram: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            gamma: DVector::from_vec(vec![0.8, -0.2]),
            y_sq: 1.0,
            n: 10,
            ridge_shift: Some(0.0),
            pairwise_counts: DMatrix::from_element(2, 2, 10),
        };
        let lasso = crate::lasso_engine::cov_cd_lasso(&s, &[0, 1], 0.1, &SparseCoef::zeros(2), &SolverConfig::default());
        assert!(matches!(lasso, Err(Error::SurrogateBreakdown { .. })));

        let grid = LambdaGrid::new(vec![0.7, 0.6, 0.1, 0.05]).unwrap();
        let sched = make_subset_schedule(2, 1, 1).unwrap();
        let fit = fit_order_path_cov(&s, &Ordering::identity(2), &sched, &grid, &PathConfig::without_early_stop()).unwrap();
        assert_eq!(fit.early_stopped[0], vec![false, false, true, true]);
        assert!((fit.coefs[0][1].get(0) - 0.2).abs() < 1e-8);
        assert_eq!(fit.coefs[0][2], fit.coefs[0][1]);
        assert_eq!(fit.coefs[0][3], fit.coefs[0][1]);
    }
}
