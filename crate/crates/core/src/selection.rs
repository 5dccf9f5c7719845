//! Choosing a `(subset, lambda)` pair: K-fold and single-split
//! cross-validation, the chronological train/validate/test protocol,
//! selection among fixed candidates, and the finite-sample oracle bound.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{standardize, Dataset, Ordering, StandardizationInfo, StandardizePolicy, SubsetSchedule};
use crate::error::{Error, Result};
use crate::lasso_engine::{lambda_grid, LambdaGrid, SparseCoef};
use crate::missing_data::{estimate_surrogate, estimate_surrogate_lenient, psd_correct, surrogate_cv_score};
use crate::order_path::{
    fit_order_path, fit_order_path_cov, fit_subset_path, fit_subset_path_cov, CoefficientGrid, PathConfig,
};
use crate::ridge_path::{ridge_all_subsets_predict, ridge_fit, ridge_lambda_grid, RidgeTraversal};

/// Scores closer than this are treated as ties.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    Kfold,
    SingleSplit,
    Chronological,
}

/// A partition of the rows `0..n`.
///
/// For `Kfold` every part is held out once. For `SingleSplit` the parts are
/// `[train, validate]`; for `Chronological` they are `[train, validate,
/// test]` and must be contiguous and in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVPlan {
    pub n: usize,
    pub folds: Vec<Vec<usize>>,
    pub mode: CvMode,
    pub seed: u64,
}

impl CVPlan {
    /// Shuffle rows with `seed` and deal them into `k` folds whose sizes
    /// differ by at most one.
    pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > n {
            return Err(Error::InvalidConfig(format!("cannot split {n} rows into {k} folds")));
        }
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (base, extra) = (n / k, n % k);
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            let mut fold = rows[start..start + len].to_vec();
            fold.sort_unstable();
            folds.push(fold);
            start += len;
        }
        Self::from_folds(n, folds, CvMode::Kfold, seed)
    }

    /// Random split holding out `n_validate` rows.
    pub fn single_split(n: usize, n_validate: usize, seed: u64) -> Result<Self> {
        if n_validate == 0 || n_validate >= n {
            return Err(Error::InvalidConfig(format!("cannot hold out {n_validate} of {n} rows")));
        }
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut val = rows[..n_validate].to_vec();
        let mut train = rows[n_validate..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Self::from_folds(n, vec![train, val], CvMode::SingleSplit, seed)
    }

    /// Consecutive blocks of the given lengths.
    pub fn chronological(train: usize, validate: usize, test: usize) -> Result<Self> {
        let n = train + validate + test;
        let folds = vec![
            (0..train).collect(),
            (train..train + validate).collect(),
            (train + validate..n).collect(),
        ];
        Self::from_folds(n, folds, CvMode::Chronological, 0)
    }

    /// Three near-equal consecutive blocks; leftover rows go to training.
    pub fn chronological_thirds(n: usize) -> Result<Self> {
        let third = n / 3;
        Self::chronological(n - 2 * third, third, third)
    }

    pub fn from_folds(n: usize, folds: Vec<Vec<usize>>, mode: CvMode, seed: u64) -> Result<Self> {
        let mut seen = vec![false; n];
        for fold in &folds {
            for &i in fold {
                if i >= n || seen[i] {
                    return Err(Error::OverlapError(format!("row {i} is out of range or repeated")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::OverlapError(format!("row {i} is in no fold")));
        }
        match mode {
            CvMode::Kfold if folds.len() < 2 => {
                return Err(Error::InvalidConfig("k-fold needs at least two folds".into()))
            }
            CvMode::SingleSplit if folds.len() != 2 => {
                return Err(Error::InvalidConfig("a single split has two parts".into()))
            }
            CvMode::Chronological => {
                if folds.len() != 3 {
                    return Err(Error::InvalidConfig("a chronological split has three parts".into()));
                }
                let flat: Vec<usize> = folds.iter().flatten().copied().collect();
                if flat.iter().enumerate().any(|(pos, &i)| pos != i) {
                    return Err(Error::OverlapError("blocks must be consecutive and in order".into()));
                }
            }
            _ => {}
        }
        Ok(Self { n, folds, mode, seed })
    }

    /// Indices of the parts used as validation sets.
    fn held_out(&self) -> Vec<usize> {
        match self.mode {
            CvMode::Kfold => (0..self.folds.len()).collect(),
            CvMode::SingleSplit | CvMode::Chronological => vec![1],
        }
    }

    fn complement(&self, fold: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = match self.mode {
            CvMode::Chronological => self.folds[0].clone(),
            _ => (0..self.folds.len())
                .filter(|&f| f != fold)
                .flat_map(|f| self.folds[f].iter().copied())
                .collect(),
        };
        rows.sort_unstable();
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    #[default]
    Lasso,
    /// Covariance-form Lasso on pairwise estimates; scored with the
    /// surrogate criterion.
    LassoMissing,
    Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub mode: FitMode,
    pub path: PathConfig,
    /// Applied to each training part; validation rows reuse its transform.
    pub policy: StandardizePolicy,
    pub ridge_traversal: RidgeTraversal,
}

impl SelectConfig {
    pub fn new(mode: FitMode, path: PathConfig) -> Self {
        Self {
            mode,
            path,
            policy: StandardizePolicy::CenterOnly,
            ridge_traversal: RidgeTraversal::SmallestFirst,
        }
    }
}

/// Outcome of a selection run.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub k_star: usize,
    pub l_star: usize,
    /// Mean validation score per cell (MSE, or the surrogate criterion).
    pub scores: DMatrix<f64>,
    /// Cells eligible for selection.
    pub candidate: DMatrix<bool>,
    /// Refit coefficients, in the coordinates given by `standardization`.
    pub chosen: SparseCoef,
    pub standardization: StandardizationInfo,
    /// Number of eligible cells (`M`).
    pub candidates_considered: usize,
    pub subset_size: usize,
    pub lambda: f64,
}

impl SelectionResult {
    /// Predictions on a raw design.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let xs = self.standardization.transform_x(x, None)?;
        Ok(self.standardization.inverse_predictions(&self.chosen.apply(&xs)))
    }

    /// Coefficients and intercept in the units of the raw data.
    pub fn original_scale(&self) -> (Vec<f64>, f64) {
        original_scale(&self.chosen, &self.standardization)
    }
}

/// Map coefficients fitted in standardized coordinates back to raw units.
pub fn original_scale(coef: &SparseCoef, info: &StandardizationInfo) -> (Vec<f64>, f64) {
    let mut beta = vec![0.0; coef.p];
    let mut intercept = info.y_center;
    for (&j, &v) in coef.indices.iter().zip(&coef.values) {
        beta[j] = v / info.scales[j];
        intercept -= beta[j] * info.centers[j];
    }
    (beta, intercept)
}

/// Default lambda grid for `mode`, computed on `data` standardized with
/// `policy`.
pub fn lambda_grid_for(data: &Dataset, cfg: &SelectConfig, len: usize, ratio: f64) -> Result<LambdaGrid> {
    let (d, _) = standardize(data, cfg.policy)?;
    match cfg.mode {
        FitMode::Lasso => lambda_grid(&d, len, ratio),
        FitMode::LassoMissing => LambdaGrid::log_spaced(estimate_surrogate(&d)?.lambda_max(), len, ratio),
        FitMode::Ridge => ridge_lambda_grid(&d, len, ratio),
    }
}

/// Index of the minimal score among eligible cells, preferring larger `k`
/// and then smaller `l` (larger lambda) among ties.
pub fn argmin_with_tiebreak(scores: &DMatrix<f64>, candidate: &DMatrix<bool>) -> Result<(usize, usize)> {
    let best = scores
        .iter()
        .zip(candidate.iter())
        .filter(|(s, c)| **c && s.is_finite())
        .map(|(s, _)| *s)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::EmptyCandidates);
    }
    let tol = TIE_TOL * best.abs().max(1.0);
    for k in (0..scores.nrows()).rev() {
        for l in 0..scores.ncols() {
            if candidate[(k, l)] && scores[(k, l)] <= best + tol {
                return Ok((k, l));
            }
        }
    }
    Err(Error::EmptyCandidates)
}

struct FoldScores {
    scores: DMatrix<f64>,
    stopped: DMatrix<bool>,
}

fn mse(pred: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (pred - y).norm_squared() / y.len() as f64
}

fn grid_scores_mse(fit: &CoefficientGrid, xs: &DMatrix<f64>, y: &DVector<f64>, y_center: f64) -> FoldScores {
    let (kk, ll) = (fit.k(), fit.l());
    let yc = y.add_scalar(-y_center);
    let mut scores = DMatrix::zeros(kk, ll);
    let mut stopped = DMatrix::from_element(kk, ll, false);
    for k in 0..kk {
        for l in 0..ll {
            scores[(k, l)] = mse(&fit.coefs[k][l].apply(xs), &yc);
            stopped[(k, l)] = fit.early_stopped[k][l];
        }
    }
    FoldScores { scores, stopped }
}

fn fit_fold(
    train: &Dataset,
    val: &Dataset,
    ordering: &Ordering,
    schedule: &SubsetSchedule,
    grid: &LambdaGrid,
    cfg: &SelectConfig,
) -> Result<FoldScores> {
    let (tr, info) = standardize(train, cfg.policy)?;
    match cfg.mode {
        FitMode::Lasso => {
            let fit = fit_order_path(&tr, ordering, schedule, grid, &cfg.path)?;
            let xs = info.transform_x(&val.x, None)?;
            Ok(grid_scores_mse(&fit, &xs, &val.y, info.y_center))
        }
        FitMode::LassoMissing => {
            let surrogate = psd_correct(&estimate_surrogate(&tr)?)?;
            let fit = fit_order_path_cov(&surrogate, ordering, schedule, grid, &cfg.path)?;
            let held = estimate_surrogate_lenient(&info.transform(val)?)?;
            let (kk, ll) = (fit.k(), fit.l());
            let mut scores = DMatrix::zeros(kk, ll);
            let mut stopped = DMatrix::from_element(kk, ll, false);
            for k in 0..kk {
                for l in 0..ll {
                    scores[(k, l)] = surrogate_cv_score(&fit.coefs[k][l], &held)?;
                    stopped[(k, l)] = fit.early_stopped[k][l];
                }
            }
            Ok(FoldScores { scores, stopped })
        }
        FitMode::Ridge => {
            let xs = info.transform_x(&val.x, None)?;
            let yc = val.y.add_scalar(-info.y_center);
            let preds = ridge_all_subsets_predict(&tr, ordering, grid.values(), &xs, cfg.ridge_traversal)?;
            let (kk, ll) = (schedule.k(), grid.len());
            let mut scores = DMatrix::zeros(kk, ll);
            for k in 0..kk {
                for l in 0..ll {
                    scores[(k, l)] = mse(&preds.for_size(l, schedule.cutoffs()[k]), &yc);
                }
            }
            Ok(FoldScores {
                scores,
                stopped: DMatrix::from_element(kk, ll, false),
            })
        }
    }
}

/// Fit the selected cell on `data`: the warm-started path on `S_k` down to
/// `lambda_l` (Lasso modes) or a direct ridge solve.
pub fn refit_cell(
    data: &Dataset,
    ordering: &Ordering,
    schedule: &SubsetSchedule,
    grid: &LambdaGrid,
    k: usize,
    l: usize,
    cfg: &SelectConfig,
) -> Result<(SparseCoef, StandardizationInfo)> {
    let (d, info) = standardize(data, cfg.policy)?;
    let subset = ordering.top(schedule.cutoffs()[k]);
    let lambdas = &grid.values()[..=l];
    let coef = match cfg.mode {
        FitMode::Lasso => fit_subset_path(&d, subset, lambdas, &cfg.path.solver)?,
        FitMode::LassoMissing => {
            let s = psd_correct(&estimate_surrogate(&d)?)?;
            fit_subset_path_cov(&s, subset, lambdas, &cfg.path.solver)?
        }
        FitMode::Ridge => {
            let beta = ridge_fit(&d, subset, grid.values()[l])?;
            SparseCoef::from_dense(beta.as_slice())
        }
    };
    Ok((coef, info))
}

fn check_plan(data: &Dataset, plan: &CVPlan) -> Result<()> {
    if plan.n != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} rows, data has {}",
            plan.n,
            data.n()
        )));
    }
    for f in plan.held_out() {
        if plan.folds[f].len() < 2 {
            return Err(Error::FoldTooSmall {
                fold: f,
                size: plan.folds[f].len(),
            });
        }
    }
    Ok(())
}

/// Cross-validate the whole grid, pick the best eligible cell and refit it
/// on all of `data`.
///
/// A cell is eligible unless it was an early-stopped repeat in some fold.
/// Works with `Kfold` and `SingleSplit` plans.
pub fn kfold_cv_select(
    data: &Dataset,
    ordering: &Ordering,
    schedule: &SubsetSchedule,
    grid: &LambdaGrid,
    plan: &CVPlan,
    cfg: &SelectConfig,
) -> Result<SelectionResult> {
    if plan.mode == CvMode::Chronological {
        return Err(Error::InvalidConfig("use chrono_select for chronological plans".into()));
    }
    check_plan(data, plan)?;
    let held = plan.held_out();
    let per_fold = held
        .par_iter()
        .map(|&f| {
            let train = data.select_rows(&plan.complement(f));
            let val = data.select_rows(&plan.folds[f]);
            fit_fold(&train, &val, ordering, schedule, grid, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let (kk, ll) = (schedule.k(), grid.len());
    let mut scores = DMatrix::zeros(kk, ll);
    let mut candidate = DMatrix::from_element(kk, ll, true);
    for fs in &per_fold {
        scores += &fs.scores;
        for (c, s) in candidate.iter_mut().zip(fs.stopped.iter()) {
            *c &= !*s;
        }
    }
    scores /= per_fold.len() as f64;
    let (k_star, l_star) = argmin_with_tiebreak(&scores, &candidate)?;
    let (chosen, standardization) = refit_cell(data, ordering, schedule, grid, k_star, l_star, cfg)?;
    Ok(SelectionResult {
        k_star,
        l_star,
        candidates_considered: candidate.iter().filter(|c| **c).count(),
        scores,
        candidate,
        chosen,
        standardization,
        subset_size: schedule.cutoffs()[k_star],
        lambda: grid.values()[l_star],
    })
}

/// Selection on the validation block of a chronological plan, refit on
/// training plus validation, and the test-block error of that refit.
#[derive(Debug, Clone)]
pub struct ChronoResult {
    pub selection: SelectionResult,
    pub test_mse: f64,
    pub test_predictions: DVector<f64>,
}

/// Fit on the first block, select on the second, refit on both and report
/// the error on the third. The test rows play no part in selection.
pub fn chrono_select(
    data: &Dataset,
    plan: &CVPlan,
    ordering: &Ordering,
    schedule: &SubsetSchedule,
    grid: &LambdaGrid,
    cfg: &SelectConfig,
) -> Result<ChronoResult> {
    if plan.mode != CvMode::Chronological {
        return Err(Error::InvalidConfig("chrono_select needs a chronological plan".into()));
    }
    check_plan(data, plan)?;
    let train = data.select_rows(&plan.folds[0]);
    let val = data.select_rows(&plan.folds[1]);
    let fs = fit_fold(&train, &val, ordering, schedule, grid, cfg)?;
    let candidate = fs.stopped.map(|s| !s);
    let (k_star, l_star) = argmin_with_tiebreak(&fs.scores, &candidate)?;
    let both: Vec<usize> = plan.folds[0].iter().chain(&plan.folds[1]).copied().collect();
    let (chosen, standardization) =
        refit_cell(&data.select_rows(&both), ordering, schedule, grid, k_star, l_star, cfg)?;
    let selection = SelectionResult {
        k_star,
        l_star,
        candidates_considered: candidate.iter().filter(|c| **c).count(),
        scores: fs.scores,
        candidate,
        chosen,
        standardization,
        subset_size: schedule.cutoffs()[k_star],
        lambda: grid.values()[l_star],
    };
    let test = data.select_rows(&plan.folds[2]);
    let (test_mse, test_predictions) = if test.n() == 0 {
        (f64::NAN, DVector::zeros(0))
    } else {
        let pred = selection.predict(&test.x)?;
        (mse(&pred, &test.y), pred)
    };
    Ok(ChronoResult {
        selection,
        test_mse,
        test_predictions,
    })
}

/// Index of the candidate with the smallest residual sum of squares on the
/// test data; ties go to the smallest index.
pub fn test_split_select(candidates: &[SparseCoef], test_x: &DMatrix<f64>, test_y: &DVector<f64>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in candidates.iter().enumerate() {
        let rss = (test_y - b.apply(test_x)).norm_squared();
        if best.is_none_or(|(_, r)| rss < r) {
            best = Some((i, rss));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyCandidates)
}

/// `(beta - b)' sigma (beta - b)`.
pub fn sigma_distance_sq(b: &SparseCoef, beta_true: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let diff = DVector::from_iterator(beta_true.len(), beta_true.iter().enumerate().map(|(j, &t)| t - b.get(j)));
    diff.dot(&(sigma * &diff))
}

/// Index of the candidate closest to `beta_true` in the `sigma` metric.
pub fn oracle_select(candidates: &[SparseCoef], beta_true: &[f64], sigma: &DMatrix<f64>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in candidates.iter().enumerate() {
        let d = sigma_distance_sq(b, beta_true, sigma);
        if best.is_none_or(|(_, r)| d < r) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyCandidates)
}

/// Quantities entering the finite-sample bound for selection among `m`
/// fixed candidates on a test set of size `n`. `m` is real so that the
/// formula can be evaluated at non-integer points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Inputs {
    pub m: f64,
    pub n: usize,
    pub nu: f64,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// `||Sigma^{1/2}(beta_hat - beta)||_2` of the selected candidate.
    pub lhs: f64,
    /// The same quantity for the best candidate.
    pub oracle_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub m: f64,
    pub n: usize,
    pub nu: f64,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub psi: f64,
    pub lhs: f64,
    pub oracle_term: f64,
    /// Infinite when the bound is vacuous.
    pub rhs: f64,
    pub holds: bool,
    /// `psi >= 1`: the bound says nothing.
    pub vacuous: bool,
    /// `1 - 2 m^{-c1} - 2 m^{-c2}`.
    pub prob_floor: f64,
}

/// `2 sqrt(2) nu (1 + c1)^{1/4} (log m / n)^{1/4}`.
pub fn theorem1_psi(nu: f64, c1: f64, m: f64, n: usize) -> f64 {
    2.0 * 2f64.sqrt() * nu * (1.0 + c1).powf(0.25) * (m.ln() / n as f64).powf(0.25)
}

/// Additive term `2 sqrt(2) sigma sqrt(1 + c2) sqrt(log m / n)`.
pub fn theorem1_noise_term(sigma: f64, c2: f64, m: f64, n: usize) -> f64 {
    2.0 * 2f64.sqrt() * sigma * (1.0 + c2).sqrt() * (m.ln() / n as f64).sqrt()
}

/// Evaluate the bound
/// `(1 + psi)/(1 - psi) * oracle + noise_term / (1 - psi)` and compare it
/// with the realised error. A vacuous bound (`psi >= 1`) holds trivially.
pub fn theorem1_bound(inp: &Theorem1Inputs) -> Result<Theorem1Report> {
    let positive = [inp.nu, inp.sigma, inp.c1, inp.c2];
    if positive.iter().any(|v| !(*v > 0.0)) || !(inp.m >= 1.0) || inp.n == 0 {
        return Err(Error::InvalidConstants(format!(
            "need nu, sigma, c1, c2 > 0, m >= 1 and n >= 1 (got {inp:?})"
        )));
    }
    let log_m = inp.m.ln();
    if log_m > 0.0 && inp.c1 >= inp.n as f64 / log_m - 1.0 {
        return Err(Error::InvalidConstants(format!(
            "c1 = {} must be below n / log m - 1 = {}",
            inp.c1,
            inp.n as f64 / log_m - 1.0
        )));
    }
    let psi = theorem1_psi(inp.nu, inp.c1, inp.m, inp.n);
    let vacuous = psi >= 1.0;
    let rhs = if vacuous {
        f64::INFINITY
    } else {
        (1.0 + psi) / (1.0 - psi) * inp.oracle_term
            + theorem1_noise_term(inp.sigma, inp.c2, inp.m, inp.n) / (1.0 - psi)
    };
    Ok(Theorem1Report {
        m: inp.m,
        n: inp.n,
        nu: inp.nu,
        sigma: inp.sigma,
        c1: inp.c1,
        c2: inp.c2,
        psi,
        lhs: inp.lhs,
        oracle_term: inp.oracle_term,
        rhs,
        holds: inp.lhs <= rhs,
        vacuous,
        prob_floor: 1.0 - 2.0 * inp.m.powf(-inp.c1) - 2.0 * inp.m.powf(-inp.c2),
    })
}

/// Row ranges of a chronological plan.
pub fn chrono_ranges(plan: &CVPlan) -> Option<(Range<usize>, Range<usize>, Range<usize>)> {
    if plan.mode != CvMode::Chronological {
        return None;
    }
    let a = plan.folds[0].len();
    let b = a + plan.folds[1].len();
    Some((0..a, a..b, b..plan.n))
}
