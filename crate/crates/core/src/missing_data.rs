//! Plug-in estimates of `X'X/n` and `X'y/n` from partially observed designs,
//! the identity-shift correction that makes the resulting objective convex,
//! and the matching cross-validation score.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::lasso_engine::{dot, SparseCoef};

/// Pairwise-available estimates of the Gram matrix and of `X'y/n`.
///
/// `gram` always holds the uncorrected estimate. After [`psd_correct`],
/// `ridge_shift` records the identity shift `eps`, so the matrix actually
/// minimised against is `gram + eps * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSurrogate {
    pub gram: DMatrix<f64>,
    pub gamma: DVector<f64>,
    /// `y'y / n`, used for residual-norm estimates.
    pub y_sq: f64,
    pub n: usize,
    pub ridge_shift: Option<f64>,
    pub pairwise_counts: DMatrix<u32>,
}

impl CovSurrogate {
    pub fn p(&self) -> usize {
        self.gram.ncols()
    }

    pub fn is_corrected(&self) -> bool {
        self.ridge_shift.is_some()
    }

    /// `gram + eps * I` (or the raw estimate before correction).
    pub fn effective_gram(&self) -> DMatrix<f64> {
        let mut g = self.gram.clone();
        if let Some(eps) = self.ridge_shift {
            for j in 0..g.ncols() {
                g[(j, j)] += eps;
            }
        }
        g
    }

    /// Smallest lambda giving the all-zero solution: `max_j |gamma_j|`.
    pub fn lambda_max(&self) -> f64 {
        self.gamma.amax()
    }
}

/// Estimate the surrogate from (standardized) data. Missing entries are
/// replaced by zero, and each inner product is divided by the number of rows
/// on which its terms were jointly observed.
pub fn estimate_surrogate(data: &Dataset) -> Result<CovSurrogate> {
    estimate(data, true)
}

/// Like [`estimate_surrogate`], but entries without any jointly observed
/// rows are set to zero instead of failing. Meant for scoring small
/// held-out folds, where only the entries touching a fitted support matter.
pub fn estimate_surrogate_lenient(data: &Dataset) -> Result<CovSurrogate> {
    estimate(data, false)
}

fn estimate(data: &Dataset, strict: bool) -> Result<CovSurrogate> {
    let (n, p) = (data.n(), data.p());
    let mut xt = data.x.clone();
    let mut ind = DMatrix::<f64>::from_element(n, p, 1.0);
    if let Some(mask) = &data.mask {
        for j in 0..p {
            for i in 0..n {
                if !mask[(i, j)] {
                    xt[(i, j)] = 0.0;
                    ind[(i, j)] = 0.0;
                }
            }
        }
    }
    let col_counts: Vec<usize> = ind.column_iter().map(|c| c.sum() as usize).collect();
    if strict {
        if let Some((j, &c)) = col_counts.iter().enumerate().find(|(_, &c)| c < 2) {
            return Err(Error::TooFewObserved { column: j, observed: c });
        }
    }

    let counts = if data.mask.is_some() {
        ind.transpose() * &ind
    } else {
        DMatrix::from_element(p, p, n as f64)
    };
    let mut gram = xt.transpose() * &xt;
    for k in 0..p {
        for j in 0..p {
            let c = counts[(j, k)];
            if c < 0.5 {
                if strict {
                    let (a, b) = if j < k { (j, k) } else { (k, j) };
                    return Err(Error::EmptyPairOverlap(a, b));
                }
                gram[(j, k)] = 0.0;
                continue;
            }
            gram[(j, k)] /= c;
        }
    }
    // the product is symmetric up to rounding; make it exact
    for k in 0..p {
        for j in (k + 1)..p {
            let v = 0.5 * (gram[(j, k)] + gram[(k, j)]);
            gram[(j, k)] = v;
            gram[(k, j)] = v;
        }
    }
    let mut gamma = xt.transpose() * &data.y;
    for j in 0..p {
        gamma[j] = if col_counts[j] > 0 {
            gamma[j] / col_counts[j] as f64
        } else {
            0.0
        };
    }
    Ok(CovSurrogate {
        gram,
        gamma,
        y_sq: data.y.norm_squared() / n as f64,
        n,
        ridge_shift: None,
        pairwise_counts: counts.map(|c| c.round() as u32),
    })
}

/// Estimate of the smallest eigenvalue of a symmetric matrix together with a
/// bound on the residual of its Ritz vector.
#[derive(Debug, Clone, Copy)]
pub struct ExtremeEigen {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Smallest eigenvalue of a symmetric matrix by Lanczos iteration with full
/// reorthogonalisation. Converges once the Ritz residual is below
/// `rel_tol * ||a||_F`; in exact arithmetic it terminates after at most
/// `dim` steps.
pub fn smallest_eigenvalue(a: &DMatrix<f64>, rel_tol: f64) -> Result<ExtremeEigen> {
    let dim = a.nrows();
    if dim == 0 || a.ncols() != dim {
        return Err(Error::DimensionMismatch("matrix must be square and non-empty".into()));
    }
    if dim == 1 {
        return Ok(ExtremeEigen { value: a[(0, 0)], residual: 0.0, iterations: 1 });
    }
    let anorm = a.norm().max(f64::MIN_POSITIVE);
    let tol = rel_tol * anorm;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let random_unit = |rng: &mut ChaCha8Rng, basis: &[DVector<f64>]| -> Option<DVector<f64>> {
        for _ in 0..8 {
            let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            for _ in 0..2 {
                for q in basis {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let nv = v.norm();
            if nv > 1e-8 {
                return Some(v / nv);
            }
        }
        None
    };

    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut q = random_unit(&mut rng, &basis).ok_or(Error::EigenFailure)?;
    let mut beta_prev = 0.0;

    for m in 0..dim {
        let mut w = a * &q;
        let alpha = q.dot(&w);
        w.axpy(-alpha, &q, 1.0);
        if let Some(prev) = basis.last() {
            w.axpy(-beta_prev, prev, 1.0);
        }
        basis.push(q.clone());
        for _ in 0..2 {
            for v in &basis {
                let c = v.dot(&w);
                w.axpy(-c, v, 1.0);
            }
        }
        alphas.push(alpha);
        let beta = w.norm();
        let steps = m + 1;
        let last = steps == dim;
        let breakdown = beta <= 1e-12 * anorm;

        if last || breakdown || steps % 8 == 0 {
            let mut t = DMatrix::zeros(steps, steps);
            for i in 0..steps {
                t[(i, i)] = alphas[i];
                if i + 1 < steps {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let eig = t.symmetric_eigen();
            let (imin, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .unwrap();
            let residual = if last { 0.0 } else { beta * eig.eigenvectors[(steps - 1, imin)].abs() };
            if last || residual <= tol {
                return Ok(ExtremeEigen { value: theta, residual, iterations: steps });
            }
        }

        if breakdown {
            // invariant subspace found; continue from a fresh direction
            q = random_unit(&mut rng, &basis).ok_or(Error::EigenFailure)?;
            betas.push(0.0);
            beta_prev = 0.0;
        } else {
            q = w / beta;
            betas.push(beta);
            beta_prev = beta;
        }
    }
    Err(Error::EigenFailure)
}

/// Shift the Gram estimate by `max(0, -lambda_min) * I` so the surrogate
/// objective is convex. The shift is padded by the Ritz residual bound so the
/// corrected matrix is PSD even when the eigenvalue estimate is slightly high.
pub fn psd_correct(surrogate: &CovSurrogate) -> Result<CovSurrogate> {
    let eig = smallest_eigenvalue(&surrogate.gram, 1e-13)?;
    let shift = if eig.value >= 0.0 {
        0.0
    } else {
        -eig.value + eig.residual
    };
    let mut out = surrogate.clone();
    out.ridge_shift = Some(shift);
    Ok(out)
}

/// `-2 b'gamma + b' G b` with the uncorrected Gram estimate. Lower is better;
/// on fully observed data this equals the mean squared error minus `y'y/n`.
pub fn surrogate_cv_score(coef: &SparseCoef, surrogate: &CovSurrogate) -> Result<f64> {
    if coef.p != surrogate.p() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have dimension {}, surrogate {}",
            coef.p,
            surrogate.p()
        )));
    }
    let lin: f64 = coef
        .indices
        .iter()
        .zip(&coef.values)
        .map(|(&j, &v)| v * surrogate.gamma[j])
        .sum();
    let mut quad = 0.0;
    for (&j, &vj) in coef.indices.iter().zip(&coef.values) {
        let col: Vec<f64> = coef.indices.iter().map(|&k| surrogate.gram[(k, j)]).collect();
        quad += vj * dot(&col, &coef.values);
    }
    Ok(-2.0 * lin + quad)
}
