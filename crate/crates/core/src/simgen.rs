//! Synthetic designs, coefficient vectors, orderings of controlled quality,
//! corruption and missingness mechanisms, and the variance-explained metric.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row covariance of a simulated design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    /// `Sigma = I`.
    Identity,
    /// `Sigma_jk = 0.9^|j-k|`.
    Ar09,
    /// `(Sigma^{-1})_jk = 0.4^{|j-k|/5}`.
    InvExp,
    /// `Sigma_jk = 0.5 + 0.5 * 1{j = k}`.
    Equi05,
}

impl SigmaSpec {
    pub const ALL: [SigmaSpec; 4] = [Self::Identity, Self::Ar09, Self::InvExp, Self::Equi05];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Ar09 => "ar_09",
            Self::InvExp => "inv_exp",
            Self::Equi05 => "equi_05",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefRegime {
    Const05,
    Const15,
    /// i.i.d. `U[0, 2]`.
    Unif02,
}

impl CoefRegime {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Const05 => "const_05",
            Self::Const15 => "const_15",
            Self::Unif02 => "unif_02",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub sigma_spec: SigmaSpec,
    pub sparsity: usize,
    pub coef_regime: CoefRegime,
    pub eta: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if self.sparsity > self.p {
            return Err(Error::InvalidConfig(format!(
                "sparsity {} exceeds p = {}",
                self.sparsity, self.p
            )));
        }
        if !(self.eta > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig("eta must be positive and noise_sd non-negative".into()));
        }
        Ok(())
    }
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sigma_matrix(spec: SigmaSpec, p: usize) -> Result<DMatrix<f64>> {
    Ok(match spec {
        SigmaSpec::Identity => DMatrix::identity(p, p),
        SigmaSpec::Ar09 => DMatrix::from_fn(p, p, |j, k| 0.9f64.powi(j.abs_diff(k) as i32)),
        SigmaSpec::Equi05 => DMatrix::from_fn(p, p, |j, k| if j == k { 1.0 } else { 0.5 }),
        SigmaSpec::InvExp => inv_exp_precision(p)
            .cholesky()
            .ok_or(Error::SingularSystem)?
            .inverse(),
    })
}

fn inv_exp_precision(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| 0.4f64.powf(j.abs_diff(k) as f64 / 5.0))
}

/// Draws rows `N(0, Sigma)`. The inverse-exponential case factors its
/// precision matrix once and reuses the factor.
#[derive(Debug, Clone)]
pub struct DesignSampler {
    spec: SigmaSpec,
    p: usize,
    /// Upper Cholesky factor `U` of the precision (`P = U'U`).
    precision_upper: Option<DMatrix<f64>>,
}

impl DesignSampler {
    pub fn new(spec: SigmaSpec, p: usize) -> Result<Self> {
        let precision_upper = match spec {
            SigmaSpec::InvExp => {
                let l = inv_exp_precision(p)
                    .cholesky()
                    .ok_or(Error::SingularSystem)?
                    .unpack();
                Some(l.transpose())
            }
            _ => None,
        };
        Ok(Self {
            spec,
            p,
            precision_upper,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn spec(&self) -> SigmaSpec {
        self.spec
    }

    pub fn sigma(&self) -> Result<DMatrix<f64>> {
        sigma_matrix(self.spec, self.p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.p;
        let mut w = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        match self.spec {
            SigmaSpec::Identity => w,
            SigmaSpec::Ar09 => {
                let (a, b) = (0.9, (1.0f64 - 0.81).sqrt());
                for j in 1..p {
                    for i in 0..n {
                        w[(i, j)] = a * w[(i, j - 1)] + b * w[(i, j)];
                    }
                }
                w
            }
            SigmaSpec::Equi05 => {
                let common: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let h = 0.5f64.sqrt();
                for j in 0..p {
                    for i in 0..n {
                        w[(i, j)] = h * w[(i, j)] + h * common[i];
                    }
                }
                w
            }
            SigmaSpec::InvExp => {
                // solve U x = w row by row: cov(x) = U^{-1} U^{-T} = P^{-1}
                let u = self.precision_upper.as_ref().expect("factor present");
                let wt = w.transpose();
                let xt = u.solve_upper_triangular(&wt).expect("factor is nonsingular");
                xt.transpose()
            }
        }
    }
}

/// Design part of a simulation: `cfg.n` rows drawn with `cfg.seed`.
pub fn gen_design(cfg: &SimConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(DesignSampler::new(cfg.sigma_spec, cfg.p)?.sample(cfg.n, &mut rng))
}

/// Sparse coefficients on a uniformly random support of size `sparsity`.
/// Returns the vector and its sorted support.
pub fn gen_beta<R: Rng + ?Sized>(p: usize, sparsity: usize, regime: CoefRegime, rng: &mut R) -> (Vec<f64>, Vec<usize>) {
    let mut support = index::sample(rng, p, sparsity.min(p)).into_vec();
    support.sort_unstable();
    let mut beta = vec![0.0; p];
    for &j in &support {
        beta[j] = match regime {
            CoefRegime::Const05 => 0.5,
            CoefRegime::Const15 => 1.5,
            CoefRegime::Unif02 => rng.random_range(0.0..2.0),
        };
    }
    (beta, support)
}

/// `y = X beta + noise_sd * eps`.
pub fn simulate_response<R: Rng + ?Sized>(x: &DMatrix<f64>, beta: &[f64], noise_sd: f64, rng: &mut R) -> DVector<f64> {
    let mut y = x * DVector::from_row_slice(beta);
    for v in y.iter_mut() {
        *v += noise_sd * rng.sample::<f64, _>(StandardNormal);
    }
    y
}

/// Sampling weights favouring the signal variables by the factor `eta`:
/// `eta / (p + (eta - 1)|S|)` on the support and `1 / (p + (eta - 1)|S|)`
/// elsewhere.
pub fn rho_signal(p: usize, support: &[usize], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!("probability ratio {eta} must be positive")));
    }
    let denom = p as f64 + (eta - 1.0) * support.len() as f64;
    let mut rho = vec![1.0 / denom; p];
    for &j in support {
        rho[j] = eta / denom;
    }
    Ok(rho)
}

/// Corruption mechanisms, before the probabilities are shuffled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionRegime {
    /// 0.5 on the first `floor(0.2 p)` columns.
    First20,
    /// 0.5 on the first `floor(0.5 p)` columns.
    First50,
    /// 0.5 on the first `floor(0.8 p)` columns.
    First80,
    /// `min(0.95, (j - 1) / p)`.
    Linear,
}

impl CorruptionRegime {
    pub const ALL: [CorruptionRegime; 4] = [Self::First20, Self::First50, Self::First80, Self::Linear];

    pub fn label(&self) -> &'static str {
        match self {
            Self::First20 => "1",
            Self::First50 => "2",
            Self::First80 => "3",
            Self::Linear => "4",
        }
    }
}

/// Unshuffled corruption probabilities.
pub fn corruption_profile(regime: CorruptionRegime, p: usize) -> Vec<f64> {
    let block = |frac: f64| {
        let m = (frac * p as f64).floor() as usize;
        (0..p).map(|j| if j < m { 0.5 } else { 0.0 }).collect()
    };
    match regime {
        CorruptionRegime::First20 => block(0.2),
        CorruptionRegime::First50 => block(0.5),
        CorruptionRegime::First80 => block(0.8),
        CorruptionRegime::Linear => (0..p).map(|j| (j as f64 / p as f64).min(0.95)).collect(),
    }
}

/// Corruption probabilities in a uniformly random order.
pub fn corruption_rho<R: Rng + ?Sized>(regime: CorruptionRegime, p: usize, rng: &mut R) -> Vec<f64> {
    let mut rho = corruption_profile(regime, p);
    rho.shuffle(rng);
    rho
}

fn check_probs(rho: &[f64], p: usize, upper_open: bool) -> Result<()> {
    if rho.len() != p {
        return Err(Error::DimensionMismatch(format!("{} probabilities for {p} columns", rho.len())));
    }
    let ok = |r: f64| r >= 0.0 && if upper_open { r < 1.0 } else { r <= 1.0 };
    if let Some(&bad) = rho.iter().find(|&&r| !ok(r)) {
        return Err(Error::InvalidConfig(format!("probability {bad} out of range")));
    }
    Ok(())
}

/// Replace each entry of column `j` independently with probability
/// `rho[j]` by a fresh standard normal draw.
pub fn corrupt_design<R: Rng + ?Sized>(x: &DMatrix<f64>, rho: &[f64], rng: &mut R) -> Result<DMatrix<f64>> {
    check_probs(rho, x.ncols(), false)?;
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        if rho[j] == 0.0 {
            continue;
        }
        for v in col.iter_mut() {
            if rng.random::<f64>() < rho[j] {
                *v = rng.sample(StandardNormal);
            }
        }
    }
    Ok(out)
}

/// Missingness mechanisms, before the probabilities are shuffled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissingRegime {
    /// 0.25 everywhere.
    Homogeneous,
    /// `(j - 1) / (3p)`.
    Linear,
    /// 0.3 on the first `floor(p / 2)` columns.
    HalfBlock,
}

impl MissingRegime {
    pub const ALL: [MissingRegime; 3] = [Self::Homogeneous, Self::Linear, Self::HalfBlock];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Homogeneous => "1",
            Self::Linear => "2",
            Self::HalfBlock => "3",
        }
    }
}

pub fn missing_profile(regime: MissingRegime, p: usize) -> Vec<f64> {
    match regime {
        MissingRegime::Homogeneous => vec![0.25; p],
        MissingRegime::Linear => (0..p).map(|j| j as f64 / (3.0 * p as f64)).collect(),
        MissingRegime::HalfBlock => (0..p).map(|j| if j < p / 2 { 0.3 } else { 0.0 }).collect(),
    }
}

pub fn missing_rho<R: Rng + ?Sized>(regime: MissingRegime, p: usize, rng: &mut R) -> Vec<f64> {
    let mut rho = missing_profile(regime, p);
    rho.shuffle(rng);
    rho
}

/// Observation mask with entry `(i, j)` missing independently with
/// probability `rho[j]`. `true` means observed.
pub fn mask_missing<R: Rng + ?Sized>(n: usize, rho: &[f64], rng: &mut R) -> Result<DMatrix<bool>> {
    check_probs(rho, rho.len(), true)?;
    let mut mask = DMatrix::from_element(n, rho.len(), true);
    for (j, mut col) in mask.column_iter_mut().enumerate() {
        if rho[j] == 0.0 {
            continue;
        }
        for m in col.iter_mut() {
            *m = rng.random::<f64>() >= rho[j];
        }
    }
    Ok(mask)
}

/// Proportion of variance explained, `1 - RSS / TSS`.
pub fn pve(y_true: &DVector<f64>, y_pred: &DVector<f64>) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} responses, {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mean = y_true.mean();
    let tss: f64 = y_true.iter().map(|v| (v - mean).powi(2)).sum();
    if !(tss > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(1.0 - (y_true - y_pred).norm_squared() / tss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
        x.transpose() * x / x.nrows() as f64
    }

    #[test]
    fn identity_moments() {
        let s = DesignSampler::new(SigmaSpec::Identity, 2).unwrap();
        let x = s.sample(100_000, &mut replicate_rng(1, 0));
        let c = sample_cov(&x);
        let tol = 3.0 / (100_000f64).sqrt();
        assert!((c - DMatrix::<f64>::identity(2, 2)).amax() < tol);
    }

    fn adjacent_corr(x: &DMatrix<f64>, j: usize, k: usize) -> f64 {
        let (a, b) = (x.column(j), x.column(k));
        a.dot(&b) / (a.norm() * b.norm())
    }

    #[test]
    fn ar_and_equicorrelated_moments() {
        let ar = DesignSampler::new(SigmaSpec::Ar09, 4).unwrap().sample(100_000, &mut replicate_rng(2, 0));
        assert!((adjacent_corr(&ar, 1, 2) - 0.9).abs() < 0.02);
        assert!((adjacent_corr(&ar, 0, 2) - 0.81).abs() < 0.02);
        let eq = DesignSampler::new(SigmaSpec::Equi05, 4).unwrap().sample(100_000, &mut replicate_rng(3, 0));
        assert!((adjacent_corr(&eq, 0, 3) - 0.5).abs() < 0.02);
        assert!((sample_cov(&eq)[(2, 2)] - 1.0).abs() < 0.02);
    }

    #[test]
    fn inv_exp_covariance() {
        let sigma = sigma_matrix(SigmaSpec::InvExp, 30).unwrap();
        let eig = sigma.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
        let prod = &sigma * inv_exp_precision(30);
        assert!((prod - DMatrix::<f64>::identity(30, 30)).amax() < 1e-10);
        let s = DesignSampler::new(SigmaSpec::InvExp, 6).unwrap();
        let x = s.sample(200_000, &mut replicate_rng(4, 0));
        let want = sigma_matrix(SigmaSpec::InvExp, 6).unwrap();
        assert!((sample_cov(&x) - want).amax() < 0.05);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimConfig {
            n: 20,
            p: 15,
            sigma_spec: SigmaSpec::InvExp,
            sparsity: 3,
            coef_regime: CoefRegime::Unif02,
            eta: 1.0,
            noise_sd: 1.0,
            seed: 11,
        };
        assert_eq!(gen_design(&cfg).unwrap(), gen_design(&cfg).unwrap());
        let a = gen_beta(50, 5, CoefRegime::Unif02, &mut replicate_rng(5, 1));
        let b = gen_beta(50, 5, CoefRegime::Unif02, &mut replicate_rng(5, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn coefficient_regimes() {
        let mut rng = replicate_rng(6, 0);
        let (b, s) = gen_beta(40, 5, CoefRegime::Const15, &mut rng);
        assert_eq!(b.iter().filter(|&&v| v == 1.5).count(), 5);
        assert_eq!(s.len(), 5);
        let (b, _) = gen_beta(40, 25, CoefRegime::Unif02, &mut rng);
        assert!(b.iter().filter(|&&v| v != 0.0).all(|&v| (0.0..=2.0).contains(&v)));
        let (b, s) = gen_beta(40, 0, CoefRegime::Const05, &mut rng);
        assert!(s.is_empty() && b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn signal_weights() {
        let r = rho_signal(10, &[2, 7], 4.0).unwrap();
        assert_close!(r[2], 0.25, 1e-15);
        assert_close!(r[0], 0.0625, 1e-15);
        assert_close!(r.iter().sum::<f64>(), 1.0, 1e-12);
        let u = rho_signal(8, &[1], 1.0).unwrap();
        assert!(u.iter().all(|&v| (v - 0.125).abs() < 1e-15));
        let tiny = rho_signal(100, &[0, 1], 1e-9).unwrap();
        assert!(tiny[0] < 1e-10);
        for eta in [0.01, 0.3, 2.0, 55.0] {
            let r = rho_signal(37, &[0, 5, 9], eta).unwrap();
            assert_close!(r.iter().sum::<f64>(), 1.0, 1e-12);
        }
        assert!(rho_signal(5, &[0], 0.0).is_err());
    }

    #[test]
    fn corruption() {
        let mut rng = replicate_rng(7, 0);
        let x = DMatrix::from_fn(10_000, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let same = corrupt_design(&x, &[0.0; 3], &mut rng).unwrap();
        assert_eq!(same, x);
        let c = corrupt_design(&x, &[0.0, 1.0, 0.0], &mut rng).unwrap();
        assert_eq!(c.column(0), x.column(0));
        assert_eq!(c.column(2), x.column(2));
        let r = c.column(1).dot(&x.column(1)) / (c.column(1).norm() * x.column(1).norm());
        assert!(r.abs() < 0.05);
        let lin = corruption_profile(CorruptionRegime::Linear, 100);
        assert_close!(lin.iter().cloned().fold(0.0, f64::max), 0.95, 0.0);
        let r1 = corruption_profile(CorruptionRegime::First20, 12);
        assert_eq!(r1.iter().filter(|&&v| v == 0.5).count(), 2);
        let half = corrupt_design(&x, &[0.5, 0.0, 0.0], &mut rng).unwrap();
        // untouched entries stay bit-identical
        let kept = (0..10_000).filter(|&i| half[(i, 0)].to_bits() == x[(i, 0)].to_bits()).count();
        assert!((kept as f64 / 10_000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn missingness() {
        let mut rng = replicate_rng(8, 0);
        let m = mask_missing(50, &[0.0; 4], &mut rng).unwrap();
        assert!(m.iter().all(|&v| v));
        let rho = missing_rho(MissingRegime::Homogeneous, 100, &mut rng);
        let m = mask_missing(1000, &rho, &mut rng).unwrap();
        let frac = m.iter().filter(|&&v| !v).count() as f64 / 100_000.0;
        assert!((frac - 0.25).abs() < 0.01);
        let lin = missing_profile(MissingRegime::Linear, 90);
        assert!(lin.iter().cloned().fold(0.0, f64::max) < 1.0 / 3.0);
        let half = missing_profile(MissingRegime::HalfBlock, 9);
        assert_eq!(half.iter().filter(|&&v| v == 0.3).count(), 4);
        assert!(mask_missing(5, &[1.0], &mut rng).is_err());
    }

    #[test]
    fn variance_explained() {
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 7.0]);
        assert_close!(pve(&y, &y).unwrap(), 1.0, 1e-15);
        let mean = DVector::from_element(4, y.mean());
        assert_close!(pve(&y, &mean).unwrap(), 0.0, 1e-15);
        assert!(pve(&y, &DVector::from_element(4, 100.0)).unwrap() < 0.0);
        assert!(matches!(pve(&DVector::from_element(3, 2.0), &DVector::zeros(3)), Err(Error::ZeroVariance)));
    }
}
