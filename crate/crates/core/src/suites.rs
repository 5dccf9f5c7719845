//! Simulation suites and timing benchmarks. Every suite returns flat
//! records `(replicate, setting, method, metric, value)` in a fixed order,
//! so reruns with the same seed serialize to identical bytes.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    make_subset_schedule, ordering_from_missingness, sample_weighted_ordering, Dataset, Ordering, StandardizePolicy,
};
use crate::error::{Error, Result};
use crate::lasso_engine::{default_lambda_ratio, lambda_grid, SparseCoef, SqrtLassoConfig};
use crate::order_path::{fit_order_path, PathConfig};
use crate::selection::{
    kfold_cv_select, lambda_grid_for, test_split_select, theorem1_bound, CVPlan, FitMode, SelectConfig,
    SelectionResult, Theorem1Inputs,
};
use crate::simgen::{
    corrupt_design, corruption_rho, gen_beta, mask_missing, missing_rho, pve, replicate_rng, rho_signal,
    simulate_response, CoefRegime, CorruptionRegime, DesignSampler, MissingRegime, SigmaSpec,
};

pub const CSV_HEADER: &str = "replicate,setting,method,metric,value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub replicate: usize,
    pub setting: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl Record {
    fn new(replicate: usize, setting: &str, method: &str, metric: &str, value: f64) -> Self {
        Self {
            replicate,
            setting: setting.to_string(),
            method: method.to_string(),
            metric: metric.to_string(),
            value,
        }
    }
}

pub fn records_to_csv(records: &[Record]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.replicate, r.setting, r.method, r.metric, r.value);
    }
    out
}

pub fn write_csv<W: Write>(records: &[Record], mut w: W) -> io::Result<()> {
    w.write_all(records_to_csv(records).as_bytes())
}

/// Values of `metric` for `(setting, method)`, in replicate order.
pub fn extract(records: &[Record], setting: &str, method: &str, metric: &str) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.setting == setting && r.method == method && r.metric == metric)
        .map(|r| r.value)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteId {
    OrderingQuality,
    Corruption,
    Missing,
    Theorem1,
}

impl SuiteId {
    pub fn label(&self) -> &'static str {
        match self {
            Self::OrderingQuality => "ordering-quality",
            Self::Corruption => "corruption",
            Self::Missing => "missing",
            Self::Theorem1 => "theorem1",
        }
    }
}

impl FromStr for SuiteId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordering-quality" => Ok(Self::OrderingQuality),
            "corruption" => Ok(Self::Corruption),
            "missing" => Ok(Self::Missing),
            "theorem1" => Ok(Self::Theorem1),
            _ => Err(Error::InvalidConfig(format!(
                "unknown suite '{s}' (expected ordering-quality, corruption, missing or theorem1)"
            ))),
        }
    }
}

/// Settings shared by the suites that run cross-validated fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub grid_size: usize,
    pub min_subset: usize,
    pub nlambda: usize,
    pub folds: usize,
    /// Early stopping for the grid fits; the single-subset baseline never
    /// stops early.
    pub sqrt_stop: bool,
    pub policy: StandardizePolicy,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            grid_size: 10,
            min_subset: 1,
            nlambda: 100,
            folds: 5,
            sqrt_stop: true,
            policy: StandardizePolicy::CenterAndScale,
        }
    }
}

/// Cross-validated grid fit and single-subset baseline on the same folds.
fn grid_and_baseline(
    data: &Dataset,
    ordering: Option<&Ordering>,
    mode: FitMode,
    fit: &FitSettings,
    plan: &CVPlan,
) -> Result<(Option<SelectionResult>, SelectionResult)> {
    let (n, p) = (data.n(), data.p());
    let base_cfg = SelectConfig {
        policy: fit.policy,
        ..SelectConfig::new(mode, PathConfig::without_early_stop())
    };
    let grid = lambda_grid_for(data, &base_cfg, fit.nlambda, default_lambda_ratio(n, p))?;
    let identity = Ordering::identity(p);
    let baseline = kfold_cv_select(data, &identity, &make_subset_schedule(p, 1, 1)?, &grid, plan, &base_cfg)?;
    let chosen = match ordering {
        None => None,
        Some(o) => {
            let sqrt = if fit.sqrt_stop {
                SqrtLassoConfig::with_default(n, p)
            } else {
                SqrtLassoConfig::disabled()
            };
            let cfg = SelectConfig {
                policy: fit.policy,
                ..SelectConfig::new(mode, PathConfig::new(sqrt))
            };
            let sched = make_subset_schedule(p, fit.grid_size, fit.min_subset)?;
            Some(kfold_cv_select(data, o, &sched, &grid, plan, &cfg)?)
        }
    };
    Ok((chosen, baseline))
}

/// Expected squared prediction error on a fresh row `x ~ N(0, sigma)`, in
/// excess of the noise: `(b - beta)' sigma (b - beta) + intercept^2`.
pub fn excess_prediction_error(sel: &SelectionResult, beta: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let (b, intercept) = sel.original_scale();
    let d = DVector::from_iterator(beta.len(), b.iter().zip(beta).map(|(u, v)| u - v));
    d.dot(&(sigma * &d)) + intercept * intercept
}

/// Variables sorted by ascending `rho`, ties by index.
pub fn ordering_ascending(rho: &[f64]) -> Ordering {
    let mut perm: Vec<usize> = (0..rho.len()).collect();
    perm.sort_by(|&a, &b| rho[a].total_cmp(&rho[b]).then(a.cmp(&b)));
    Ordering::new(perm).expect("sorted indices form a permutation")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingQualityParams {
    pub n: usize,
    pub p: usize,
    pub sigma: SigmaSpec,
    pub sparsity: usize,
    pub coef: CoefRegime,
    pub noise_sd: f64,
    pub log_etas: Vec<f64>,
    pub fit: FitSettings,
    pub reps: usize,
    pub seed: u64,
}

impl Default for OrderingQualityParams {
    fn default() -> Self {
        Self {
            n: 100,
            p: 500,
            sigma: SigmaSpec::Identity,
            sparsity: 5,
            coef: CoefRegime::Const15,
            noise_sd: 1.0,
            log_etas: vec![-4.0, 0.0, 4.0],
            fit: FitSettings::default(),
            reps: 100,
            seed: 1,
        }
    }
}

pub fn log_eta_setting(log_eta: f64) -> String {
    format!("log_eta={log_eta}")
}

/// Prediction error of the grid method under orderings of varying quality,
/// next to a plain cross-validated Lasso on the same data and folds.
pub fn run_ordering_quality(params: &OrderingQualityParams) -> Result<Vec<Record>> {
    let sampler = DesignSampler::new(params.sigma, params.p)?;
    let sigma = sampler.sigma()?;
    let per_rep = (0..params.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Record>> {
            let mut rng = replicate_rng(params.seed, rep as u64);
            let x = sampler.sample(params.n, &mut rng);
            let (beta, support) = gen_beta(params.p, params.sparsity, params.coef, &mut rng);
            let y = simulate_response(&x, &beta, params.noise_sd, &mut rng);
            let data = Dataset::new(x, y)?;
            let plan = CVPlan::kfold(params.n, params.fit.folds, rng.random())?;
            let (_, baseline) = grid_and_baseline(&data, None, FitMode::Lasso, &params.fit, &plan)?;
            let base_err = excess_prediction_error(&baseline, &beta, &sigma);
            let mut out = Vec::new();
            for &le in &params.log_etas {
                let rho = rho_signal(params.p, &support, le.exp())?;
                let ordering = sample_weighted_ordering(&rho, &mut rng)?;
                let sched = make_subset_schedule(params.p, params.fit.grid_size, params.fit.min_subset)?;
                let sqrt = if params.fit.sqrt_stop {
                    SqrtLassoConfig::with_default(params.n, params.p)
                } else {
                    SqrtLassoConfig::disabled()
                };
                let cfg = SelectConfig {
                    policy: params.fit.policy,
                    ..SelectConfig::new(FitMode::Lasso, PathConfig::new(sqrt))
                };
                let grid = lambda_grid_for(&data, &cfg, params.fit.nlambda, default_lambda_ratio(params.n, params.p))?;
                let sel = kfold_cv_select(&data, &ordering, &sched, &grid, &plan, &cfg)?;
                let setting = log_eta_setting(le);
                out.push(Record::new(rep, &setting, "grid", "pred_error", excess_prediction_error(&sel, &beta, &sigma)));
                out.push(Record::new(rep, &setting, "grid", "subset_size", sel.subset_size as f64));
                out.push(Record::new(rep, &setting, "lasso", "pred_error", base_err));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSuiteParams {
    pub n: usize,
    pub n_test: usize,
    pub p: usize,
    pub sigma: SigmaSpec,
    pub sparsity: usize,
    pub coef: CoefRegime,
    pub noise_sd: f64,
    pub fit: FitSettings,
    pub reps: usize,
    pub seed: u64,
}

impl Default for RegimeSuiteParams {
    fn default() -> Self {
        Self {
            n: 150,
            n_test: 150,
            p: 300,
            sigma: SigmaSpec::Ar09,
            sparsity: 10,
            coef: CoefRegime::Unif02,
            noise_sd: 1.0,
            fit: FitSettings {
                grid_size: 25,
                ..FitSettings::default()
            },
            reps: 100,
            seed: 1,
        }
    }
}

pub fn regime_setting(label: &str) -> String {
    format!("regime={label}")
}

struct CleanSample {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_test: DMatrix<f64>,
    y_test: DVector<f64>,
}

fn clean_sample<R: Rng + ?Sized>(params: &RegimeSuiteParams, sampler: &DesignSampler, rng: &mut R) -> CleanSample {
    let x = sampler.sample(params.n, rng);
    let (beta, _) = gen_beta(params.p, params.sparsity, params.coef, rng);
    let y = simulate_response(&x, &beta, params.noise_sd, rng);
    let x_test = sampler.sample(params.n_test, rng);
    let y_test = simulate_response(&x_test, &beta, params.noise_sd, rng);
    CleanSample { x, y, x_test, y_test }
}

/// Variance explained on clean test data by models trained on designs
/// corrupted column-wise at known relative rates.
pub fn run_corruption(params: &RegimeSuiteParams) -> Result<Vec<Record>> {
    let sampler = DesignSampler::new(params.sigma, params.p)?;
    let per_rep = (0..params.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Record>> {
            let mut rng = replicate_rng(params.seed, rep as u64);
            let s = clean_sample(params, &sampler, &mut rng);
            let plan = CVPlan::kfold(params.n, params.fit.folds, rng.random())?;
            let mut out = Vec::new();
            for regime in CorruptionRegime::ALL {
                let rho = corruption_rho(regime, params.p, &mut rng);
                let xc = corrupt_design(&s.x, &rho, &mut rng)?;
                let data = Dataset::new(xc, s.y.clone())?;
                let ordering = ordering_ascending(&rho);
                let (grid, base) = grid_and_baseline(&data, Some(&ordering), FitMode::Lasso, &params.fit, &plan)?;
                let grid = grid.expect("ordering given");
                let setting = regime_setting(regime.label());
                out.push(Record::new(rep, &setting, "grid", "pve", pve(&s.y_test, &grid.predict(&s.x_test)?)?));
                out.push(Record::new(rep, &setting, "grid", "subset_size", grid.subset_size as f64));
                out.push(Record::new(rep, &setting, "lasso", "pve", pve(&s.y_test, &base.predict(&s.x_test)?)?));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Variance explained on clean test data by covariance-form fits on
/// designs with entries missing at column-specific rates. The grid orders
/// variables by their observed missingness.
pub fn run_missing(params: &RegimeSuiteParams) -> Result<Vec<Record>> {
    let sampler = DesignSampler::new(params.sigma, params.p)?;
    let per_rep = (0..params.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Record>> {
            let mut rng = replicate_rng(params.seed, rep as u64);
            let s = clean_sample(params, &sampler, &mut rng);
            let plan = CVPlan::kfold(params.n, params.fit.folds, rng.random())?;
            let mut out = Vec::new();
            for regime in MissingRegime::ALL {
                let rho = missing_rho(regime, params.p, &mut rng);
                let mask = mask_missing(params.n, &rho, &mut rng)?;
                let ordering = ordering_from_missingness(&mask);
                let data = Dataset::new(s.x.clone(), s.y.clone())?.with_mask(mask)?;
                let (grid, base) =
                    grid_and_baseline(&data, Some(&ordering), FitMode::LassoMissing, &params.fit, &plan)?;
                let grid = grid.expect("ordering given");
                let setting = regime_setting(regime.label());
                out.push(Record::new(rep, &setting, "grid", "pve", pve(&s.y_test, &grid.predict(&s.x_test)?)?));
                out.push(Record::new(rep, &setting, "grid", "subset_size", grid.subset_size as f64));
                out.push(Record::new(rep, &setting, "lasso", "pve", pve(&s.y_test, &base.predict(&s.x_test)?)?));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Params {
    /// Test-set sizes.
    pub ns: Vec<usize>,
    /// Numbers of candidates; each uses a prefix of one fixed pool.
    pub ms: Vec<usize>,
    pub p: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// Distance of the best candidate from the truth.
    pub oracle_distance: f64,
    /// Other candidates sit at distances drawn from `U[oracle_distance, max_distance]`.
    pub max_distance: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for Theorem1Params {
    fn default() -> Self {
        Self {
            ns: vec![200],
            ms: vec![2, 8, 20, 32],
            p: 10,
            sigma: 1.0,
            c1: 1.0,
            c2: 1.0,
            oracle_distance: 0.3,
            max_distance: 0.6,
            reps: 500,
            seed: 1,
        }
    }
}

pub fn theorem1_setting(n: usize, m: usize) -> String {
    format!("n={n};m={m}")
}

/// True coefficients and a fixed candidate pool; candidate 0 is the closest.
pub fn theorem1_candidates(params: &Theorem1Params) -> (Vec<f64>, Vec<SparseCoef>) {
    let mut rng = replicate_rng(params.seed, u64::MAX);
    let p = params.p;
    let beta: Vec<f64> = (0..p).map(|j| if j < 3 { 1.0 / (1 << j) as f64 } else { 0.0 }).collect();
    let pool = params.ms.iter().copied().max().unwrap_or(0);
    let cands = (0..pool)
        .map(|m| {
            let u: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d = if m == 0 {
                params.oracle_distance
            } else {
                rng.random_range(params.oracle_distance..=params.max_distance)
            };
            let b: Vec<f64> = beta.iter().zip(&u).map(|(b, v)| b + d * v / norm).collect();
            SparseCoef::from_dense(&b)
        })
        .collect();
    (beta, cands)
}

fn dist(b: &SparseCoef, beta: &[f64]) -> f64 {
    beta.iter().enumerate().map(|(j, t)| (b.get(j) - t).powi(2)).sum::<f64>().sqrt()
}

/// Selection among fixed candidates on Gaussian test data, compared with
/// the finite-sample bound. Candidate prefixes share the same test data.
pub fn run_theorem1(params: &Theorem1Params) -> Result<Vec<Record>> {
    let (beta, cands) = theorem1_candidates(params);
    let per_rep = (0..params.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Record>> {
            let mut rng = replicate_rng(params.seed, rep as u64);
            let mut out = Vec::new();
            for &n in &params.ns {
                let x = DMatrix::from_fn(n, params.p, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = simulate_response(&x, &beta, params.sigma, &mut rng);
                for &m in &params.ms {
                    let pool = &cands[..m];
                    let pick = test_split_select(pool, &x, &y)?;
                    let lhs = dist(&pool[pick], &beta);
                    let oracle = pool.iter().map(|b| dist(b, &beta)).fold(f64::INFINITY, f64::min);
                    let rep_bound = theorem1_bound(&Theorem1Inputs {
                        m: m as f64,
                        n,
                        nu: 1.0,
                        sigma: params.sigma,
                        c1: params.c1,
                        c2: params.c2,
                        lhs,
                        oracle_term: oracle,
                    })?;
                    let setting = theorem1_setting(n, m);
                    out.push(Record::new(rep, &setting, "select", "lhs", lhs));
                    out.push(Record::new(rep, &setting, "select", "oracle", oracle));
                    out.push(Record::new(rep, &setting, "select", "rhs", rep_bound.rhs));
                    out.push(Record::new(rep, &setting, "select", "psi", rep_bound.psi));
                    out.push(Record::new(rep, &setting, "select", "holds", f64::from(u8::from(rep_bound.holds))));
                    out.push(Record::new(rep, &setting, "select", "vacuous", f64::from(u8::from(rep_bound.vacuous))));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Run a suite with its default parameters except for `reps` and `seed`.
pub fn run_suite(id: SuiteId, reps: usize, seed: u64) -> Result<Vec<Record>> {
    match id {
        SuiteId::OrderingQuality => run_ordering_quality(&OrderingQualityParams {
            reps,
            seed,
            ..Default::default()
        }),
        SuiteId::Corruption => run_corruption(&RegimeSuiteParams {
            reps,
            seed,
            ..Default::default()
        }),
        SuiteId::Missing => run_missing(&RegimeSuiteParams {
            reps,
            seed,
            ..Default::default()
        }),
        SuiteId::Theorem1 => run_theorem1(&Theorem1Params {
            reps,
            seed,
            ..Default::default()
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Smallest wall time over the repeats.
    pub seconds: f64,
    pub coordinate_updates: usize,
    pub solved_cells: usize,
}

/// Wall time of the full grid fit for each `K`, on one synthetic instance
/// with a random ordering.
pub fn bench_order_path(n: usize, p: usize, ks: &[usize], nlambda: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rng = replicate_rng(seed, 0);
    let x = DesignSampler::new(SigmaSpec::Identity, p)?.sample(n, &mut rng);
    let (beta, _) = gen_beta(p, 10.min(p), CoefRegime::Unif02, &mut rng);
    let y = simulate_response(&x, &beta, 1.0, &mut rng);
    let (data, _) = crate::data_model::standardize(&Dataset::new(x, y)?, StandardizePolicy::CenterAndScale)?;
    let ordering = sample_weighted_ordering(&vec![1.0; p], &mut rng)?;
    let grid = lambda_grid(&data, nlambda, default_lambda_ratio(n, p))?;
    let cfg = PathConfig::new(SqrtLassoConfig::with_default(n, p));
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let sched = make_subset_schedule(p, k, 1)?;
        let mut best = f64::INFINITY;
        let mut last = None;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let fit = fit_order_path(&data, &ordering, &sched, &grid, &cfg)?;
            best = best.min(t.elapsed().as_secs_f64());
            last = Some(fit);
        }
        let fit = last.expect("at least one repeat");
        rows.push(BenchRow {
            n,
            p,
            k: sched.k(),
            seconds: best,
            coordinate_updates: fit.total_updates(),
            solved_cells: fit.solved_cells(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let recs = vec![
            Record::new(0, "a=1", "grid", "pve", 0.5),
            Record::new(1, "a=1", "lasso", "pve", f64::INFINITY),
        ];
        assert_eq!(
            records_to_csv(&recs),
            "replicate,setting,method,metric,value\n0,a=1,grid,pve,0.5\n1,a=1,lasso,pve,inf\n"
        );
        assert_eq!(records_to_csv(&[]), "replicate,setting,method,metric,value\n");
        assert_eq!(extract(&recs, "a=1", "grid", "pve"), vec![0.5]);
    }

    #[test]
    fn suite_names() {
        for id in [SuiteId::OrderingQuality, SuiteId::Corruption, SuiteId::Missing, SuiteId::Theorem1] {
            assert_eq!(id.label().parse::<SuiteId>().unwrap(), id);
        }
        assert!("nope".parse::<SuiteId>().is_err());
    }

    #[test]
    fn zero_reps_is_empty() {
        for id in [SuiteId::OrderingQuality, SuiteId::Theorem1] {
            assert!(run_suite(id, 0, 3).unwrap().is_empty());
        }
    }

    #[test]
    fn small_runs_are_deterministic() {
        let params = OrderingQualityParams {
            n: 40,
            p: 30,
            reps: 2,
            fit: FitSettings {
                nlambda: 20,
                grid_size: 4,
                ..FitSettings::default()
            },
            ..Default::default()
        };
        let a = records_to_csv(&run_ordering_quality(&params).unwrap());
        let b = records_to_csv(&run_ordering_quality(&params).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + 2 * 3 * 3);
    }

    #[test]
    fn theorem1_candidates_layout() {
        let params = Theorem1Params::default();
        let (beta, cands) = theorem1_candidates(&params);
        assert_eq!(cands.len(), 32);
        assert_close!(dist(&cands[0], &beta), 0.3, 1e-12);
        assert!(cands[1..].iter().all(|c| dist(c, &beta) >= 0.3 - 1e-12));
        let recs = run_theorem1(&Theorem1Params { reps: 3, ..params }).unwrap();
        assert_eq!(extract(&recs, "n=200;m=20", "select", "holds").len(), 3);
    }

    #[test]
    fn ascending_ordering() {
        let o = ordering_ascending(&[0.5, 0.0, 0.25, 0.0]);
        assert_eq!(o.perm(), &[1, 3, 2, 0]);
    }

    #[test]
    fn bench_rows() {
        let rows = bench_order_path(30, 60, &[1, 4], 20, 1, 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].k, 1);
        assert!(rows.iter().all(|r| r.seconds > 0.0));
    }
}
