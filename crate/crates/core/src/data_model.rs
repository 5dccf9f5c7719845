//! Data containers, standardization and the construction of variable
//! orderings and nested subset schedules.
//!
//! Variable identities are 0-based throughout the library. An [`Ordering`]
//! lists variables from most to least important, and a [`SubsetSchedule`]
//! holds the cutoffs `p = j_1 > j_2 > ... > j_K`, so that subset `k` is the
//! first `j_k` entries of the ordering.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Response, design matrix and an optional observation mask.
///
/// Rows are observations. When `mask` is present, `mask[(i, j)] == true`
/// means `x[(i, j)]` was observed; unobserved values are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub mask: Option<DMatrix<bool>>,
    pub column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidDataset(format!(
                "design must be at least 1x1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "response has length {} but design has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        Ok(Self {
            x,
            y,
            mask: None,
            column_names: None,
        })
    }

    pub fn with_mask(mut self, mask: DMatrix<bool>) -> Result<Self> {
        if mask.shape() != self.x.shape() {
            return Err(Error::DimensionMismatch(format!(
                "mask shape {:?} differs from design shape {:?}",
                mask.shape(),
                self.x.shape()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                names.len(),
                self.p()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[(i, j)])
    }

    pub fn has_missing(&self) -> bool {
        self.mask.as_ref().is_some_and(|m| m.iter().any(|&o| !o))
    }

    /// Number of missing entries per column.
    pub fn missing_counts(&self) -> Vec<usize> {
        match &self.mask {
            None => vec![0; self.p()],
            Some(m) => m
                .column_iter()
                .map(|c| c.iter().filter(|&&o| !o).count())
                .collect(),
        }
    }

    /// Dataset restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Dataset {
            x,
            y,
            mask: self.mask.as_ref().map(|m| m.select_rows(rows)),
            column_names: self.column_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizePolicy {
    CenterOnly,
    CenterAndScale,
    None,
}

/// Per-column centers and scales plus the response center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationInfo {
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
    pub y_center: f64,
    pub policy: StandardizePolicy,
}

impl StandardizationInfo {
    pub fn identity(p: usize) -> Self {
        Self {
            centers: vec![0.0; p],
            scales: vec![1.0; p],
            y_center: 0.0,
            policy: StandardizePolicy::None,
        }
    }

    pub fn p(&self) -> usize {
        self.centers.len()
    }

    /// Map a raw design into standardized coordinates. Entries flagged
    /// missing by `mask` are set to zero (the column center).
    pub fn transform_x(&self, x: &DMatrix<f64>, mask: Option<&DMatrix<bool>>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} columns, got {}",
                self.p(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (c, s) = (self.centers[j], self.scales[j]);
            for (i, v) in col.iter_mut().enumerate() {
                *v = if mask.is_none_or(|m| m[(i, j)]) {
                    (*v - c) / s
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        let x = self.transform_x(&data.x, data.mask.as_ref())?;
        let y = data.y.add_scalar(-self.y_center);
        Ok(Dataset {
            x,
            y,
            mask: data.mask.clone(),
            column_names: data.column_names.clone(),
        })
    }

    /// Undo the response centering on predictions made in standardized space.
    pub fn inverse_predictions(&self, pred: &DVector<f64>) -> DVector<f64> {
        pred.add_scalar(self.y_center)
    }
}

fn column_moments(data: &Dataset, j: usize) -> (f64, f64, usize) {
    let col = data.x.column(j);
    let (mut sum, mut cnt) = (0.0, 0usize);
    for i in 0..data.n() {
        if data.is_observed(i, j) {
            sum += col[i];
            cnt += 1;
        }
    }
    if cnt == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / cnt as f64;
    let mut ss = 0.0;
    for i in 0..data.n() {
        if data.is_observed(i, j) {
            let d = col[i] - mean;
            ss += d * d;
        }
    }
    (mean, ss / cnt as f64, cnt)
}

/// Center (and optionally scale to unit population variance) every column,
/// and center the response. Under a mask, moments use observed entries only.
pub fn standardize(data: &Dataset, policy: StandardizePolicy) -> Result<(Dataset, StandardizationInfo)> {
    let p = data.p();
    let mut info = StandardizationInfo::identity(p);
    info.policy = policy;
    if policy != StandardizePolicy::None {
        for j in 0..p {
            let (mean, var, _) = column_moments(data, j);
            info.centers[j] = mean;
            if policy == StandardizePolicy::CenterAndScale {
                if !(var > 0.0) {
                    return Err(Error::ConstantColumn { column: j });
                }
                info.scales[j] = var.sqrt();
            }
        }
        info.y_center = data.y.mean();
    }
    let out = info.transform(data)?;
    Ok((out, info))
}

/// A permutation of `0..p`, most important variable first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ordering {
    perm: Vec<usize>,
}

impl Ordering {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let p = perm.len();
        let mut seen = vec![false; p];
        for &v in &perm {
            if v >= p || seen[v] {
                return Err(Error::InvalidOrdering(format!(
                    "entry {v} is out of range or repeated (p = {p})"
                )));
            }
            seen[v] = true;
        }
        if p == 0 {
            return Err(Error::InvalidOrdering("empty ordering".into()));
        }
        Ok(Self { perm })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            perm: (0..p).collect(),
        }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `rank[v]` is the position of variable `v` in the ordering.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.perm.len()];
        for (pos, &v) in self.perm.iter().enumerate() {
            r[v] = pos;
        }
        r
    }

    /// The first `size` variables of the ordering.
    pub fn top(&self, size: usize) -> &[usize] {
        &self.perm[..size.min(self.perm.len())]
    }
}

impl TryFrom<Vec<usize>> for Ordering {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Ordering::new(v)
    }
}

impl From<Ordering> for Vec<usize> {
    fn from(o: Ordering) -> Self {
        o.perm
    }
}

/// Subset sizes `p = j_1 > ... > j_K >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSchedule {
    cutoffs: Vec<usize>,
}

impl SubsetSchedule {
    pub fn new(p: usize, cutoffs: Vec<usize>) -> Result<Self> {
        if cutoffs.first() != Some(&p) {
            return Err(Error::InvalidSchedule(format!(
                "first cutoff must equal p = {p}"
            )));
        }
        if cutoffs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule("cutoffs must strictly decrease".into()));
        }
        if *cutoffs.last().unwrap() < 1 {
            return Err(Error::InvalidSchedule("smallest subset is empty".into()));
        }
        Ok(Self { cutoffs })
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    pub fn k(&self) -> usize {
        self.cutoffs.len()
    }

    pub fn p(&self) -> usize {
        self.cutoffs[0]
    }

    /// Membership of each variable in subset `k` (0-based).
    pub fn membership(&self, ordering: &Ordering, k: usize) -> Vec<bool> {
        let mut m = vec![false; ordering.len()];
        for &v in ordering.top(self.cutoffs[k]) {
            m[v] = true;
        }
        m
    }
}

/// Geometric schedule from `p` down to `min_size` with at most `k` subsets.
///
/// Cutoffs are `round(p * r^(k-1))` with `r = (min_size / p)^(1 / (K - 1))`;
/// repeated values are dropped. When `k` covers every size between
/// `min_size` and `p`, all of them are used.
pub fn make_subset_schedule(p: usize, k: usize, min_size: usize) -> Result<SubsetSchedule> {
    if k < 1 {
        return Err(Error::InvalidSchedule("K must be at least 1".into()));
    }
    if p < 1 || min_size < 1 || min_size > p {
        return Err(Error::InvalidSchedule(format!(
            "need 1 <= min_size <= p, got min_size = {min_size}, p = {p}"
        )));
    }
    if k == 1 || min_size == p {
        return SubsetSchedule::new(p, vec![p]);
    }
    if k > p - min_size {
        return SubsetSchedule::new(p, (min_size..=p).rev().collect());
    }
    let r = (min_size as f64 / p as f64).powf(1.0 / (k - 1) as f64);
    let mut cutoffs: Vec<usize> = Vec::with_capacity(k);
    for i in 0..k {
        let c = ((p as f64) * r.powi(i as i32)).round() as usize;
        let c = c.clamp(min_size, p);
        if cutoffs.last().is_none_or(|&last| c < last) {
            cutoffs.push(c);
        }
    }
    if *cutoffs.last().unwrap() != min_size {
        cutoffs.push(min_size);
    }
    SubsetSchedule::new(p, cutoffs)
}

/// Sort by descending raw column variance; ties by column index.
pub fn ordering_from_variance(data: &Dataset) -> Ordering {
    let vars: Vec<f64> = (0..data.p()).map(|j| column_moments(data, j).1).collect();
    let mut perm: Vec<usize> = (0..data.p()).collect();
    perm.sort_by(|&a, &b| vars[b].total_cmp(&vars[a]).then(a.cmp(&b)));
    Ordering { perm }
}

/// Sort by ascending number of missing entries; ties by column index.
pub fn ordering_from_missingness(mask: &DMatrix<bool>) -> Ordering {
    let counts: Vec<usize> = mask
        .column_iter()
        .map(|c| c.iter().filter(|&&o| !o).count())
        .collect();
    let mut perm: Vec<usize> = (0..mask.ncols()).collect();
    perm.sort_by_key(|&j| (counts[j], j));
    Ordering { perm }
}

/// Index of the `(series, lag)` feature in a series-major lag design.
/// Both arguments are 1-based.
pub fn lag_feature_index(series: usize, lag: usize, max_lag: usize) -> usize {
    (series - 1) * max_lag + (lag - 1)
}

/// Ordering for a series-major lag design: the target series first, then its
/// partner (if any), then the remaining series in index order. Inside each
/// series the seasonal lag leads, followed by the other lags newest first.
///
/// `target_series`, `partner_series` and `season_lag` are 1-based.
pub fn ordering_from_lags(
    n_series: usize,
    max_lag: usize,
    target_series: usize,
    partner_series: Option<usize>,
    season_lag: Option<usize>,
) -> Result<Ordering> {
    if n_series == 0 || max_lag == 0 {
        return Err(Error::InvalidLag("need at least one series and one lag".into()));
    }
    if let Some(s) = season_lag {
        if s == 0 || s > max_lag {
            return Err(Error::InvalidLag(format!(
                "season lag {s} outside 1..={max_lag}"
            )));
        }
    }
    let in_range = |s: usize| (1..=n_series).contains(&s);
    if !in_range(target_series) {
        return Err(Error::InvalidLag(format!("target series {target_series} out of range")));
    }
    if let Some(ps) = partner_series {
        if !in_range(ps) || ps == target_series {
            return Err(Error::InvalidLag(format!("partner series {ps} is invalid")));
        }
    }

    let lag_order: Vec<usize> = season_lag
        .into_iter()
        .chain((1..=max_lag).filter(|&l| Some(l) != season_lag))
        .collect();
    let series_order = std::iter::once(target_series)
        .chain(partner_series)
        .chain((1..=n_series).filter(|&s| s != target_series && Some(s) != partner_series));

    let perm = series_order
        .flat_map(|s| lag_order.iter().map(move |&l| lag_feature_index(s, l, max_lag)))
        .collect();
    Ordering::new(perm)
}

/// Build a lag design from aligned series. Row `t` holds, for each series `s`
/// and lag `l` in `1..=max_lag`, the value `series[s][t + max_lag - l]`; the
/// response is `series[target - 1][t + max_lag]`.
pub fn lag_design(series: &[Vec<f64>], max_lag: usize, target_series: usize) -> Result<Dataset> {
    let len = series.first().map_or(0, Vec::len);
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::DimensionMismatch("series have different lengths".into()));
    }
    if target_series == 0 || target_series > series.len() {
        return Err(Error::InvalidLag(format!("target series {target_series} out of range")));
    }
    if max_lag == 0 || len <= max_lag {
        return Err(Error::InvalidLag(format!(
            "need more than {max_lag} observations, have {len}"
        )));
    }
    let n = len - max_lag;
    let p = series.len() * max_lag;
    let x = DMatrix::from_fn(n, p, |t, col| {
        let s = col / max_lag;
        let l = col % max_lag + 1;
        series[s][t + max_lag - l]
    });
    let y = DVector::from_fn(n, |t, _| series[target_series - 1][t + max_lag]);
    Dataset::new(x, y)
}

/// Draw a permutation by successive sampling without replacement with
/// probabilities proportional to the remaining weights. Zero-weight entries
/// go last, in index order.
pub fn sample_weighted_ordering<R: Rng + ?Sized>(rho: &[f64], rng: &mut R) -> Result<Ordering> {
    if rho.is_empty() {
        return Err(Error::InvalidOrdering("empty weight vector".into()));
    }
    if rho.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || rho.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidOrdering(
            "weights must be finite, non-negative and not all zero".into(),
        ));
    }
    // Exponential race: the order statistics of Exp(w_j) arrival times give
    // exactly the sequential proportional-sampling law.
    let mut keyed: Vec<(f64, usize)> = rho
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, &w)| {
            let e: f64 = Exp1.sample(rng);
            (e / w, j)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let perm = keyed
        .into_iter()
        .map(|(_, j)| j)
        .chain(rho.iter().enumerate().filter(|(_, &w)| w == 0.0).map(|(j, _)| j))
        .collect();
    Ok(Ordering { perm })
}
