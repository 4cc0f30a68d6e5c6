//! Error metrics, Wasserstein distance and quantile summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weighted one-dimensional empirical measure.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    /// Normalises nonnegative `weights` to sum to one.
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(Error::invalid("weighted sample needs equal, nonzero numbers of values and weights"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample values must be finite"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(WeightedSample { values, weights })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let w = vec![1.0; values.len()];
        WeightedSample::new(values, w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Atoms sorted by value.
    pub fn sorted_atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = self.values.iter().copied().zip(self.weights.iter().copied()).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        atoms
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// Exact `W_1` between two weighted samples: the integral of `|F_a - F_b|`.
pub fn wasserstein1(a: &WeightedSample, b: &WeightedSample) -> f64 {
    let (sa, sb) = (a.sorted_atoms(), b.sorted_atoms());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut last: Option<f64> = None;
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        if let Some(prev) = last {
            total += (fa - fb).abs() * (x - prev);
        }
        while i < sa.len() && sa[i].0 == x {
            fa += sa[i].1;
            i += 1;
        }
        while j < sb.len() && sb[j].0 == x {
            fb += sb[j].1;
            j += 1;
        }
        last = Some(x);
    }
    total
}

/// Mean squared error of `estimates` around `truth`.
pub fn mse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::invalid("no estimates"));
    }
    Ok(estimates.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / estimates.len() as f64)
}

/// `sum (x_r - truth)^2 / sum (b_r - truth)^2`; `+inf` when the baseline is exact.
pub fn relative_mse(method: &[f64], baseline: &[f64], truth: f64) -> Result<f64> {
    if method.is_empty() || baseline.is_empty() {
        return Err(Error::invalid("relative MSE of empty inputs"));
    }
    if method.len() != baseline.len() {
        return Err(Error::invalid(format!(
            "replicate counts differ: {} vs {}",
            method.len(),
            baseline.len()
        )));
    }
    if !truth.is_finite() {
        return Err(Error::invalid("truth must be finite"));
    }
    let num: f64 = method.iter().map(|x| (x - truth).powi(2)).sum();
    let den: f64 = baseline.iter().map(|x| (x - truth).powi(2)).sum();
    Ok(if den == 0.0 { f64::INFINITY } else { num / den })
}

/// Type-7 quantile (linear interpolation between order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("quantile level {p} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, p))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("regression needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("regressor is constant"));
    }
    Ok(sxy / sxx)
}

/// Grouping of records in summaries.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub target: String,
    pub method: String,
    #[serde(rename = "C")]
    pub c: Option<usize>,
    #[serde(rename = "N")]
    pub n: usize,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(flatten)]
    pub key: GroupKey,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub mean: f64,
    pub count: usize,
}

/// Median, 5% and 95% quantiles and mean per group, in key order.
pub fn summarize(records: impl IntoIterator<Item = (GroupKey, f64)>) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for (k, v) in records {
        groups.entry(k).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(key, mut v)| {
            v.sort_by(f64::total_cmp);
            SummaryRow {
                median: quantile_sorted(&v, 0.5),
                q05: quantile_sorted(&v, 0.05),
                q95: quantile_sorted(&v, 0.95),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                count: v.len(),
                key,
            }
        })
        .collect()
}
