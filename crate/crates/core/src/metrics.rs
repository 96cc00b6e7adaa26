//! Probabilistic and point forecast scores computed from sample ensembles.

use std::fmt::Write as _;

use ndarray::{ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::data::{Split, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Number of equal-probability intervals used by the coverage score.
pub const QICE_BINS: usize = 10;

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample {v}")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Continuous ranked probability score of the empirical distribution of `samples`.
pub fn crps(samples: &[f64], observation: f64) -> Result<f64> {
    Ok(crps_sorted(&sorted_copy(samples)?, observation))
}

/// [`crps`] for samples already sorted ascending.
///
/// `mean|X_i - x| - (1 / 2S^2) sum_ij |X_i - X_j|`, with the pair sum taken in
/// O(S) from order statistics: `sum_ij |X_i - X_j| = 2 sum_i x_(i) (2i - S + 1)`.
pub fn crps_sorted(sorted: &[f64], observation: f64) -> f64 {
    let s = sorted.len() as f64;
    let mut abs_sum = 0.0;
    let mut pair_sum = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        abs_sum += (x - observation).abs();
        pair_sum += x * (2.0 * i as f64 - s + 1.0);
    }
    (abs_sum / s - pair_sum / (s * s)).max(0.0)
}

/// Linear-interpolation quantile of sorted samples, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Index (0-based) of the equal-probability interval containing `observation`.
///
/// Observations outside the sample range fall into the first or last interval.
pub fn qice_bin(sorted: &[f64], observation: f64, bins: usize) -> usize {
    let below = (0..=bins)
        .filter(|&k| quantile_sorted(sorted, k as f64 / bins as f64) < observation)
        .count();
    below.clamp(1, bins) - 1
}

/// Interval coverage counts pooled over any number of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiceAccumulator {
    counts: Vec<u64>,
}

impl QiceAccumulator {
    pub fn new(bins: usize) -> Self {
        Self { counts: vec![0; bins] }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add_sorted(&mut self, sorted: &[f64], observation: f64) -> Result<()> {
        if sorted.len() < self.bins() {
            return Err(Error::InvalidInput(format!(
                "coverage score needs at least {} samples per cell, got {}",
                self.bins(),
                sorted.len()
            )));
        }
        let b = qice_bin(sorted, observation, self.bins());
        self.counts[b] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &QiceAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `(1/M) sum_m |r_m - 1/M|`; zero when nothing was added.
    pub fn value(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let m = self.bins() as f64;
        self.counts
            .iter()
            .map(|&c| (c as f64 / total as f64 - 1.0 / m).abs())
            .sum::<f64>()
            / m
    }
}

/// Coverage score over cells, each with its own sample set.
pub fn qice(cells: &[Vec<f64>], observations: &[f64], bins: usize) -> Result<f64> {
    if cells.len() != observations.len() {
        return Err(Error::Shape {
            context: "coverage score",
            expected: vec![cells.len()],
            actual: vec![observations.len()],
        });
    }
    if bins == 0 {
        return Err(Error::InvalidInput("coverage score needs at least one interval".into()));
    }
    let mut acc = QiceAccumulator::new(bins);
    for (samples, &obs) in cells.iter().zip(observations) {
        acc.add_sorted(&sorted_copy(samples)?, obs)?;
    }
    Ok(acc.value())
}

/// Mean absolute and mean squared error of a point forecast.
pub fn point_metrics(prediction: &[f64], observations: &[f64]) -> Result<(f64, f64)> {
    if prediction.len() != observations.len() || prediction.is_empty() {
        return Err(Error::Shape {
            context: "point metrics",
            expected: vec![observations.len()],
            actual: vec![prediction.len()],
        });
    }
    let n = prediction.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, o) in prediction.iter().zip(observations) {
        let e = p - o;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, sq / n))
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Largest per-feature ratio of test-split variance to train-split variance.
pub fn uncertainty_variation(ds: &TimeSeriesDataset) -> Result<f64> {
    let train = ds.split_values(Split::Train)?;
    let test = ds.split_values(Split::Test)?;
    let mut best = f64::NEG_INFINITY;
    for d in 0..ds.n_features() {
        let vt = population_variance(train.column(d).iter().copied());
        let vs = population_variance(test.column(d).iter().copied());
        if !(vt > 0.0) {
            return Err(Error::Data(format!(
                "feature {:?} has zero variance on the training split",
                ds.feature_names[d]
            )));
        }
        best = best.max(vs / vt);
    }
    Ok(best)
}

/// Pearson correlation coefficient; `None` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub name: String,
    pub crps: f64,
    pub qice: f64,
    pub mae: f64,
    pub mse: f64,
}

/// Scores averaged uniformly over every (window, step, feature) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub crps: f64,
    pub qice: f64,
    pub mae: f64,
    pub mse: f64,
    pub cells: u64,
    pub per_feature: Vec<FeatureReport>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "label,crps,qice,mae,mse,cells";

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    /// One flat CSV row; the per-feature breakdown is only in the JSON form.
    pub fn csv_row(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = write!(s, "{label},{},{},{},{},{}", self.crps, self.qice, self.mae, self.mse, self.cells);
        s
    }

    /// Non-negativity and the coverage-score ceiling.
    pub fn check_invariants(&self) -> Result<()> {
        let all = [self.crps, self.qice, self.mae, self.mse];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.qice > 0.2 {
            return Err(Error::Internal(format!("report violates invariants: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct FeatureSums {
    crps: f64,
    abs: f64,
    sq: f64,
    cells: u64,
}

/// Streaming accumulation of ensemble scores across windows.
#[derive(Debug, Clone)]
pub struct EvalAccumulator {
    features: Vec<FeatureSums>,
    coverage: Vec<QiceAccumulator>,
    buf: Vec<f64>,
}

impl EvalAccumulator {
    pub fn new(features: usize) -> Self {
        Self {
            features: vec![FeatureSums::default(); features],
            coverage: vec![QiceAccumulator::new(QICE_BINS); features],
            buf: Vec::new(),
        }
    }

    /// `samples` is `S x M x D`, `observations` is `M x D`, both in data units.
    pub fn add(&mut self, samples: ArrayView3<'_, f64>, observations: ArrayView2<'_, f64>) -> Result<()> {
        let (s, m, d) = samples.dim();
        if observations.dim() != (m, d) || d != self.features.len() {
            return Err(Error::Shape {
                context: "evaluation window",
                expected: vec![m, self.features.len()],
                actual: vec![observations.nrows(), observations.ncols()],
            });
        }
        if s < QICE_BINS {
            return Err(Error::InvalidInput(format!(
                "evaluation needs at least {QICE_BINS} samples, got {s}"
            )));
        }
        for step in 0..m {
            for f in 0..d {
                self.buf.clear();
                self.buf.extend(samples.slice(ndarray::s![.., step, f]).iter().copied());
                if let Some(v) = self.buf.iter().find(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("non-finite forecast sample {v}")));
                }
                self.buf.sort_by(f64::total_cmp);
                let obs = observations[[step, f]];
                let mean = self.buf.iter().sum::<f64>() / s as f64;
                let sums = &mut self.features[f];
                sums.crps += crps_sorted(&self.buf, obs);
                sums.abs += (mean - obs).abs();
                sums.sq += (mean - obs).powi(2);
                sums.cells += 1;
                self.coverage[f].add_sorted(&self.buf, obs)?;
            }
        }
        Ok(())
    }

    pub fn finish(&self, names: &[String]) -> Result<EvalReport> {
        let cells: u64 = self.features.iter().map(|f| f.cells).sum();
        if cells == 0 {
            return Err(Error::Data("no evaluation windows".into()));
        }
        let mut pooled = QiceAccumulator::new(QICE_BINS);
        let mut per_feature = Vec::with_capacity(self.features.len());
        for (i, (f, cov)) in self.features.iter().zip(&self.coverage).enumerate() {
            pooled.merge(cov);
            let n = f.cells.max(1) as f64;
            per_feature.push(FeatureReport {
                name: names.get(i).cloned().unwrap_or_else(|| format!("f{i}")),
                crps: f.crps / n,
                qice: cov.value(),
                mae: f.abs / n,
                mse: f.sq / n,
            });
        }
        let total = |g: fn(&FeatureSums) -> f64| self.features.iter().map(g).sum::<f64>() / cells as f64;
        Ok(EvalReport {
            crps: total(|f| f.crps),
            qice: pooled.value(),
            mae: total(|f| f.abs),
            mse: total(|f| f.sq),
            cells,
            per_feature,
        })
    }
}
