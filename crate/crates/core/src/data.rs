//! Dataset ingestion, chronological splits, supervised windows and the
//! sliding-window variance targets, plus the two synthetic generators.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Lower clamp on every variance target, in squared (standardized) units.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Lower clamp on the per-feature variance used for standardization.
pub const SCALE_VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
    pub test_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub values: Array2<f64>,
    pub feature_names: Vec<String>,
    pub split_bounds: Option<SplitBounds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitScheme {
    /// 70% / 10% / 20% with floored boundaries.
    Ratio,
    /// 12 / 4 / 4 months of `steps_per_month` rows each.
    Months { steps_per_month: usize },
}

/// One supervised example: history, target and the target's local variance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    /// Absolute row of the first target step in the source dataset.
    pub origin: usize,
    pub x: Array2<f64>,
    pub y0: Array2<f64>,
    pub sigma_y0: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub input_len: usize,
    pub horizon: usize,
    pub variance_window: usize,
    pub stride: usize,
}

impl TimeSeriesDataset {
    pub fn new(values: Array2<f64>, feature_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if feature_names.len() != values.ncols() {
            return Err(Error::Shape {
                context: "feature names",
                expected: vec![values.ncols()],
                actual: vec![feature_names.len()],
            });
        }
        if let Some(((r, c), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at row {r}, column {c}")));
        }
        Ok(Self {
            values,
            feature_names,
            split_bounds: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn split_range(&self, split: Split) -> Result<std::ops::Range<usize>> {
        let b = self
            .split_bounds
            .ok_or_else(|| Error::Data("dataset has not been split".into()))?;
        Ok(match split {
            Split::Train => 0..b.train_end,
            Split::Val => b.train_end..b.val_end,
            Split::Test => b.val_end..b.test_end,
        })
    }

    pub fn split_values(&self, split: Split) -> Result<ArrayView2<'_, f64>> {
        let r = self.split_range(split)?;
        Ok(self.values.slice(s![r, ..]))
    }

    /// Leading rows only, keeping feature names; any split is dropped.
    pub fn head(&self, rows: usize) -> Result<Self> {
        let rows = rows.min(self.len());
        Self::new(
            self.values.slice(s![..rows, ..]).to_owned(),
            self.feature_names.clone(),
        )
    }
}

/// Reads a comma-separated file with one header row.
pub fn load_csv(path: impl AsRef<Path>, has_date_column: bool) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let skip = usize::from(has_date_column);
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() <= skip {
        return Err(Error::Data(format!(
            "{}: no feature columns in header",
            path.display()
        )));
    }
    let feature_names: Vec<String> = headers.iter().skip(skip).map(str::to_owned).collect();
    let width = feature_names.len();

    let mut flat = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Data(format!(
                "{}: ragged row at line {line}: expected {expected_len} fields, found {len}",
                path.display()
            )),
            _ => Error::Data(format!("{}: {e}", path.display())),
        })?;
        for (j, cell) in record.iter().enumerate().skip(skip) {
            let v = f64::from_str(cell).map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                row: line,
                column: j + 1,
                cell: cell.to_owned(),
            })?;
            flat.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: dataset is empty", path.display())));
    }
    let values = Array2::from_shape_vec((rows, width), flat)
        .map_err(|e| Error::Internal(e.to_string()))?;
    TimeSeriesDataset::new(values, feature_names)
}

/// Writes the dataset in the same format [`load_csv`] reads, without a date column.
pub fn write_csv(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", ds.feature_names.join(",")).map_err(io)?;
    for row in ds.values.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn split_dataset(ds: &TimeSeriesDataset, scheme: SplitScheme) -> Result<TimeSeriesDataset> {
    let len = ds.len();
    let bounds = match scheme {
        SplitScheme::Ratio => SplitBounds {
            train_end: len * 7 / 10,
            val_end: len * 8 / 10,
            test_end: len,
        },
        SplitScheme::Months { steps_per_month } => SplitBounds {
            train_end: 12 * steps_per_month,
            val_end: 16 * steps_per_month,
            test_end: (20 * steps_per_month).min(len),
        },
    };
    if !(0 < bounds.train_end && bounds.train_end < bounds.val_end && bounds.val_end < bounds.test_end)
        || bounds.test_end > len
    {
        return Err(Error::Data(format!(
            "dataset of length {len} is too short for split {scheme:?} ({bounds:?})"
        )));
    }
    let mut out = ds.clone();
    out.split_bounds = Some(bounds);
    Ok(out)
}

/// Population variance over the trailing `window` rows of `[x; y0]` ending at
/// each target step. Rows whose trailing window would start before the
/// history use every available row instead. No floor is applied.
pub fn sliding_window_variance(
    x: ArrayView2<'_, f64>,
    y0: ArrayView2<'_, f64>,
    window: usize,
) -> Result<Array2<f64>> {
    let (n, m) = (x.nrows(), y0.nrows());
    if x.ncols() != y0.ncols() {
        return Err(Error::Shape {
            context: "sliding_window_variance",
            expected: vec![n, y0.ncols()],
            actual: vec![n, x.ncols()],
        });
    }
    if window < 2 {
        return Err(Error::InvalidInput("variance window must be at least 2".into()));
    }
    if window > n + m {
        return Err(Error::InvalidInput(format!(
            "variance window {window} exceeds history+horizon length {}",
            n + m
        )));
    }

    let joined = concatenate(Axis(0), &[x.view(), y0.view()]).map_err(|e| Error::Internal(e.to_string()))?;
    let mut out = Array2::zeros((m, x.ncols()));
    for (d, column) in joined.columns().into_iter().enumerate() {
        let shift = column.mean().unwrap_or(0.0);
        // prefix sums of shifted values and their squares
        let mut s1 = Vec::with_capacity(n + m + 1);
        let mut s2 = Vec::with_capacity(n + m + 1);
        s1.push(0.0);
        s2.push(0.0);
        for &v in column {
            let c = v - shift;
            s1.push(s1.last().unwrap() + c);
            s2.push(s2.last().unwrap() + c * c);
        }
        for k in 0..m {
            let end = n + k + 1;
            let start = end.saturating_sub(window);
            let count = (end - start) as f64;
            let mean = (s1[end] - s1[start]) / count;
            let var = (s2[end] - s2[start]) / count - mean * mean;
            out[[k, d]] = var.max(0.0);
        }
    }
    Ok(out)
}

/// Supervised windows lying entirely inside `split`.
pub fn make_windows(
    ds: &TimeSeriesDataset,
    split: Split,
    spec: WindowSpec,
) -> Result<Vec<WindowPair>> {
    if spec.input_len == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(Error::Config(format!(
            "window lengths and stride must be positive: {spec:?}"
        )));
    }
    let range = ds.split_range(split)?;
    let span = spec.input_len + spec.horizon;
    if range.len() < span {
        return Err(Error::Data(format!(
            "{split:?} split has {} rows, fewer than input_len + horizon = {span}",
            range.len()
        )));
    }
    let count = range.len() - span + 1;
    (0..count)
        .step_by(spec.stride)
        .map(|i| {
            let start = range.start + i;
            let x = ds.values.slice(s![start..start + spec.input_len, ..]);
            let y0 = ds.values.slice(s![start + spec.input_len..start + span, ..]);
            let sigma = sliding_window_variance(x, y0, spec.variance_window)?
                .mapv(|v| v.max(VARIANCE_FLOOR));
            Ok(WindowPair {
                origin: start + spec.input_len,
                x: x.to_owned(),
                y0: y0.to_owned(),
                sigma_y0: sigma,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthKind {
    Linear,
    Quadratic,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SynthKind::Linear),
            "quadratic" => Ok(SynthKind::Quadratic),
            other => Err(Error::Config(format!(
                "unknown synthetic kind {other:?} (expected linear or quadratic)"
            ))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Linear => "linear",
            SynthKind::Quadratic => "quadratic",
        })
    }
}

fn linspace(lo: f64, hi: f64, len: usize) -> impl Iterator<Item = f64> {
    let step = if len > 1 { (hi - lo) / (len - 1) as f64 } else { 0.0 };
    (0..len).map(move |i| if i + 1 == len { hi } else { lo + step * i as f64 })
}

/// Generating mean and standard deviation per step.
pub fn synth_ground_truth(kind: SynthKind, length: usize) -> (Vec<f64>, Vec<f64>) {
    let mean: Vec<f64> = linspace(1.0, 10.0, length).collect();
    let std = linspace(1.0, 10.0, length)
        .map(|v| match kind {
            SynthKind::Linear => v,
            SynthKind::Quadratic => v * v,
        })
        .collect();
    (mean, std)
}

/// Univariate series `m[t] + v[t] * eps` with a seeded Gaussian stream.
pub fn synth(kind: SynthKind, length: usize, seed: u64) -> Result<TimeSeriesDataset> {
    if length < 2 {
        return Err(Error::Config(format!(
            "synthetic length must be at least 2, got {length}"
        )));
    }
    let (mean, std) = synth_ground_truth(kind, length);
    let mut rng = substream(seed, Stream::Synthetic);
    let values: Vec<f64> = mean
        .iter()
        .zip(&std)
        .map(|(m, v)| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            m + v * eps
        })
        .collect();
    let values = Array2::from_shape_vec((length, 1), values).map_err(|e| Error::Internal(e.to_string()))?;
    TimeSeriesDataset::new(values, vec!["value".to_owned()])
}

pub fn synth_linear(length: usize, seed: u64) -> Result<TimeSeriesDataset> {
    synth(SynthKind::Linear, length, seed)
}

pub fn synth_quadratic(length: usize, seed: u64) -> Result<TimeSeriesDataset> {
    synth(SynthKind::Quadratic, length, seed)
}

/// Per-feature affine map fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &TimeSeriesDataset) -> Result<Self> {
        let train = ds.split_values(Split::Train)?;
        let mut mean = Vec::with_capacity(ds.n_features());
        let mut std = Vec::with_capacity(ds.n_features());
        for (d, col) in train.columns().into_iter().enumerate() {
            let mu = col.mean().unwrap_or(0.0);
            let mut var = col.mapv(|v| (v - mu).powi(2)).mean().unwrap_or(0.0);
            if var < SCALE_VARIANCE_FLOOR {
                warn!(
                    "feature {:?} has variance {var:e} on the training split; flooring at {SCALE_VARIANCE_FLOOR:e}",
                    ds.feature_names[d]
                );
                var = SCALE_VARIANCE_FLOOR;
            }
            mean.push(mu);
            std.push(var.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn identity(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            std: vec![1.0; features],
        }
    }

    fn check(&self, a: &ArrayView2<'_, f64>) -> Result<()> {
        if a.ncols() != self.mean.len() {
            return Err(Error::Shape {
                context: "standardizer",
                expected: vec![a.nrows(), self.mean.len()],
                actual: vec![a.nrows(), a.ncols()],
            });
        }
        Ok(())
    }

    pub fn transform(&self, a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(&a)?;
        let mut out = a.to_owned();
        for (d, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[d], self.std[d]);
            col.mapv_inplace(|v| (v - mu) / sd);
        }
        Ok(out)
    }

    pub fn inverse(&self, a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(&a)?;
        let mut out = a.to_owned();
        for (d, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[d], self.std[d]);
            col.mapv_inplace(|v| v * sd + mu);
        }
        Ok(out)
    }

    pub fn transform_dataset(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        Ok(TimeSeriesDataset {
            values: self.transform(ds.values.view())?,
            feature_names: ds.feature_names.clone(),
            split_bounds: ds.split_bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive_variance(series: &[f64], end: usize, window: usize) -> f64 {
        let start = (end + 1).saturating_sub(window);
        let w = &series[start..=end];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_file_and_drops_date() {
        let f = write_tmp("date,a\n2020-01-01,1.5\n2020-01-02,2.5\n");
        let ds = load_csv(f.path(), true).unwrap();
        assert_eq!(ds.values.dim(), (2, 1));
        assert_eq!(ds.feature_names, vec!["a"]);
        assert_eq!(ds.values[[1, 0]], 2.5);
    }

    #[test]
    fn header_only_is_empty() {
        let f = write_tmp("a,b\n");
        let err = load_csv(f.path(), false).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
    }

    #[test]
    fn reports_bad_cells_and_ragged_rows() {
        let f = write_tmp("a,b\n1,2\n3,x\n");
        match load_csv(f.path(), false).unwrap_err() {
            Error::NonNumeric { row, column, .. } => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other}"),
        }
        let f = write_tmp("a,b\n1,2\n3\n");
        assert!(load_csv(f.path(), false).unwrap_err().to_string().contains("ragged"));
        assert!(matches!(load_csv("/nonexistent/file.csv", false), Err(Error::Io { .. })));
    }

    #[test]
    fn ratio_and_month_splits() {
        let ds = TimeSeriesDataset::new(Array2::zeros((7588, 1)), vec!["v".into()]).unwrap();
        let b = split_dataset(&ds, SplitScheme::Ratio).unwrap().split_bounds.unwrap();
        assert_eq!((b.train_end, b.val_end, b.test_end), (5311, 6070, 7588));

        let ds = TimeSeriesDataset::new(Array2::zeros((10, 1)), vec!["v".into()]).unwrap();
        let b = split_dataset(&ds, SplitScheme::Ratio).unwrap().split_bounds.unwrap();
        assert_eq!((b.train_end, b.val_end), (7, 8));

        let ds = TimeSeriesDataset::new(Array2::zeros((17420, 1)), vec!["v".into()]).unwrap();
        let b = split_dataset(&ds, SplitScheme::Months { steps_per_month: 720 })
            .unwrap()
            .split_bounds
            .unwrap();
        assert_eq!((b.train_end, b.val_end, b.test_end), (8640, 11520, 14400));

        let short = TimeSeriesDataset::new(Array2::zeros((4000, 1)), vec!["v".into()]).unwrap();
        assert!(split_dataset(&short, SplitScheme::Months { steps_per_month: 720 }).is_err());
    }

    #[test]
    fn hand_evaluated_variance() {
        let x = array![[0.0], [0.0], [0.0]];
        let y = array![[0.0], [3.0]];
        let v = sliding_window_variance(x.view(), y.view(), 3).unwrap();
        assert_eq!(v.dim(), (2, 1));
        assert!(v[[0, 0]].abs() < 1e-15);
        assert!((v[[1, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_floored_in_windows() {
        let values = Array2::from_elem((60, 2), 4.0);
        let ds = split_dataset(
            &TimeSeriesDataset::new(values, vec!["a".into(), "b".into()]).unwrap(),
            SplitScheme::Ratio,
        )
        .unwrap();
        let spec = WindowSpec { input_len: 10, horizon: 5, variance_window: 8, stride: 1 };
        let w = make_windows(&ds, Split::Train, spec).unwrap();
        assert_eq!(w.len(), 42 - 15 + 1);
        assert!(w.iter().all(|p| p.sigma_y0.iter().all(|&v| v == VARIANCE_FLOOR)));
    }

    #[test]
    fn variance_window_errors() {
        let x = Array2::<f64>::zeros((3, 1));
        let y = Array2::<f64>::zeros((2, 1));
        assert!(sliding_window_variance(x.view(), y.view(), 6).is_err());
        assert!(sliding_window_variance(x.view(), y.view(), 1).is_err());
    }

    #[test]
    fn window_counts() {
        let ds = split_dataset(
            &TimeSeriesDataset::new(Array2::zeros((7588, 1)), vec!["v".into()]).unwrap(),
            SplitScheme::Ratio,
        )
        .unwrap();
        let spec = WindowSpec { input_len: 168, horizon: 36, variance_window: 96, stride: 1 };
        assert_eq!(make_windows(&ds, Split::Train, spec).unwrap().len(), 5108);

        // split length exactly N + M
        let ds = TimeSeriesDataset {
            split_bounds: Some(SplitBounds { train_end: 204, val_end: 300, test_end: 400 }),
            ..TimeSeriesDataset::new(Array2::zeros((400, 1)), vec!["v".into()]).unwrap()
        };
        assert_eq!(make_windows(&ds, Split::Train, spec).unwrap().len(), 1);
        let long = WindowSpec { horizon: 200, ..spec };
        assert!(make_windows(&ds, Split::Val, long).is_err());
    }

    #[test]
    fn synthetic_generators() {
        let ds = synth_linear(7588, 1).unwrap();
        assert_eq!(ds.values.dim(), (7588, 1));
        let (mean, std) = synth_ground_truth(SynthKind::Linear, 7588);
        assert_eq!(mean[0], 1.0);
        assert_eq!(mean[7587], 10.0);
        assert_eq!(std[7587], 10.0);
        let (_, qstd) = synth_ground_truth(SynthKind::Quadratic, 7588);
        assert_eq!(qstd[7587], 100.0);
        assert_eq!(synth_linear(2, 1).unwrap().len(), 2);
        assert!(synth_linear(1, 1).is_err());
        assert_eq!(synth_quadratic(500, 9).unwrap(), synth_quadratic(500, 9).unwrap());
        assert_ne!(synth_quadratic(500, 9).unwrap(), synth_quadratic(500, 10).unwrap());
    }

    #[test]
    fn final_step_spread_matches_generator() {
        // Monte-Carlo oracle: many independent draws of the last step
        let draws = 100_000;
        for (kind, target) in [(SynthKind::Linear, 10.0), (SynthKind::Quadratic, 100.0)] {
            let last: Vec<f64> = (0..draws as u64)
                .map(|seed| {
                    let ds = synth(kind, 2, seed).unwrap();
                    ds.values[[1, 0]]
                })
                .collect();
            let mean = last.iter().sum::<f64>() / draws as f64;
            let var = last.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let sd = var.sqrt();
            // standard error of the sample standard deviation for a Gaussian
            let se = target / (2.0 * (draws as f64 - 1.0)).sqrt();
            assert!((sd - target).abs() < 3.0 * se, "{kind}: sd {sd} vs {target}");
        }
    }

    #[test]
    fn standardizer_round_trip_and_train_moments() {
        let ds = split_dataset(&synth_linear(7588, 3).unwrap(), SplitScheme::Ratio).unwrap();
        let sc = Standardizer::fit(&ds).unwrap();
        let z = sc.transform_dataset(&ds).unwrap();
        let train = z.split_values(Split::Train).unwrap();
        let mu = train.column(0).mean().unwrap();
        let var = train.column(0).mapv(|v| (v - mu).powi(2)).mean().unwrap();
        assert!(mu.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        let back = sc.inverse(z.values.view()).unwrap();
        let err = (&back - &ds.values).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-12);

        // fitted mean sits near the average of the generating ramp over the train rows
        let (ramp, _) = synth_ground_truth(SynthKind::Linear, 7588);
        let ramp_mean = ramp[..5311].iter().sum::<f64>() / 5311.0;
        let (_, sd) = synth_ground_truth(SynthKind::Linear, 7588);
        let noise_se = (sd[..5311].iter().map(|v| v * v).sum::<f64>()).sqrt() / 5311.0;
        assert!((sc.mean[0] - ramp_mean).abs() < 4.0 * noise_se);
    }

    #[test]
    fn constant_feature_is_floored() {
        let ds = split_dataset(
            &TimeSeriesDataset::new(Array2::from_elem((50, 1), 2.0), vec!["c".into()]).unwrap(),
            SplitScheme::Ratio,
        )
        .unwrap();
        let sc = Standardizer::fit(&ds).unwrap();
        assert_eq!(sc.std[0], SCALE_VARIANCE_FLOOR.sqrt());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = synth_quadratic(300, 4).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, f.path()).unwrap();
        assert_eq!(load_csv(f.path(), false).unwrap(), ds);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn window_count_matches_loop(len in 20usize..300, n in 1usize..40, m in 1usize..40, stride in 1usize..5) {
                let ds = TimeSeriesDataset {
                    split_bounds: Some(SplitBounds { train_end: len, val_end: len + 1, test_end: len + 2 }),
                    ..TimeSeriesDataset::new(Array2::zeros((len + 2, 1)), vec!["v".into()]).unwrap()
                };
                let spec = WindowSpec { input_len: n, horizon: m, variance_window: 2, stride };
                let mut expected = 0;
                let mut start = 0;
                while start + n + m <= len {
                    expected += 1;
                    start += stride;
                }
                match make_windows(&ds, Split::Train, spec) {
                    Ok(w) => prop_assert_eq!(w.len(), expected),
                    Err(_) => prop_assert_eq!(expected, 0),
                }
            }

            #[test]
            fn rolling_variance_matches_two_pass(
                series in prop::collection::vec(-50.0f64..50.0, 10..120),
                split in 0.2f64..0.8,
                window in 2usize..40,
            ) {
                let total = series.len();
                let n = ((total as f64 * split) as usize).clamp(1, total - 1);
                let window = window.min(total);
                let x = Array2::from_shape_vec((n, 1), series[..n].to_vec()).unwrap();
                let y = Array2::from_shape_vec((total - n, 1), series[n..].to_vec()).unwrap();
                let v = sliding_window_variance(x.view(), y.view(), window).unwrap();
                for k in 0..total - n {
                    let expect = naive_variance(&series, n + k, window);
                    prop_assert!((v[[k, 0]] - expect).abs() < 1e-10);
                }
            }
        }
    }
}
