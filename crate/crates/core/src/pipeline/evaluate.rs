//! Test-set scoring and per-time-step forecast summaries.

use std::collections::BTreeMap;

use log::{info, warn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::checkpoint::NsDiffModel;
use super::sample::{sample_window, ForecastEnsemble};
use crate::data::WindowPair;
use crate::error::{Error, Result};
use crate::metrics::{EvalAccumulator, EvalReport};

/// Forecast summary at one absolute time index, averaged over every test
/// window whose horizon covers it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub time: usize,
    pub observed: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub windows: usize,
    pub solver_fallbacks: usize,
    pub solver_cells: usize,
    pub region: Vec<RegionPoint>,
    /// Ensemble for the first test window, for plotting.
    pub first_window: Option<(WindowPair, ForecastEnsemble)>,
}

impl Evaluation {
    pub fn fallback_rate(&self) -> f64 {
        if self.solver_cells == 0 {
            0.0
        } else {
            self.solver_fallbacks as f64 / self.solver_cells as f64
        }
    }
}

#[derive(Default)]
struct RegionSums {
    observed: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    windows: usize,
}

fn add_row(acc: &mut Vec<f64>, row: ndarray::ArrayView1<'_, f64>) {
    if acc.is_empty() {
        acc.resize(row.len(), 0.0);
    }
    for (a, v) in acc.iter_mut().zip(row) {
        *a += v;
    }
}

/// Samples every test window (given in data units) and scores the ensembles.
pub fn evaluate(model: &NsDiffModel, test: &[WindowPair], names: &[String], samples: usize) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("no test windows to evaluate".into()));
    }
    let d = model.features();
    let mut acc = EvalAccumulator::new(d);
    let mut region: BTreeMap<usize, RegionSums> = BTreeMap::new();
    let mut fallbacks = 0;
    let mut cells = 0;
    let mut first_window = None;
    for (i, w) in test.iter().enumerate() {
        let x = model.scaler.transform(w.x.view())?;
        let (ens, outcome) = sample_window(model, x.view(), samples, i as u64)?;
        fallbacks += outcome.solver_fallbacks;
        cells += outcome.solver_cells;
        acc.add(ens.samples.view(), w.y0.view())?;
        let (mean, std, lower, upper) = (ens.mean(), ens.std(), ens.quantile(0.025), ens.quantile(0.975));
        for step in 0..w.y0.nrows() {
            let r = region.entry(w.origin + step).or_default();
            add_row(&mut r.observed, w.y0.row(step));
            add_row(&mut r.mean, mean.row(step));
            add_row(&mut r.std, std.row(step));
            add_row(&mut r.lower, lower.row(step));
            add_row(&mut r.upper, upper.row(step));
            r.windows += 1;
        }
        if i == 0 {
            first_window = Some((w.clone(), ens));
        }
        if (i + 1) % 100 == 0 {
            info!("sampled {} of {} test windows", i + 1, test.len());
        }
    }
    let report = acc.finish(names)?;
    let rate = if cells == 0 { 0.0 } else { fallbacks as f64 / cells as f64 };
    if fallbacks > 0 {
        warn!(
            "variance solver fell back to g in {fallbacks} of {cells} cells ({:.3}%)",
            100.0 * rate
        );
    }
    let region = region
        .into_iter()
        .map(|(time, r)| {
            let n = r.windows as f64;
            let avg = |v: Vec<f64>| v.into_iter().map(|x| x / n).collect::<Vec<_>>();
            RegionPoint {
                time,
                observed: avg(r.observed),
                mean: avg(r.mean),
                std: avg(r.std),
                lower: avg(r.lower),
                upper: avg(r.upper),
                windows: r.windows,
            }
        })
        .collect();
    Ok(Evaluation {
        report,
        windows: test.len(),
        solver_fallbacks: fallbacks,
        solver_cells: cells,
        region,
        first_window,
    })
}

/// `time,feature,observed,mean,std,lower,upper` rows for the covered test region.
pub fn region_csv(region: &[RegionPoint], names: &[String]) -> String {
    let mut out = String::from("time,feature,observed,mean,std,lower,upper\n");
    for p in region {
        for (k, name) in names.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.time, name, p.observed[k], p.mean[k], p.std[k], p.lower[k], p.upper[k]
            ));
        }
    }
    out
}

/// History and forecast band for one window: `time,feature,kind,value,mean,lower,upper`.
pub fn window_csv(window: &WindowPair, ens: &ForecastEnsemble, names: &[String]) -> String {
    let mut out = String::from("time,feature,kind,value,mean,lower,upper\n");
    let n = window.x.nrows();
    let start = window.origin - n;
    for (k, name) in names.iter().enumerate() {
        for i in 0..n {
            out.push_str(&format!("{},{},history,{},,,\n", start + i, name, window.x[[i, k]]));
        }
    }
    let (mean, lower, upper): (Array2<f64>, Array2<f64>, Array2<f64>) = (ens.mean(), ens.quantile(0.025), ens.quantile(0.975));
    for (k, name) in names.iter().enumerate() {
        for i in 0..window.y0.nrows() {
            out.push_str(&format!(
                "{},{},forecast,{},{},{},{}\n",
                window.origin + i,
                name,
                window.y0[[i, k]],
                mean[[i, k]],
                lower[[i, k]],
                upper[[i, k]]
            ));
        }
    }
    out
}

/// Time-averaged ensemble spread per feature over the region, in data units.
pub fn region_spread(region: &[RegionPoint]) -> Vec<f64> {
    let Some(first) = region.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.std.len()];
    for p in region {
        for (o, v) in out.iter_mut().zip(&p.std) {
            *o += v;
        }
    }
    out.iter().map(|v| v / region.len() as f64).collect()
}

/// Values of one feature of the region as a column, for correlation checks.
pub fn region_column(region: &[RegionPoint], feature: usize, pick: fn(&RegionPoint) -> &Vec<f64>) -> Vec<f64> {
    region.iter().map(|p| pick(p)[feature]).collect()
}
