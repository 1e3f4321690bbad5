//! Accumulated study summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

/// Describes how `mse` relates to `bias` and `sd` in every summary.
pub const MSE_CONVENTION: &str =
    "mse = mean((estimate - truth)^2) = bias^2 + sd^2 (K - 1) / K, sd with divisor K - 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMetrics {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
    pub n: usize,
}

impl ParameterMetrics {
    pub fn from_estimates(name: &str, truth: f64, estimates: &[f64]) -> Self {
        let n = estimates.len();
        if n == 0 {
            return ParameterMetrics {
                name: name.into(),
                truth,
                mean: f64::NAN,
                bias: f64::NAN,
                sd: f64::NAN,
                mse: f64::NAN,
                n,
            };
        }
        let m = mean(estimates);
        ParameterMetrics {
            name: name.into(),
            truth,
            mean: m,
            bias: m - truth,
            sd: sample_sd(estimates),
            mse: estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n as f64,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseMetric {
    pub t: f64,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMetrics {
    pub name: String,
    pub quantile: f64,
    pub bias_corrected: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCoverage {
    pub t: f64,
    pub quantile: f64,
    pub bias_corrected: f64,
}

/// Integrated squared-error summary of a fitted baseline over `[0, t_m]`,
/// each integral divided by `t_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImseMetrics {
    pub model: String,
    pub ibias: f64,
    pub rivar: f64,
    pub rimse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MttfMetrics {
    pub model: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCount {
    pub degree: usize,
    pub n_interior: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub scenario: String,
    pub n_datasets: usize,
    pub failures: usize,
    pub mse_convention: String,
    pub parameters: Vec<ParameterMetrics>,
    pub pointwise: Vec<PointwiseMetric>,
    pub coverage: Vec<CoverageMetrics>,
    pub path_coverage: Vec<PathCoverage>,
    pub imse: Vec<ImseMetrics>,
    pub mttf: Vec<MttfMetrics>,
    pub selection: Vec<SelectionCount>,
    /// Fits (including knot-search candidates) checked for the AIC identity.
    pub aic_checked: usize,
    pub aic_violations: usize,
    pub bootstrap_failures: usize,
}

impl StudyMetrics {
    pub(crate) fn empty(scenario: &str, n_datasets: usize) -> Self {
        StudyMetrics {
            scenario: scenario.into(),
            n_datasets,
            failures: 0,
            mse_convention: MSE_CONVENTION.into(),
            parameters: Vec::new(),
            pointwise: Vec::new(),
            coverage: Vec::new(),
            path_coverage: Vec::new(),
            imse: Vec::new(),
            mttf: Vec::new(),
            selection: Vec::new(),
            aic_checked: 0,
            aic_violations: 0,
            bootstrap_failures: 0,
        }
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterMetrics> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn coverage_of(&self, name: &str) -> Option<&CoverageMetrics> {
        self.coverage.iter().find(|p| p.name == name)
    }

    pub fn imse_of(&self, model: &str) -> Option<&ImseMetrics> {
        self.imse.iter().find(|p| p.model == model)
    }

    pub fn mttf_of(&self, model: &str) -> Option<&MttfMetrics> {
        self.mttf.iter().find(|p| p.model == model)
    }

    /// Pointwise baseline MSE as CSV (`t,truth,mean,bias,mse`).
    pub fn write_pointwise_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "truth", "mean", "bias", "mse"]).map_err(csv_io)?;
        for p in &self.pointwise {
            w.write_record([p.t, p.truth, p.mean, p.bias, p.mse].map(|v| v.to_string()))
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Pointwise interval coverage as CSV (`t,quantile,bias_corrected`).
    pub fn write_coverage_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "quantile", "bias_corrected"]).map_err(csv_io)?;
        for p in &self.path_coverage {
            w.write_record([p.t, p.quantile, p.bias_corrected].map(|v| v.to_string()))
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Trapezoidal integral of `values` on `grid`.
pub(crate) fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// IBias, root IVar and root IMSE from per-replicate paths on `grid`.
pub(crate) fn imse(model: &str, grid: &[f64], truth: &[f64], paths: &[Vec<f64>]) -> ImseMetrics {
    let k = paths.len();
    if k == 0 {
        return ImseMetrics {
            model: model.into(),
            ibias: f64::NAN,
            rivar: f64::NAN,
            rimse: f64::NAN,
            n: 0,
        };
    }
    let tm = grid.last().copied().unwrap_or(1.0) - grid[0];
    let mut bias2 = Vec::with_capacity(grid.len());
    let mut var = Vec::with_capacity(grid.len());
    let mut mse = Vec::with_capacity(grid.len());
    for (i, &g) in truth.iter().enumerate() {
        let vals: Vec<f64> = paths.iter().map(|p| p[i]).collect();
        let m = mean(&vals);
        bias2.push((m - g).powi(2));
        var.push(vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k as f64);
        mse.push(vals.iter().map(|v| (v - g).powi(2)).sum::<f64>() / k as f64);
    }
    ImseMetrics {
        model: model.into(),
        ibias: (trapezoid(grid, &bias2) / tm).sqrt(),
        rivar: (trapezoid(grid, &var) / tm).sqrt(),
        rimse: (trapezoid(grid, &mse) / tm).sqrt(),
        n: k,
    }
}

pub(crate) fn mttf_metrics(model: &str, truth: f64, values: &[f64]) -> MttfMetrics {
    let p = ParameterMetrics::from_estimates(model, truth, values);
    MttfMetrics {
        model: model.into(),
        truth,
        mean: p.mean,
        bias: p.bias,
        sd: p.sd,
        rmse: p.mse.sqrt(),
        n: p.n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_decomposition() {
        let e = [0.8, 0.9, 1.1, 1.3];
        let p = ParameterMetrics::from_estimates("x", 1.0, &e);
        let k = e.len() as f64;
        assert!((p.mse - (p.bias.powi(2) + p.sd.powi(2) * (k - 1.0) / k)).abs() < 1e-14);
    }

    #[test]
    fn imse_decomposition() {
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 2.0).collect();
        let truth: Vec<f64> = grid.iter().map(|t| 1.0 - t / 200.0).collect();
        let paths: Vec<Vec<f64>> = (0..7)
            .map(|r| truth.iter().map(|g| g + 0.01 * ((r * 3 % 5) as f64 - 2.0) + 0.002).collect())
            .collect();
        let m = imse("m", &grid, &truth, &paths);
        assert!((m.rimse.powi(2) - m.ibias.powi(2) - m.rivar.powi(2)).abs() < 1e-10);
        assert!(m.ibias > 0.0);
    }
}
