//! Residual bootstrap with separately resampled cell effects and individual
//! errors.
//!
//! Raw residuals are split into a shrunken cell effect `u_ij` and a remainder
//! `e_ijk`. Both are rescaled so that their empirical second moments equal
//! `rho sigma^2` and `(1 - rho) sigma^2`, then resampled independently around
//! the fitted mean. Every replicate refits the model with the original knot
//! spec and re-profiles `beta`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{AddtDataset, StressSet};
use crate::error::{Error, Result};
use crate::fit::{profile_fit, FitControls, KnotPolicy, ModelFit};
use crate::reliability::{mttf, Threshold};
use crate::stats::quantile_type7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDecomposition {
    pub residuals: Vec<f64>,
    /// One effect per cell, in dataset order.
    pub u_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub sigma_u: f64,
    pub sigma_e: f64,
    pub u_corrected: Vec<f64>,
    pub e_corrected: Vec<f64>,
}

/// Splits the residuals of `fit` on `data` into cell effects and errors.
pub fn decompose_residuals(fit: &ModelFit, data: &AddtDataset) -> Result<ResidualDecomposition> {
    let residuals = fit.residuals(data)?;
    let rho = fit.rho;
    let mut u_hat = Vec::with_capacity(data.n_cells());
    let mut e_hat = Vec::with_capacity(data.n());
    let mut start = 0;
    for cell in data.cells() {
        let n = cell.readings.len();
        let r = &residuals[start..start + n];
        let rbar = r.iter().sum::<f64>() / n as f64;
        let u = n as f64 * rho / (1.0 + (n as f64 - 1.0) * rho) * rbar;
        u_hat.push(u);
        e_hat.extend(r.iter().map(|v| v - u));
        start += n;
    }
    let sigma_u = rho.max(0.0).sqrt() * fit.sigma;
    let sigma_e = (1.0 - rho).max(0.0).sqrt() * fit.sigma;

    let u_ms = u_hat.iter().map(|u| u * u).sum::<f64>() / u_hat.len() as f64;
    let u_corrected = rescale(&u_hat, u_ms, sigma_u);
    let mut e_corrected = Vec::with_capacity(e_hat.len());
    let mut start = 0;
    for n in data.cell_sizes() {
        let e = &e_hat[start..start + n];
        let ms = e.iter().map(|v| v * v).sum::<f64>() / n as f64;
        e_corrected.extend(rescale(e, ms, sigma_e));
        start += n;
    }
    Ok(ResidualDecomposition {
        residuals,
        u_hat,
        e_hat,
        sigma_u,
        sigma_e,
        u_corrected,
        e_corrected,
    })
}

fn rescale(values: &[f64], mean_square: f64, target_sd: f64) -> Vec<f64> {
    if mean_square > 0.0 {
        let k = target_sd / mean_square.sqrt();
        values.iter().map(|v| v * k).collect()
    } else {
        vec![0.0; values.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub controls: FitControls,
    /// Use condition for per-replicate MTTF, if any.
    pub mttf_temp: Option<f64>,
    pub mttf_threshold: Option<Threshold>,
    /// Baseline times at which the path is recorded; empty selects 41 points
    /// across the knot range.
    pub path_times: Vec<f64>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 1000,
            seed: 1,
            alpha: 0.05,
            controls: FitControls::default(),
            mttf_temp: None,
            mttf_threshold: None,
            path_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSample {
    pub replicate: usize,
    pub beta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub mttf: Option<f64>,
    pub gamma: Vec<f64>,
    pub path: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterInterval {
    pub name: String,
    pub estimate: f64,
    pub quantile: Interval,
    pub bias_corrected: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub failures: usize,
    pub path_times: Vec<f64>,
    pub samples: Vec<BootstrapSample>,
    /// Intervals for beta, sigma, rho and (when requested) MTTF.
    pub intervals: Vec<ParameterInterval>,
    pub path_intervals: Vec<ParameterInterval>,
}

impl BootstrapResult {
    pub fn interval(&self, name: &str) -> Option<&ParameterInterval> {
        self.intervals.iter().find(|p| p.name == name)
    }

    /// Raw replicate parameters as CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let p = self.samples.first().map(|s| s.gamma.len()).unwrap_or(0);
        let mut header = vec!["replicate", "beta", "sigma", "rho", "mttf"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((1..=p).map(|l| format!("gamma_{l}")));
        header.extend((1..=self.path_times.len()).map(|l| format!("path_{l}")));
        w.write_record(&header).map_err(csv_io)?;
        for s in &self.samples {
            let mut row = vec![
                s.replicate.to_string(),
                s.beta.to_string(),
                s.sigma.to_string(),
                s.rho.to_string(),
                s.mttf.map(|v| v.to_string()).unwrap_or_default(),
            ];
            row.extend(s.gamma.iter().map(f64::to_string));
            row.extend(s.path.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn default_path_times(fit: &ModelFit) -> Vec<f64> {
    let [lo, hi] = fit.spec.boundary;
    (0..41).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect()
}

/// One bootstrap response vector for replicate `m`.
pub fn bootstrap_responses(
    fitted: &[f64],
    decomposition: &ResidualDecomposition,
    cell_sizes: &[usize],
    seed: u64,
    replicate: usize,
) -> Vec<f64> {
    let mut rng = replicate_rng(seed, replicate);
    let u = &decomposition.u_corrected;
    let e = &decomposition.e_corrected;
    let mut y = Vec::with_capacity(fitted.len());
    let mut row = 0;
    for &n in cell_sizes {
        let cell_effect = u[rng.random_range(0..u.len())];
        for _ in 0..n {
            y.push(fitted[row] + cell_effect + e[rng.random_range(0..e.len())]);
            row += 1;
        }
    }
    y
}

/// Resamples residuals `B` times and refits each replicate.
pub fn resample_and_refit(
    fit: &ModelFit,
    data: &AddtDataset,
    options: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if options.replicates == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {} must lie in (0, 1)",
            options.alpha
        )));
    }
    options.controls.validate()?;
    let stresses = StressSet::new(data, fit.kelvin_offset)?;
    let decomposition = decompose_residuals(fit, data)?;
    let fitted = fit.fitted(data)?;
    let sizes = data.cell_sizes();
    let policy = KnotPolicy::Fixed {
        spec: fit.spec.clone(),
    };
    let path_times = if options.path_times.is_empty() {
        default_path_times(fit)
    } else {
        options.path_times.clone()
    };
    let mttf_query = match (options.mttf_temp, options.mttf_threshold) {
        (Some(t), Some(d)) => Some((t, d)),
        (None, None) => None,
        _ => {
            return Err(Error::InvalidArgument(
                "MTTF needs both a use temperature and a threshold".into(),
            ))
        }
    };

    let outcomes: Vec<Option<BootstrapSample>> = (0..options.replicates)
        .into_par_iter()
        .map(|m| {
            let y = bootstrap_responses(&fitted, &decomposition, &sizes, options.seed, m);
            let refit = data
                .with_responses(&y)
                .and_then(|d| profile_fit(&d, &stresses, &policy, &options.controls));
            match refit {
                Ok(f) if f.converged => Some(sample_row(m, &f, &path_times, mttf_query)),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("bootstrap replicate {m} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let samples: Vec<BootstrapSample> = outcomes.into_iter().flatten().collect();
    if failures > 0 {
        log::warn!("{failures} of {} bootstrap replicates failed", options.replicates);
    }

    let mut intervals = Vec::new();
    let mut path_intervals = Vec::new();
    if samples.len() >= 2 {
        let alpha = options.alpha;
        let add = |name: String, estimate: f64, values: Vec<f64>, out: &mut Vec<ParameterInterval>| {
            if values.len() >= 2 {
                out.push(ParameterInterval {
                    name,
                    estimate,
                    quantile: quantile_ci(&values, alpha).expect("two samples"),
                    bias_corrected: bias_corrected_ci(&values, estimate, alpha).expect("two samples"),
                });
            }
        };
        add("beta".into(), fit.beta, samples.iter().map(|s| s.beta).collect(), &mut intervals);
        add("sigma".into(), fit.sigma, samples.iter().map(|s| s.sigma).collect(), &mut intervals);
        add("rho".into(), fit.rho, samples.iter().map(|s| s.rho).collect(), &mut intervals);
        if let Some((temp, threshold)) = mttf_query {
            if let Ok(est) = mttf(fit, temp, threshold) {
                let vals = samples.iter().filter_map(|s| s.mttf).collect();
                add("mttf".into(), est.m_f, vals, &mut intervals);
            }
        }
        for (k, &t) in path_times.iter().enumerate() {
            if let Ok(est) = fit.baseline(t) {
                let vals = samples.iter().map(|s| s.path[k]).filter(|v| v.is_finite()).collect();
                add(format!("path_{}", k + 1), est, vals, &mut path_intervals);
            }
        }
    }

    Ok(BootstrapResult {
        replicates: options.replicates,
        seed: options.seed,
        alpha: options.alpha,
        failures,
        path_times,
        samples,
        intervals,
        path_intervals,
    })
}

fn sample_row(
    replicate: usize,
    f: &ModelFit,
    path_times: &[f64],
    mttf_query: Option<(f64, Threshold)>,
) -> BootstrapSample {
    BootstrapSample {
        replicate,
        beta: f.beta,
        sigma: f.sigma,
        rho: f.rho,
        mttf: mttf_query.and_then(|(t, d)| mttf(f, t, d).ok().map(|m| m.m_f)),
        gamma: f.gamma.clone(),
        path: path_times
            .iter()
            .map(|&t| f.baseline(t).unwrap_or(f64::NAN))
            .collect(),
    }
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(
            "an interval needs at least two bootstrap samples".into(),
        ));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("bootstrap samples contain NaN".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Equal-tailed percentile interval (type-7 quantiles).
pub fn quantile_ci(samples: &[f64], alpha: f64) -> Result<Interval> {
    let v = sorted(samples)?;
    Ok(Interval {
        lower: quantile_type7(&v, alpha / 2.0),
        upper: quantile_type7(&v, 1.0 - alpha / 2.0),
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Adjusted tail levels `Phi(2 z_q + z_{alpha/2})` and `Phi(2 z_q + z_{1-alpha/2})`.
pub fn bias_corrected_levels(q: f64, alpha: f64) -> (f64, f64) {
    let phi = std_normal();
    let zq = phi.inverse_cdf(q);
    if zq == 0.0 {
        return (alpha / 2.0, 1.0 - alpha / 2.0);
    }
    (
        phi.cdf(2.0 * zq + phi.inverse_cdf(alpha / 2.0)),
        phi.cdf(2.0 * zq + phi.inverse_cdf(1.0 - alpha / 2.0)),
    )
}

/// Ordered-sample ranks `ceil(B Phi(2 z_q + z_{alpha/2}))` and
/// `ceil(B Phi(2 z_q + z_{1-alpha/2}))`, 1-based.
pub fn bias_corrected_ranks(b: usize, q: f64, alpha: f64) -> (usize, usize) {
    let (lo, hi) = bias_corrected_levels(q, alpha);
    let rank = |p: f64| ((b as f64 * p).ceil() as usize).clamp(1, b);
    (rank(lo), rank(hi))
}

/// Bias-corrected percentile interval. Falls back to [`quantile_ci`] when all
/// samples lie on one side of `theta_hat`.
pub fn bias_corrected_ci(samples: &[f64], theta_hat: f64, alpha: f64) -> Result<Interval> {
    let v = sorted(samples)?;
    let below = v.partition_point(|&s| s < theta_hat);
    let q = below as f64 / v.len() as f64;
    if below == 0 || below == v.len() {
        log::warn!("bias correction undefined at q = {q}; using the quantile interval");
        return quantile_ci(&v, alpha);
    }
    let (lo, hi) = bias_corrected_levels(q, alpha);
    Ok(Interval {
        lower: quantile_type7(&v, lo),
        upper: quantile_type7(&v, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interval_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let ci = quantile_ci(&v, 0.05).unwrap();
        assert!((ci.lower - 3.475).abs() < 1e-12 && (ci.upper - 97.525).abs() < 1e-12);
        let c = quantile_ci(&[2.5; 10], 0.1).unwrap();
        assert_eq!((c.lower, c.upper), (2.5, 2.5));
        let wide = quantile_ci(&v, 0.01).unwrap();
        assert!(wide.lower < ci.lower && wide.upper > ci.upper);
    }

    #[test]
    fn bias_corrected_rank_example() {
        assert_eq!(bias_corrected_ranks(1000, 0.6, 0.05), (74, 994));
    }

    #[test]
    fn bias_corrected_reduces_at_half() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let bc = bias_corrected_ci(&v, 5.5, 0.05).unwrap();
        assert_eq!(bc, quantile_ci(&v, 0.05).unwrap());
    }

    #[test]
    fn bias_corrected_shift_equivariance() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = bias_corrected_ci(&v, 0.1, 0.1).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + 2.0).collect();
        let b = bias_corrected_ci(&shifted, 2.1, 0.1).unwrap();
        assert!((b.lower - a.lower - 2.0).abs() < 1e-12);
        assert!((b.upper - a.upper - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_samples_fall_back() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(bias_corrected_ci(&v, 0.0, 0.1).unwrap(), quantile_ci(&v, 0.1).unwrap());
    }

    #[test]
    fn too_few_samples() {
        assert!(quantile_ci(&[1.0], 0.05).is_err());
    }
}
