//! Parameter recovery under the spline truth.

use rayon::prelude::*;

use super::metrics::{CoverageMetrics, ParameterMetrics, PathCoverage, PointwiseMetric, StudyMetrics};
use super::{derived_seed, generate_spline_data, replicate_rng, SimulationScenario, Truth};
use crate::bootstrap::{resample_and_refit, BootstrapOptions};
use crate::dataset::StressSet;
use crate::error::{Error, Result};
use crate::fit::{aic, profile_fit, KnotPolicy};

struct Record {
    theta: [f64; 3],
    gamma: Vec<f64>,
    path: Vec<f64>,
    aic_ok: bool,
    cover: Option<Cover>,
}

struct Cover {
    quantile: [bool; 3],
    bias_corrected: [bool; 3],
    path_quantile: Vec<bool>,
    path_bias_corrected: Vec<bool>,
    failures: usize,
}

/// Fits the true degree and knot count to `datasets` simulated datasets and,
/// when `scenario.bootstrap > 0`, records interval coverage.
pub fn run_recovery_study(scenario: &SimulationScenario, datasets: usize) -> Result<StudyMetrics> {
    scenario.validate()?;
    let Truth::Spline {
        degree,
        n_interior,
        gamma,
        beta,
        sigma,
        rho,
        ..
    } = &scenario.truth
    else {
        return Err(Error::InvalidArgument("recovery study needs a spline truth".into()));
    };
    let times = scenario.path_times();
    let truth_path = scenario.truth_baseline(&times)?;
    let policy = KnotPolicy::Adaptive {
        degree: *degree,
        n_interior: *n_interior,
    };
    let truth3 = [*beta, *sigma, *rho];

    let records: Vec<Option<Record>> = (0..datasets)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<Record> {
                let data = generate_spline_data(scenario, &mut replicate_rng(scenario.seed, r))?;
                let stresses = StressSet::new(&data, scenario.kelvin_offset)?;
                let fit = profile_fit(&data, &stresses, &policy, &scenario.fit)?;
                let path = times
                    .iter()
                    .map(|&t| fit.baseline(t.clamp(fit.spec.boundary[0], fit.spec.boundary[1])))
                    .collect::<Result<Vec<_>>>()?;
                let cover = if scenario.bootstrap > 0 {
                    let opts = BootstrapOptions {
                        replicates: scenario.bootstrap,
                        seed: derived_seed(scenario.seed, r),
                        alpha: scenario.alpha,
                        controls: scenario.fit.clone(),
                        mttf_temp: None,
                        mttf_threshold: None,
                        path_times: times.clone(),
                    };
                    let boot = resample_and_refit(&fit, &data, &opts)?;
                    let names = ["beta", "sigma", "rho"];
                    let mut quantile = [false; 3];
                    let mut bias_corrected = [false; 3];
                    for (i, name) in names.iter().enumerate() {
                        if let Some(iv) = boot.interval(name) {
                            quantile[i] = iv.quantile.contains(truth3[i]);
                            bias_corrected[i] = iv.bias_corrected.contains(truth3[i]);
                        }
                    }
                    let mut path_quantile = vec![false; times.len()];
                    let mut path_bias_corrected = vec![false; times.len()];
                    for iv in &boot.path_intervals {
                        let k: usize = iv.name["path_".len()..].parse::<usize>().unwrap_or(0);
                        if (1..=times.len()).contains(&k) {
                            path_quantile[k - 1] = iv.quantile.contains(truth_path[k - 1]);
                            path_bias_corrected[k - 1] = iv.bias_corrected.contains(truth_path[k - 1]);
                        }
                    }
                    Some(Cover {
                        quantile,
                        bias_corrected,
                        path_quantile,
                        path_bias_corrected,
                        failures: boot.failures,
                    })
                } else {
                    None
                };
                Ok(Record {
                    theta: [fit.beta, fit.sigma, fit.rho],
                    aic_ok: fit.aic == aic(fit.loglik, fit.p_u + 3),
                    gamma: fit.gamma,
                    path,
                    cover,
                })
            };
            match run() {
                Ok(rec) => Some(rec),
                Err(e) => {
                    log::warn!("replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let ok: Vec<Record> = records.into_iter().flatten().collect();
    let mut out = StudyMetrics::empty(&scenario.name, datasets);
    out.failures = datasets - ok.len();
    out.aic_checked = ok.len();
    out.aic_violations = ok.iter().filter(|r| !r.aic_ok).count();
    for (i, name) in ["beta", "sigma", "rho"].iter().enumerate() {
        let est: Vec<f64> = ok.iter().map(|r| r.theta[i]).collect();
        out.parameters
            .push(ParameterMetrics::from_estimates(name, truth3[i], &est));
    }
    for (l, &g) in gamma.iter().enumerate() {
        let est: Vec<f64> = ok.iter().map(|r| r.gamma[l]).collect();
        out.parameters
            .push(ParameterMetrics::from_estimates(&format!("gamma_{}", l + 1), g, &est));
    }
    for (i, (&t, &g)) in times.iter().zip(&truth_path).enumerate() {
        let est: Vec<f64> = ok.iter().map(|r| r.path[i]).collect();
        let p = ParameterMetrics::from_estimates("path", g, &est);
        out.pointwise.push(PointwiseMetric {
            t,
            truth: g,
            mean: p.mean,
            bias: p.bias,
            mse: p.mse,
        });
    }

    let covers: Vec<&Cover> = ok.iter().filter_map(|r| r.cover.as_ref()).collect();
    if !covers.is_empty() {
        let k = covers.len() as f64;
        let rate = |f: &dyn Fn(&Cover) -> bool| covers.iter().filter(|c| f(c)).count() as f64 / k;
        for (i, name) in ["beta", "sigma", "rho"].iter().enumerate() {
            out.coverage.push(CoverageMetrics {
                name: name.to_string(),
                quantile: rate(&|c| c.quantile[i]),
                bias_corrected: rate(&|c| c.bias_corrected[i]),
                n: covers.len(),
            });
        }
        for (i, &t) in times.iter().enumerate() {
            out.path_coverage.push(PathCoverage {
                t,
                quantile: rate(&|c| c.path_quantile[i]),
                bias_corrected: rate(&|c| c.path_bias_corrected[i]),
            });
        }
        out.bootstrap_failures = covers.iter().map(|c| c.failures).sum();
    }
    Ok(out)
}
