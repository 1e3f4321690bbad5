//! Linear truth fitted by the true model, a wrong sigmoid model and the
//! semi-parametric model with knot selection.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::metrics::{imse, mttf_metrics, SelectionCount, StudyMetrics};
use super::parametric::{fit_parametric, ParametricModel};
use super::{generate_parametric_data, replicate_rng, SimulationScenario, Truth};
use crate::dataset::StressSet;
use crate::error::{Error, Result};
use crate::fit::aic;
use crate::knotsel::select_spec;
use crate::reliability::{mttf, Threshold};

const MODELS: [&str; 3] = ["true", "wrong", "semiparametric"];

struct Record {
    paths: [Vec<f64>; 3],
    mttf: [Option<f64>; 3],
    /// Same query with the threshold taken as an absolute level.
    mttf_absolute: [Option<f64>; 3],
    selected: (usize, usize),
    aic_checked: usize,
    aic_violations: usize,
}

/// Runs `datasets` replicates of the misspecification study.
pub fn run_misspec_study(scenario: &SimulationScenario, datasets: usize) -> Result<StudyMetrics> {
    scenario.validate()?;
    let Truth::Parametric { .. } = scenario.truth else {
        return Err(Error::InvalidArgument(
            "misspecification study needs a parametric truth".into(),
        ));
    };
    let hot = scenario.temps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let times = scenario.path_times();
    let truth_path = scenario.truth_baseline(&times)?;
    let query = scenario.mttf.clone();
    let truth_mttf = match (&query, &scenario.truth) {
        (Some(q), Truth::Parametric { b0, b1, b2, .. }) => {
            let x = crate::dataset::arrhenius_x(q.temp_use, scenario.kelvin_offset)?;
            let at = |d: f64| (d - b0) / (b1 * (b2 * x).exp()) / q.time_divisor;
            let level = if q.relative { q.threshold * b0 } else { q.threshold };
            Some((at(level), at(q.threshold)))
        }
        _ => None,
    };

    let records: Vec<Option<Record>> = (0..datasets)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<Record> {
                let data = generate_parametric_data(scenario, &mut replicate_rng(scenario.seed, r))?;
                let offset = scenario.kelvin_offset;
                let linear = fit_parametric(ParametricModel::Linear, &data, offset)?;
                let sigmoid = fit_parametric(ParametricModel::Sigmoid, &data, offset)?;
                let stresses = StressSet::new(&data, offset)?;
                let report = select_spec(&data, &stresses, &scenario.selection)?;
                let semi = &report.winner_fit;

                let para_path = |f: &super::ParametricFit| -> Result<Vec<f64>> {
                    times.iter().map(|&t| f.mean(hot, t)).collect()
                };
                let semi_path = times
                    .iter()
                    .map(|&t| semi.baseline(t.clamp(semi.spec.boundary[0], semi.spec.boundary[1])))
                    .collect::<Result<Vec<_>>>()?;

                let mut m = [None; 3];
                let mut m_abs = [None; 3];
                if let Some(q) = &query {
                    let get = |levels: [f64; 2], semi_threshold: Threshold| {
                        [
                            linear.mttf(q.temp_use, levels[0]).ok().map(|t| t / q.time_divisor),
                            sigmoid.mttf(q.temp_use, levels[1]).ok().map(|t| t / q.time_divisor),
                            mttf(semi, q.temp_use, semi_threshold)
                                .ok()
                                .map(|e| e.m_f / q.time_divisor),
                        ]
                    };
                    m_abs = get([q.threshold; 2], Threshold::Absolute(q.threshold));
                    m = if q.relative {
                        get(
                            [q.threshold * linear.params[0], q.threshold * sigmoid.params[0]],
                            Threshold::Relative(q.threshold),
                        )
                    } else {
                        m_abs
                    };
                }
                let checks = report.candidates.len() + 1;
                let violations = report
                    .candidates
                    .iter()
                    .filter(|c| c.aic != aic(c.loglik, c.edf))
                    .count()
                    + usize::from(semi.aic != aic(semi.loglik, semi.p_u + 3));
                Ok(Record {
                    paths: [para_path(&linear)?, para_path(&sigmoid)?, semi_path],
                    mttf: m,
                    mttf_absolute: m_abs,
                    selected: (semi.spec.degree, semi.spec.interior_knots.len()),
                    aic_checked: checks,
                    aic_violations: violations,
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
    out.aic_checked = ok.iter().map(|r| r.aic_checked).sum();
    out.aic_violations = ok.iter().map(|r| r.aic_violations).sum();
    for (i, model) in MODELS.iter().enumerate() {
        let paths: Vec<Vec<f64>> = ok.iter().map(|r| r.paths[i].clone()).collect();
        out.imse.push(imse(model, &times, &truth_path, &paths));
        if let Some((truth, _)) = truth_mttf {
            let vals: Vec<f64> = ok.iter().filter_map(|r| r.mttf[i]).collect();
            out.mttf.push(mttf_metrics(model, truth, &vals));
        }
    }
    if let (Some(q), Some((_, truth))) = (&query, truth_mttf) {
        if q.relative {
            for (i, model) in MODELS.iter().enumerate() {
                let vals: Vec<f64> = ok.iter().filter_map(|r| r.mttf_absolute[i]).collect();
                out.mttf.push(mttf_metrics(&format!("{model}_absolute"), truth, &vals));
            }
        }
    }
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for r in &ok {
        *counts.entry(r.selected).or_default() += 1;
    }
    out.selection = counts
        .into_iter()
        .map(|((degree, n_interior), count)| SelectionCount {
            degree,
            n_interior,
            count,
        })
        .collect();
    Ok(out)
}
