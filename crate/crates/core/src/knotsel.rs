//! AIC-driven choice of spline degree and knots.
//!
//! Per degree, the number of default quantile knots is chosen first; the
//! winning knots are then frozen and deleted one at a time while a deletion
//! lowers the AIC. Every candidate is refitted with `beta` re-profiled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::SplineSpec;
use crate::dataset::{AddtDataset, StressSet};
use crate::error::{Error, Result};
use crate::fit::{aic, profile_fit, FitControls, KnotPolicy, ModelFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionControls {
    pub degrees: Vec<usize>,
    pub n_min: usize,
    pub n_max: usize,
    pub fit: FitControls,
}

impl Default for SelectionControls {
    fn default() -> Self {
        SelectionControls {
            degrees: vec![1, 2, 3],
            n_min: 1,
            n_max: 5,
            fit: FitControls::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    KnotCount,
    Frozen,
    Deletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub stage: Stage,
    pub degree: usize,
    /// Knots at the candidate's own `beta_hat`.
    pub interior_knots: Vec<f64>,
    pub beta: f64,
    pub edf: usize,
    pub loglik: f64,
    pub aic: f64,
}

impl Candidate {
    fn from_fit(stage: Stage, fit: &ModelFit) -> Self {
        Candidate {
            stage,
            degree: fit.spec.degree,
            interior_knots: fit.spec.interior_knots.clone(),
            beta: fit.beta,
            edf: fit.edf,
            loglik: fit.loglik,
            aic: fit.aic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deletion {
    pub degree: usize,
    pub removed_knot: f64,
    pub aic_before: f64,
    pub aic_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSearchReport {
    pub candidates: Vec<Candidate>,
    pub winner: SplineSpec,
    pub winner_fit: ModelFit,
    pub deletion_trace: Vec<Deletion>,
    /// Chosen number of default knots per searched degree.
    pub knot_counts: Vec<(usize, usize)>,
}

/// `-2 loglik + 2 (p_u + 3)`.
pub fn aic_of_fit(fit: &ModelFit) -> f64 {
    aic(fit.loglik, fit.p_u + 3)
}

#[derive(Debug, Clone)]
pub struct KnotCountResult {
    pub n_opt: usize,
    pub fit: ModelFit,
    pub candidates: Vec<Candidate>,
}

fn fold_best(best: &mut Option<ModelFit>, fit: ModelFit) {
    if best.as_ref().is_none_or(|b| fit.aic < b.aic) {
        *best = Some(fit);
    }
}

/// Step 1: the number of default quantile knots in `n_min..=n_max` that
/// minimizes AIC for `degree`.
pub fn select_knot_count(
    data: &AddtDataset,
    stresses: &StressSet,
    degree: usize,
    controls: &SelectionControls,
) -> Result<KnotCountResult> {
    if controls.n_min > controls.n_max {
        return Err(Error::InvalidArgument(format!(
            "knot range {}..={} is empty",
            controls.n_min, controls.n_max
        )));
    }
    let fits: Vec<(usize, Result<ModelFit>)> = (controls.n_min..=controls.n_max)
        .into_par_iter()
        .map(|n| {
            let policy = KnotPolicy::Adaptive {
                degree,
                n_interior: n,
            };
            (n, profile_fit(data, stresses, &policy, &controls.fit))
        })
        .collect();
    let mut candidates = Vec::new();
    let mut best: Option<(usize, ModelFit)> = None;
    let mut last_err = String::new();
    for (n, r) in fits {
        match r {
            Ok(fit) => {
                candidates.push(Candidate::from_fit(Stage::KnotCount, &fit));
                if best.as_ref().is_none_or(|(_, b)| fit.aic < b.aic) {
                    best = Some((n, fit));
                }
            }
            Err(e) => last_err = format!("N = {n}: {e}"),
        }
    }
    let (n_opt, fit) = best.ok_or_else(|| {
        Error::AllCandidatesFailed(format!("degree {degree}: {last_err}"))
    })?;
    Ok(KnotCountResult {
        n_opt,
        fit,
        candidates,
    })
}

#[derive(Debug, Clone)]
pub struct DeletionResult {
    pub spec: SplineSpec,
    pub fit: ModelFit,
    pub trace: Vec<Deletion>,
    pub candidates: Vec<Candidate>,
}

/// Step 2: greedy backward deletion of interior knots from a frozen spec.
pub fn backward_delete(
    data: &AddtDataset,
    stresses: &StressSet,
    spec: &SplineSpec,
    controls: &FitControls,
) -> Result<DeletionResult> {
    let fit_fixed = |s: &SplineSpec| {
        profile_fit(data, stresses, &KnotPolicy::Fixed { spec: s.clone() }, controls)
    };
    let mut current = fit_fixed(spec)?;
    let mut candidates = vec![Candidate::from_fit(Stage::Frozen, &current)];
    let mut trace = Vec::new();
    loop {
        let spec_now = current.spec.clone();
        let trials: Vec<(usize, Result<ModelFit>)> = (0..spec_now.interior_knots.len())
            .into_par_iter()
            .map(|i| (i, fit_fixed(&spec_now.without_knot(i))))
            .collect();
        let mut best: Option<(usize, ModelFit)> = None;
        for (i, r) in trials {
            if let Ok(fit) = r {
                candidates.push(Candidate::from_fit(Stage::Deletion, &fit));
                if best.as_ref().is_none_or(|(_, b)| fit.aic < b.aic) {
                    best = Some((i, fit));
                }
            }
        }
        match best {
            Some((i, fit)) if fit.aic < current.aic => {
                trace.push(Deletion {
                    degree: spec_now.degree,
                    removed_knot: spec_now.interior_knots[i],
                    aic_before: current.aic,
                    aic_after: fit.aic,
                });
                current = fit;
            }
            _ => break,
        }
    }
    Ok(DeletionResult {
        spec: current.spec.clone(),
        fit: current,
        trace,
        candidates,
    })
}

/// Both steps for every degree; the winner has the smallest AIC among all
/// evaluated candidates.
pub fn select_spec(
    data: &AddtDataset,
    stresses: &StressSet,
    controls: &SelectionControls,
) -> Result<KnotSearchReport> {
    if controls.degrees.is_empty() {
        return Err(Error::InvalidArgument("no spline degrees to search".into()));
    }
    let mut candidates = Vec::new();
    let mut deletion_trace = Vec::new();
    let mut knot_counts = Vec::new();
    let mut best: Option<ModelFit> = None;
    let mut last_err = String::new();
    for &q in &controls.degrees {
        let count = match select_knot_count(data, stresses, q, controls) {
            Ok(c) => c,
            Err(e) => {
                last_err = e.to_string();
                continue;
            }
        };
        knot_counts.push((q, count.n_opt));
        candidates.extend(count.candidates);
        let spec = count.fit.spec.clone();
        fold_best(&mut best, count.fit);
        match backward_delete(data, stresses, &spec, &controls.fit) {
            Ok(del) => {
                candidates.extend(del.candidates);
                deletion_trace.extend(del.trace);
                fold_best(&mut best, del.fit);
            }
            Err(e) => log::warn!("knot deletion for degree {q} failed: {e}"),
        }
    }
    let winner_fit = best.ok_or_else(|| Error::AllCandidatesFailed(last_err))?;
    Ok(KnotSearchReport {
        candidates,
        winner: winner_fit.spec.clone(),
        winner_fit,
        deletion_trace,
        knot_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aic_formula() {
        assert!((aic(38.7264, 5) - -67.4528).abs() < 1e-12);
        assert_eq!(aic(10.0, 5) + 2.0, aic(10.0, 6));
    }
}
