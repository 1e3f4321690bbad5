//! The semi-parametric estimator.
//!
//! For a fixed acceleration slope `beta` the monotone GLS step for `gamma`
//! alternates with REML for `(sigma, rho)` until the iterates settle
//! ([`fit_given_beta`]). The profile log-likelihood in `beta` is then
//! maximized by a coarse grid and golden-section refinement ([`profile_fit`]).

mod gls;
mod reml;
mod system;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gls::{monotone_gls, solve_monotone_qp, tie_groups, unique_design, GlsSolution};
pub use reml::{reml_objective, reml_rho, reml_sigma};

use crate::bspline::{cell_design, default_spec, eta, SplineBasis, SplineSpec};
use crate::covariance::reml_rho_bounds;
use crate::dataset::{arrhenius_x, AddtDataset, StressSet};
use crate::error::{Error, Result};
use crate::linalg::{lstsq, spd_solve};
use crate::optimize::golden_section_max;
use reml::RemlProblem;
use system::BlockedSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControls {
    pub beta_range: [f64; 2],
    pub beta_grid: usize,
    /// Final bracket width of the golden-section refinement.
    pub beta_tol: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest change in `(gamma, sigma, rho)`.
    pub tol: f64,
    pub rho_grid: usize,
    pub rho_tol: f64,
}

impl Default for FitControls {
    fn default() -> Self {
        FitControls {
            beta_range: [0.0, 5.0],
            beta_grid: 21,
            beta_tol: 1e-4,
            max_iter: 200,
            tol: 1e-7,
            rho_grid: 33,
            rho_tol: 1e-9,
        }
    }
}

impl FitControls {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.beta_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta range [{lo}, {hi}] must satisfy 0 <= lo <= hi < inf"
            )));
        }
        if self.beta_grid < 2 && hi > lo {
            return Err(Error::InvalidArgument("beta grid needs at least 2 points".into()));
        }
        if !(self.beta_tol > 0.0 && self.tol > 0.0 && self.rho_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// How the spline basis is chosen for each candidate `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnotPolicy {
    /// Default quantile knots recomputed on the warped scale at every `beta`.
    Adaptive { degree: usize, n_interior: usize },
    /// One spec shared by all `beta`.
    Fixed { spec: SplineSpec },
}

impl KnotPolicy {
    pub fn spec_at(&self, data: &AddtDataset, stresses: &StressSet, beta: f64) -> Result<SplineSpec> {
        match self {
            KnotPolicy::Adaptive { degree, n_interior } => {
                default_spec(data, stresses, beta, *degree, *n_interior)
            }
            KnotPolicy::Fixed { spec } => Ok(spec.clone()),
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            KnotPolicy::Adaptive { degree, .. } => *degree,
            KnotPolicy::Fixed { spec } => spec.degree,
        }
    }
}

/// Estimates for one fixed `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub spec: SplineSpec,
    pub gamma: Vec<f64>,
    pub sigma: f64,
    pub rho: f64,
    pub p_u: usize,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residuals vanish, so `sigma = 0` and the likelihood is unbounded.
    pub degenerate: bool,
    pub loglik_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub beta: f64,
    /// `None` when the fit at this `beta` failed.
    pub loglik: Option<f64>,
}

/// A fitted model at the profile maximizer `beta_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub gamma: Vec<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub spec: SplineSpec,
    pub p_u: usize,
    pub loglik: f64,
    pub edf: usize,
    pub aic: f64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    /// The maximizer sits on an end of `beta_range`.
    pub boundary_max: bool,
    pub degenerate: bool,
    pub knot_policy: KnotPolicy,
    pub kelvin_offset: f64,
    pub x_max: f64,
    pub max_temp_c: f64,
    /// Lowest observed reading; paths are not extrapolated below it.
    pub y_floor: f64,
    pub time_unit: String,
    pub beta_grid_trace: Vec<TracePoint>,
    pub beta_refine_trace: Vec<TracePoint>,
}

/// `-2 loglik + 2 edf`.
pub fn aic(loglik: f64, edf: usize) -> f64 {
    -2.0 * loglik + 2.0 * edf as f64
}

impl ModelFit {
    /// `(gamma', beta, sigma, rho)'`.
    pub fn theta_hat(&self) -> Vec<f64> {
        let mut t = self.gamma.clone();
        t.extend([self.beta, self.sigma, self.rho]);
        t
    }

    /// Stress distance `x_max - x(temp)` of an arbitrary temperature.
    pub fn stress_distance(&self, temp_c: f64) -> Result<f64> {
        Ok(self.x_max - arrhenius_x(temp_c, self.kelvin_offset)?)
    }

    /// Baseline path value at warped time `z`.
    pub fn baseline(&self, z: f64) -> Result<f64> {
        self.spec.value(&self.gamma, z)
    }

    /// Fitted mean per reading in dataset order.
    pub fn fitted(&self, data: &AddtDataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(data.n());
        for cell in data.cells() {
            let s = self.stress_distance(cell.temp_c)?;
            let z = eta(cell.time, s, self.beta).clamp(self.spec.boundary[0], self.spec.boundary[1]);
            let v = self.baseline(z)?;
            out.extend(std::iter::repeat_n(v, cell.readings.len()));
        }
        Ok(out)
    }

    pub fn residuals(&self, data: &AddtDataset) -> Result<Vec<f64>> {
        let fitted = self.fitted(data)?;
        Ok(data.responses().iter().zip(fitted).map(|(y, f)| y - f).collect())
    }
}

fn dataset_system(
    data: &AddtDataset,
    stresses: &StressSet,
    spec: &SplineSpec,
    beta: f64,
) -> Result<BlockedSystem> {
    let basis = SplineBasis::new(spec)?;
    let rows = cell_design(data, stresses, &basis, beta)?;
    Ok(BlockedSystem::from_shared_rows(
        &rows,
        basis.n_basis(),
        data.cells().map(|c| c.readings),
    ))
}

/// Alternating monotone GLS / REML fit with `beta` and the basis fixed.
pub fn fit_given_beta(
    data: &AddtDataset,
    stresses: &StressSet,
    spec: &SplineSpec,
    beta: f64,
    controls: &FitControls,
) -> Result<BetaFit> {
    if !(beta.is_finite()) {
        return Err(Error::InfeasibleBeta {
            beta,
            reason: "not finite".into(),
        });
    }
    let sys = dataset_system(data, stresses, spec, beta)?;
    let it = iterate(&sys, controls)?;
    Ok(BetaFit {
        beta,
        spec: spec.clone(),
        gamma: it.gamma,
        sigma: it.sigma,
        rho: it.rho,
        p_u: it.p_u,
        loglik: it.loglik,
        iterations: it.iterations,
        converged: it.converged,
        degenerate: it.degenerate,
        loglik_history: it.history,
    })
}

struct Iterate {
    gamma: Vec<f64>,
    sigma: f64,
    rho: f64,
    p_u: usize,
    loglik: f64,
    iterations: usize,
    converged: bool,
    degenerate: bool,
    history: Vec<f64>,
}

/// Starting `(sigma, rho)` from the unconstrained least-squares fit: residual
/// RMS and the moment estimate of the within-block correlation.
fn initial_values(sys: &BlockedSystem, bounds: (f64, f64), identifiable: bool) -> (f64, f64) {
    let g = sys.gram(0.0);
    let c = sys.rhs(0.0);
    let gamma: DVector<f64> = spd_solve(&g, &c)
        .or_else(|| lstsq(&g, &c))
        .unwrap_or_else(|| DVector::zeros(sys.p));
    let gamma = gamma.as_slice();
    let sigma0 = (sys.quad_form(gamma, 0.0) / sys.n as f64).sqrt();
    if !identifiable {
        return (sigma0, 0.0);
    }
    let pairs: f64 = sys.blocks.iter().map(|b| (b.n * (b.n - 1)) as f64).sum();
    let (within, _) = sys.residual_parts(gamma);
    let rho0 = if sigma0 > 0.0 {
        (sys.pair_products(gamma) - within) / (sigma0 * sigma0 * pairs)
    } else {
        0.0
    };
    let rho0 = if rho0.is_finite() { rho0 } else { 0.0 };
    (sigma0, rho0.clamp(bounds.0, bounds.1))
}

fn iterate(sys: &BlockedSystem, controls: &FitControls) -> Result<Iterate> {
    if sys.n <= sys.p {
        return Err(Error::InsufficientData(format!(
            "{} readings for {} basis functions",
            sys.n, sys.p
        )));
    }
    let max_block = sys.max_block();
    let identifiable = max_block >= 2;
    let bounds = reml_rho_bounds(max_block);
    let (mut sigma, mut rho) = initial_values(sys, bounds, identifiable);
    let mut gamma = vec![f64::NAN; sys.p];
    let mut history = Vec::new();
    let mut best: Option<Iterate> = None;

    for k in 1..=controls.max_iter {
        let sol = gls::solve_system(sys, rho)?;
        let prob = RemlProblem::new(sys, &sol.gamma);
        if prob.dof() == 0 {
            return Err(Error::InsufficientData("no residual degrees of freedom".into()));
        }
        let rho_new = if identifiable && prob.quad(rho) > 0.0 {
            prob.maximize(bounds, controls.rho_grid, controls.rho_tol)
        } else {
            rho
        };
        let (sigma_new, ll) = prob.loglik(rho_new);
        let change = sol
            .gamma
            .iter()
            .zip(&gamma)
            .map(|(a, b)| (a - b).abs())
            .fold((sigma_new - sigma).abs().max((rho_new - rho).abs()), |m, d| {
                if d.is_nan() { f64::INFINITY } else { m.max(d) }
            });
        gamma = sol.gamma;
        sigma = sigma_new;
        rho = rho_new;
        history.push(ll);
        let converged = change < controls.tol;
        let current = Iterate {
            gamma: gamma.clone(),
            sigma,
            rho,
            p_u: prob.p_u(),
            loglik: ll,
            iterations: k,
            converged,
            degenerate: !(sigma > 0.0),
            history: Vec::new(),
        };
        if converged {
            return Ok(Iterate { history, ..current });
        }
        if best.as_ref().is_none_or(|b| ll > b.loglik) {
            best = Some(current);
        }
    }
    log::warn!("alternating fit did not converge in {} iterations", controls.max_iter);
    let mut out = best.expect("at least one iteration");
    out.iterations = controls.max_iter;
    out.converged = false;
    out.history = history;
    Ok(out)
}

/// Maximizes the profile log-likelihood in `beta` over `controls.beta_range`.
pub fn profile_fit(
    data: &AddtDataset,
    stresses: &StressSet,
    policy: &KnotPolicy,
    controls: &FitControls,
) -> Result<ModelFit> {
    controls.validate()?;
    let eval = |beta: f64| -> Result<BetaFit> {
        let spec = policy.spec_at(data, stresses, beta)?;
        fit_given_beta(data, stresses, &spec, beta, controls)
    };
    let [lo, hi] = controls.beta_range;
    let m = if hi > lo { controls.beta_grid } else { 1 };
    let step = if m > 1 { (hi - lo) / (m - 1) as f64 } else { 0.0 };
    let grid: Vec<f64> = (0..m)
        .map(|i| if i + 1 == m { hi } else { lo + step * i as f64 })
        .collect();
    let results: Vec<Result<BetaFit>> = grid.par_iter().map(|&b| eval(b)).collect();

    let beta_grid_trace: Vec<TracePoint> = grid
        .iter()
        .zip(&results)
        .map(|(&beta, r)| TracePoint {
            beta,
            loglik: r.as_ref().ok().map(|f| f.loglik),
        })
        .collect();
    let mut best_idx = None;
    let mut last_err = None;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(f) => {
                if best_idx.is_none_or(|j: usize| f.loglik > fit_ll(&results[j])) {
                    best_idx = Some(i);
                }
            }
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    let Some(best_idx) = best_idx else {
        return Err(Error::AllCandidatesFailed(format!(
            "no feasible beta on the grid: {}",
            last_err.unwrap_or_default()
        )));
    };
    let mut results = results;
    let mut best = results.swap_remove(best_idx).expect("checked above");

    let mut beta_refine_trace = Vec::new();
    if m > 1 {
        let a = grid[best_idx.saturating_sub(1)];
        let b = grid[(best_idx + 1).min(m - 1)];
        golden_section_max(
            |beta| match eval(beta) {
                Ok(f) => {
                    let ll = f.loglik;
                    beta_refine_trace.push(TracePoint { beta, loglik: Some(ll) });
                    if ll > best.loglik {
                        best = f;
                    }
                    ll
                }
                Err(_) => {
                    beta_refine_trace.push(TracePoint { beta, loglik: None });
                    f64::NEG_INFINITY
                }
            },
            a,
            b,
            controls.beta_tol,
        );
    }

    let edge = 2.0 * controls.beta_tol;
    let boundary_max = m > 1 && (best.beta - lo < edge || hi - best.beta < edge);
    if boundary_max {
        log::warn!("profile maximum at beta = {} lies on the search boundary", best.beta);
    }
    if !best.converged {
        log::warn!("fit at beta_hat = {} did not converge", best.beta);
    }
    let edf = best.p_u + 3;
    Ok(ModelFit {
        aic: aic(best.loglik, edf),
        edf,
        n: data.n(),
        converged: best.converged,
        iterations: best.iterations,
        boundary_max,
        degenerate: best.degenerate,
        knot_policy: policy.clone(),
        kelvin_offset: stresses.kelvin_offset,
        x_max: stresses.x_max,
        max_temp_c: data.max_temperature(),
        y_floor: data
            .responses()
            .into_iter()
            .fold(f64::INFINITY, f64::min),
        time_unit: data.time_unit().to_string(),
        beta_grid_trace,
        beta_refine_trace,
        gamma: best.gamma,
        beta: best.beta,
        sigma: best.sigma,
        rho: best.rho,
        spec: best.spec,
        p_u: best.p_u,
        loglik: best.loglik,
    })
}

fn fit_ll(r: &Result<BetaFit>) -> f64 {
    r.as_ref().map(|f| f.loglik).unwrap_or(f64::NEG_INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Cell, Level};

    fn toy(noise: &[f64]) -> AddtDataset {
        let temps = [50.0, 65.0, 80.0];
        let times = [0.0, 200.0, 600.0, 1500.0, 3000.0];
        let mut k = 0;
        let levels = temps
            .iter()
            .enumerate()
            .map(|(i, &t)| Level {
                temp_c: t,
                cells: times
                    .iter()
                    .map(|&tau| Cell {
                        time: tau,
                        readings: (0..3)
                            .map(|_| {
                                k += 1;
                                1.0 - 0.6 * (1.0 - (-tau * (0.3 + 0.5 * i as f64) / 2000.0).exp())
                                    + noise[k % noise.len()]
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        AddtDataset::new(levels, "hours").unwrap()
    }

    #[test]
    fn aic_identity_and_monotone_output() {
        let data = toy(&[0.01, -0.02, 0.005, 0.013, -0.007]);
        let st = StressSet::new(&data, 273.16).unwrap();
        let policy = KnotPolicy::Adaptive { degree: 2, n_interior: 2 };
        let fit = profile_fit(&data, &st, &policy, &FitControls::default()).unwrap();
        assert_eq!(fit.aic, -2.0 * fit.loglik + 2.0 * (fit.p_u + 3) as f64);
        assert!(fit.gamma.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.sigma > 0.0 && fit.rho >= 0.0 && fit.rho < 1.0);
        for t in &fit.beta_grid_trace {
            if let Some(ll) = t.loglik {
                assert!(fit.loglik >= ll);
            }
        }
    }

    #[test]
    fn convergence_certificate() {
        let data = toy(&[0.01, -0.02, 0.005, 0.013, -0.007, 0.002, -0.011]);
        let st = StressSet::new(&data, 273.16).unwrap();
        let spec = default_spec(&data, &st, 1.0, 2, 2).unwrap();
        let f = fit_given_beta(&data, &st, &spec, 1.0, &FitControls::default()).unwrap();
        assert!(f.converged);
        let h = &f.loglik_history;
        if h.len() >= 2 {
            assert!(h[h.len() - 2] - h[h.len() - 1] < 1e-9);
        }
    }

    #[test]
    fn controls_are_validated() {
        let bad = FitControls {
            beta_range: [-1.0, 2.0],
            ..FitControls::default()
        };
        assert!(bad.validate().is_err());
    }
}
