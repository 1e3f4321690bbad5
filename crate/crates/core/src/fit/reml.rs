//! Approximate REML for `(sigma, rho)` with the mean coefficients held fixed.
//!
//! For fixed `rho` the criterion is maximized in closed form by
//! `sigma^2 = r' R^{-1} r / (n - p_u)`; substituting leaves a scalar function
//! of `rho`
//!
//! `-(n - p_u) log sigma^2(rho) - log|R| - log|X_u' R^{-1} X_u| - (n - p_u)`,
//!
//! which is maximized by a grid scan followed by Brent refinement.

use nalgebra::DMatrix;

use super::gls::tie_groups;
use super::system::{block_weight, BlockedSystem};
use crate::covariance::{block_logdet, reml_rho_bounds, ErrorStructure};
use crate::error::{Error, Result};
use crate::optimize::grid_brent_max;

/// REML criterion for one `gamma`, reduced to per-size sufficient statistics.
#[derive(Debug, Clone)]
pub(crate) struct RemlProblem {
    n: usize,
    p_u: usize,
    within: f64,
    /// (block size, block count, sum of squared block-mean residuals)
    sizes: Vec<(usize, usize, f64)>,
    e_xx: Vec<f64>,
    h_xx: Vec<Vec<f64>>,
}

impl RemlProblem {
    pub fn new(sys: &BlockedSystem, gamma: &[f64]) -> Self {
        let groups = tie_groups(gamma);
        let merged = sys.merge_columns(&groups);
        let (within, means) = sys.residual_parts(gamma);
        let sizes = merged
            .groups
            .iter()
            .zip(&means)
            .map(|((n, count, _), (_, d))| (*n, *count, *d))
            .collect();
        RemlProblem {
            n: sys.n,
            p_u: groups.len(),
            within,
            sizes,
            e_xx: merged.e_xx.as_slice().to_vec(),
            h_xx: merged
                .groups
                .iter()
                .map(|(_, _, h)| h.as_slice().to_vec())
                .collect(),
        }
    }

    pub fn p_u(&self) -> usize {
        self.p_u
    }

    pub fn dof(&self) -> usize {
        self.n.saturating_sub(self.p_u)
    }

    /// `r' R^{-1} r`.
    pub fn quad(&self, rho: f64) -> f64 {
        let mut q = self.within / (1.0 - rho);
        for &(n, _, d) in &self.sizes {
            q += block_weight(n, rho) * d;
        }
        q
    }

    pub fn logdet_r(&self, rho: f64) -> f64 {
        self.sizes
            .iter()
            .map(|&(n, count, _)| count as f64 * block_logdet(n, rho).unwrap_or(f64::NAN))
            .sum()
    }

    fn logdet_gram(&self, rho: f64) -> f64 {
        let k = self.p_u;
        let mut buf: Vec<f64> = self.e_xx.iter().map(|v| v / (1.0 - rho)).collect();
        for (&(n, _, _), h) in self.sizes.iter().zip(&self.h_xx) {
            let w = block_weight(n, rho);
            for (b, v) in buf.iter_mut().zip(h) {
                *b += w * v;
            }
        }
        cholesky_logdet(&mut buf, k).unwrap_or(f64::NAN)
    }

    pub fn sigma(&self, rho: f64) -> f64 {
        (self.quad(rho).max(0.0) / self.dof() as f64).sqrt()
    }

    pub fn objective(&self, rho: f64) -> f64 {
        let m = self.dof() as f64;
        let s2 = self.quad(rho) / m;
        -m * s2.ln() - self.logdet_r(rho) - self.logdet_gram(rho) - m
    }

    /// Maximizer of [`RemlProblem::objective`] on `bounds`.
    pub fn maximize(&self, bounds: (f64, f64), grid: usize, xtol: f64) -> f64 {
        grid_brent_max(|r| self.objective(r), bounds.0, bounds.1, grid, xtol).0
    }

    /// Profile Gaussian log-likelihood at `(sigma(rho), rho)`, or `+inf` when
    /// the residuals vanish.
    pub fn loglik(&self, rho: f64) -> (f64, f64) {
        let n = self.n as f64;
        let q = self.quad(rho).max(0.0);
        let sigma = self.sigma(rho);
        if !(sigma > 0.0) {
            return (0.0, f64::INFINITY);
        }
        let ll = -0.5 * n * (2.0 * std::f64::consts::PI).ln()
            - n * sigma.ln()
            - 0.5 * self.logdet_r(rho)
            - 0.5 * q / (sigma * sigma);
        (sigma, ll)
    }
}

/// In-place Cholesky of a row-major `k x k` symmetric matrix; returns `log|A|`.
fn cholesky_logdet(a: &mut [f64], k: usize) -> Option<f64> {
    let mut acc = 0.0;
    for j in 0..k {
        let mut d = a[j * k + j];
        for m in 0..j {
            d -= a[j * k + m] * a[j * k + m];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        acc += d.ln();
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= a[i * k + m] * a[j * k + m];
            }
            a[i * k + j] = s / d;
        }
    }
    Some(2.0 * acc)
}

/// Closed-form REML scale `sqrt(r' R^{-1} r / (n - p_u))`.
pub fn reml_sigma(residual: &[f64], structure: &ErrorStructure, p_u: usize) -> Result<f64> {
    let n = structure.n();
    if n <= p_u {
        return Err(Error::InsufficientData(format!(
            "{n} readings cannot support {p_u} coefficients and a scale"
        )));
    }
    Ok((structure.quad_form(residual)? / (n - p_u) as f64).sqrt())
}

/// REML criterion at `rho` for coefficients `gamma` on design `x`.
pub fn reml_objective(
    x: &DMatrix<f64>,
    y: &[f64],
    gamma: &[f64],
    block_sizes: &[usize],
    rho: f64,
) -> Result<f64> {
    let sys = BlockedSystem::from_readings(x, y, block_sizes)?;
    let prob = RemlProblem::new(&sys, gamma);
    check_dof(&prob)?;
    Ok(prob.objective(rho))
}

/// REML estimate of the within-block correlation for fixed `gamma`.
///
/// `bounds` defaults to the nonnegative positive-definite range with a small
/// margin. When every block is a singleton `rho` is not identified and 0 is
/// returned.
pub fn reml_rho(
    x: &DMatrix<f64>,
    y: &[f64],
    gamma: &[f64],
    block_sizes: &[usize],
    bounds: Option<(f64, f64)>,
) -> Result<f64> {
    let sys = BlockedSystem::from_readings(x, y, block_sizes)?;
    if sys.max_block() < 2 {
        log::warn!("all blocks are singletons; rho fixed at 0");
        return Ok(0.0);
    }
    let prob = RemlProblem::new(&sys, gamma);
    check_dof(&prob)?;
    let bounds = bounds.unwrap_or_else(|| reml_rho_bounds(sys.max_block()));
    Ok(prob.maximize(bounds, 33, 1e-9))
}

fn check_dof(prob: &RemlProblem) -> Result<()> {
    if prob.dof() == 0 {
        return Err(Error::InsufficientData(
            "no residual degrees of freedom".into(),
        ));
    }
    Ok(())
}
