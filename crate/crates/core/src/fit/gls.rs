//! Monotone-constrained generalized least squares.
//!
//! The constraints `gamma_l <= gamma_{l-1}` become nonnegativity after the
//! change of variables `z = (gamma_1, gamma_1 - gamma_2, ..., gamma_{p-1} - gamma_p)`,
//! so the QP is solved by a Lawson–Hanson active-set iteration on the normal
//! equations with `z_0` always free. Each active constraint ties two adjacent
//! coefficients; the passive subproblem is the GLS fit with tied columns summed.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::system::BlockedSystem;
use crate::covariance::ErrorStructure;
use crate::error::{Error, Result};
use crate::linalg::spd_solve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsSolution {
    pub gamma: Vec<f64>,
    /// `active[l]` is true when `gamma_{l+1} = gamma_l` is enforced.
    pub active: Vec<bool>,
    /// Largest KKT violation of the quadratic objective.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Minimizes `gamma' G gamma - 2 c' gamma` subject to nonincreasing `gamma`.
pub fn solve_monotone_qp(g: &DMatrix<f64>, c: &DVector<f64>) -> Result<GlsSolution> {
    let p = c.len();
    if p == 0 {
        return Err(Error::InvalidArgument("empty coefficient vector".into()));
    }
    let unsupported: Vec<usize> = (0..p).filter(|&l| !(g[(l, l)] > 0.0)).collect();
    if !unsupported.is_empty() {
        return Err(Error::RankDeficient {
            columns: unsupported,
        });
    }

    // gamma = T z with T[l][0] = 1 and T[l][m] = -1 for 1 <= m <= l.
    let t = DMatrix::from_fn(p, p, |l, m| {
        if m == 0 {
            1.0
        } else if m <= l {
            -1.0
        } else {
            0.0
        }
    });
    let h = t.transpose() * g * &t;
    let f = t.transpose() * c;
    let scale = 1.0 + f.amax() + h.amax();
    let tol = 1e-12 * scale;

    let mut passive = vec![false; p];
    passive[0] = true;
    let mut z = solve_passive(&h, &f, &passive)?;
    let mut iterations = 0;
    let max_outer = 3 * p + 10;

    'outer: for _ in 0..max_outer {
        iterations += 1;
        let w = &f - &h * &z;
        let candidate = (1..p)
            .filter(|&m| !passive[m])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        if w[j] <= tol {
            break;
        }
        passive[j] = true;
        for _ in 0..max_outer {
            let s = solve_passive(&h, &f, &passive)?;
            let blocked: Vec<usize> = (1..p).filter(|&m| passive[m] && s[m] <= 0.0).collect();
            if blocked.is_empty() {
                z = s;
                continue 'outer;
            }
            let alpha = blocked
                .iter()
                .map(|&m| z[m] / (z[m] - s[m]))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            z += (s - &z) * alpha;
            for m in 1..p {
                if passive[m] && z[m] <= tol.max(1e-15 * z[0].abs()) {
                    passive[m] = false;
                    z[m] = 0.0;
                }
            }
        }
        return Err(Error::Optimization(
            "active-set iteration did not settle".into(),
        ));
    }

    let gamma = &t * &z;
    let w = &f - &h * &z;
    let kkt_residual = (0..p)
        .map(|m| if passive[m] { w[m].abs() } else { w[m].max(0.0) })
        .fold(0.0f64, f64::max);
    Ok(GlsSolution {
        gamma: gamma.iter().copied().collect(),
        active: passive[1..].iter().map(|&on| !on).collect(),
        kkt_residual,
        iterations,
    })
}

fn solve_passive(h: &DMatrix<f64>, f: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])]);
    let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| f[i]));
    let sol = spd_solve(&sub, &rhs).ok_or_else(|| Error::RankDeficient {
        columns: idx.clone(),
    })?;
    let mut z = DVector::zeros(passive.len());
    for (a, &i) in idx.iter().enumerate() {
        z[i] = sol[a];
    }
    Ok(z)
}

pub(crate) fn solve_system(sys: &BlockedSystem, rho: f64) -> Result<GlsSolution> {
    let unsupported = sys.unsupported_columns();
    if !unsupported.is_empty() {
        return Err(Error::RankDeficient {
            columns: unsupported,
        });
    }
    solve_monotone_qp(&sys.gram(rho), &sys.rhs(rho))
}

/// Minimizer of `(y - X gamma)' Sigma^{-1} (y - X gamma)` over the monotone cone.
///
/// `x` is the per-reading design and `structure.block_sizes` partitions its
/// rows into consecutive correlated blocks.
pub fn monotone_gls(x: &DMatrix<f64>, y: &[f64], structure: &ErrorStructure) -> Result<GlsSolution> {
    let sys = BlockedSystem::from_readings(x, y, &structure.block_sizes)?;
    solve_system(&sys, structure.rho)
}

/// Contiguous runs of coefficients tied within `1e-8 (1 + |gamma_1|)`.
pub fn tie_groups(gamma: &[f64]) -> Vec<Range<usize>> {
    if gamma.is_empty() {
        return Vec::new();
    }
    let tol = 1e-8 * (1.0 + gamma[0].abs());
    let mut groups = Vec::new();
    let mut start = 0;
    for l in 1..gamma.len() {
        if (gamma[l] - gamma[l - 1]).abs() > tol {
            groups.push(start..l);
            start = l;
        }
    }
    groups.push(start..gamma.len());
    groups
}

/// Sums the design columns of tied coefficients: `X gamma = X_u gamma_u`.
/// Returns `X_u` and the unique coefficient values.
pub fn unique_design(x: &DMatrix<f64>, gamma: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let groups = tie_groups(gamma);
    let xu = DMatrix::from_fn(x.nrows(), groups.len(), |r, g| {
        groups[g].clone().map(|l| x[(r, l)]).sum()
    });
    let gu = groups.iter().map(|g| gamma[g.start]).collect();
    (xu, gu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident(p: usize) -> ErrorStructure {
        ErrorStructure::new(1.0, 0.0, vec![1; p]).unwrap()
    }

    #[test]
    fn inactive_constraints() {
        let x = DMatrix::identity(2, 2);
        let sol = monotone_gls(&x, &[2.0, 1.0], &ident(2)).unwrap();
        assert!((sol.gamma[0] - 2.0).abs() < 1e-12 && (sol.gamma[1] - 1.0).abs() < 1e-12);
        assert_eq!(sol.active, vec![false]);
    }

    #[test]
    fn violators_are_pooled() {
        let x = DMatrix::identity(2, 2);
        let sol = monotone_gls(&x, &[1.0, 2.0], &ident(2)).unwrap();
        assert!((sol.gamma[0] - 1.5).abs() < 1e-12 && (sol.gamma[1] - 1.5).abs() < 1e-12);
        assert_eq!(sol.active, vec![true]);
        assert!(sol.kkt_residual < 1e-8);
    }

    #[test]
    fn isotonic_chain() {
        // PAVA on (3, 1, 2, 0.5): pools the middle pair.
        let x = DMatrix::identity(4, 4);
        let sol = monotone_gls(&x, &[3.0, 1.0, 2.0, 0.5], &ident(4)).unwrap();
        let expect = [3.0, 1.5, 1.5, 0.5];
        for (a, b) in sol.gamma.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_columns_are_reported() {
        let mut x = DMatrix::zeros(3, 3);
        x[(0, 0)] = 1.0;
        x[(1, 1)] = 1.0;
        x[(2, 1)] = 1.0;
        match monotone_gls(&x, &[1.0, 2.0, 3.0], &ident(3)) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unique_design_merges_ties() {
        let x = DMatrix::from_row_slice(2, 3, &[0.2, 0.3, 0.5, 0.1, 0.6, 0.3]);
        let (xu, gu) = unique_design(&x, &[2.0, 1.0, 0.5]);
        assert_eq!(xu, x);
        assert_eq!(gu.len(), 3);
        let (xu, gu) = unique_design(&x, &[1.5, 1.5, 1.5]);
        assert_eq!(xu.ncols(), 1);
        assert!((xu[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(gu, vec![1.5]);
        assert_eq!(tie_groups(&[1.0, 0.9, 0.8, 0.7, 0.6, 0.6]).len(), 5);
    }

    #[test]
    fn replicate_order_does_not_matter() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.3, 0.7, 0.3, 0.7]);
        let s = ErrorStructure::new(1.0, 0.4, vec![2, 2]).unwrap();
        let a = monotone_gls(&x, &[1.0, 1.4, 1.8, 2.2], &s).unwrap();
        let b = monotone_gls(&x, &[1.4, 1.0, 2.2, 1.8], &s).unwrap();
        for (u, v) in a.gamma.iter().zip(&b.gamma) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
