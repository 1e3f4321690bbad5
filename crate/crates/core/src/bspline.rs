//! Clamped B-spline bases on the warped time scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{AddtDataset, StressSet};
use crate::error::{Error, Result};
use crate::stats::quantile_type7;

/// Degree, interior knots and boundary of a clamped B-spline basis.
///
/// The full knot sequence repeats each boundary `degree + 1` times, giving
/// `N + 2q + 2` knots and `p = N + q + 1` basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub degree: usize,
    pub interior_knots: Vec<f64>,
    pub boundary: [f64; 2],
}

/// Spline coefficients on the response scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaselineCoefficients(pub Vec<f64>);

impl BaselineCoefficients {
    pub fn is_monotone_decreasing(&self) -> bool {
        self.0.windows(2).all(|w| w[1] <= w[0])
    }
}

impl SplineSpec {
    pub fn new(degree: usize, interior_knots: Vec<f64>, boundary: [f64; 2]) -> Result<Self> {
        let spec = SplineSpec {
            degree,
            interior_knots,
            boundary,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.boundary;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidSpline(format!(
                "boundary [{lo}, {hi}] must be finite with lo < hi"
            )));
        }
        let mut prev = lo;
        for &d in &self.interior_knots {
            if !d.is_finite() || d < prev || d > hi {
                return Err(Error::InvalidSpline(format!(
                    "interior knots must be nondecreasing within [{lo}, {hi}]"
                )));
            }
            prev = d;
        }
        Ok(())
    }

    /// Number of basis functions `p`.
    pub fn n_basis(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }

    pub fn full_knots(&self) -> Vec<f64> {
        let q = self.degree;
        let mut knots = Vec::with_capacity(self.interior_knots.len() + 2 * q + 2);
        knots.extend(std::iter::repeat_n(self.boundary[0], q + 1));
        knots.extend_from_slice(&self.interior_knots);
        knots.extend(std::iter::repeat_n(self.boundary[1], q + 1));
        knots
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.boundary[0] && z <= self.boundary[1]
    }

    fn check_range(&self, z: f64) -> Result<()> {
        if self.contains(z) {
            Ok(())
        } else {
            Err(Error::OutsideKnotRange {
                value: z,
                lo: self.boundary[0],
                hi: self.boundary[1],
            })
        }
    }

    /// All `p` basis values at `z`.
    pub fn basis(&self, z: f64) -> Result<Vec<f64>> {
        self.check_range(z)?;
        let mut out = vec![0.0; self.n_basis()];
        basis_on_knots(&self.full_knots(), self.degree, z, &mut out);
        Ok(out)
    }

    /// `sum_l gamma_l B_l(z)`.
    pub fn value(&self, gamma: &[f64], z: f64) -> Result<f64> {
        self.check_len(gamma)?;
        let b = self.basis(z)?;
        Ok(b.iter().zip(gamma).map(|(b, g)| b * g).sum())
    }

    /// First derivative of the spline from coefficient differences:
    /// `sum_{l>=2} q (gamma_l - gamma_{l-1}) / (d_{l+q} - d_l) B_{q-1,l}(z)`.
    pub fn derivative(&self, gamma: &[f64], z: f64) -> Result<f64> {
        self.check_len(gamma)?;
        self.check_range(z)?;
        let q = self.degree;
        if q == 0 {
            return Ok(0.0);
        }
        let knots = self.full_knots();
        let p = self.n_basis();
        let mut lower = vec![0.0; p + 1];
        basis_on_knots(&knots, q - 1, z, &mut lower);
        let mut d = 0.0;
        for l in 1..p {
            let width = knots[l + q] - knots[l];
            if width > 0.0 {
                d += q as f64 * (gamma[l] - gamma[l - 1]) / width * lower[l];
            }
        }
        Ok(d)
    }

    fn check_len(&self, gamma: &[f64]) -> Result<()> {
        if gamma.len() != self.n_basis() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                self.n_basis(),
                gamma.len()
            )));
        }
        Ok(())
    }

    /// Spec with the `index`-th interior knot removed.
    pub fn without_knot(&self, index: usize) -> SplineSpec {
        let mut out = self.clone();
        out.interior_knots.remove(index);
        out
    }
}

/// Evaluates the degree-`degree` B-spline basis on an arbitrary nondecreasing
/// knot sequence, writing `knots.len() - degree - 1` values into `out`.
///
/// Spans are half-open except at the last knot, where the last nonempty span
/// is used so the right endpoint is evaluable. Terms of the Cox–de Boor
/// recursion with a zero-width denominator vanish. `z` must lie within the
/// knot range.
pub fn basis_on_knots(knots: &[f64], degree: usize, z: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), knots.len() - degree - 1);
    out.iter_mut().for_each(|v| *v = 0.0);
    let last = *knots.last().unwrap();
    let span = if z >= last {
        match knots.windows(2).rposition(|w| w[0] < w[1]) {
            Some(i) => i,
            None => return,
        }
    } else {
        knots.partition_point(|&t| t <= z) - 1
    };

    // Triangular form of the recursion over the degree + 1 nonzero functions.
    let mut values = [0.0f64; 16];
    let mut left = [0.0f64; 16];
    let mut right = [0.0f64; 16];
    assert!(degree < 15, "degree {degree} too large");
    values[0] = 1.0;
    for j in 1..=degree {
        left[j] = z - knots[span + 1 - j];
        right[j] = knots[span + j] - z;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom > 0.0 { values[r] / denom } else { 0.0 };
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    for r in 0..=degree {
        let idx = span + r;
        if idx >= degree && idx - degree < out.len() {
            out[idx - degree] = values[r];
        }
    }
}

/// Precomputed knot sequence for repeated evaluation.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    spec: SplineSpec,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(spec: &SplineSpec) -> Result<Self> {
        spec.validate()?;
        if spec.n_basis() > 64 || spec.degree > 14 {
            return Err(Error::InvalidSpline(format!(
                "at most 64 basis functions of degree <= 14 are supported, got p = {}",
                spec.n_basis()
            )));
        }
        Ok(SplineBasis {
            knots: spec.full_knots(),
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn n_basis(&self) -> usize {
        self.spec.n_basis()
    }

    pub fn eval_into(&self, z: f64, out: &mut [f64]) -> Result<()> {
        self.spec.check_range(z)?;
        basis_on_knots(&self.knots, self.spec.degree, z, out);
        Ok(())
    }

    pub fn value(&self, gamma: &[f64], z: f64) -> Result<f64> {
        self.spec.check_range(z)?;
        let mut b = [0.0f64; 64];
        let p = self.n_basis();
        basis_on_knots(&self.knots, self.spec.degree, z, &mut b[..p]);
        Ok(b[..p].iter().zip(gamma).map(|(b, g)| b * g).sum())
    }
}

/// Accelerated ("warped") time `t / exp(beta * s)`.
pub fn eta(t: f64, s: f64, beta: f64) -> f64 {
    t / (beta * s).exp()
}

/// Sufficient condition for a decreasing path: nonincreasing coefficients.
pub fn path_is_monotone(_spec: &SplineSpec, gamma: &BaselineCoefficients) -> bool {
    gamma.is_monotone_decreasing()
}

/// Snaps warped times that exceed a boundary by rounding noise back onto it.
fn snap_to_range(z: f64, spec: &SplineSpec) -> Option<f64> {
    let [lo, hi] = spec.boundary;
    let tol = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
    if z < lo - tol || z > hi + tol {
        None
    } else {
        Some(z.clamp(lo, hi))
    }
}

/// Warped time of every cell in dataset order.
pub fn cell_warped_times(data: &AddtDataset, stresses: &StressSet, beta: f64) -> Vec<f64> {
    data.cells()
        .map(|c| eta(c.time, stresses.s[c.level], beta))
        .collect()
}

/// One design row per cell (row-major, `n_cells x p`).
pub fn cell_design(
    data: &AddtDataset,
    stresses: &StressSet,
    basis: &SplineBasis,
    beta: f64,
) -> Result<Vec<f64>> {
    let p = basis.n_basis();
    let mut rows = vec![0.0; data.n_cells() * p];
    for (c, z) in cell_warped_times(data, stresses, beta).into_iter().enumerate() {
        let z = snap_to_range(z, basis.spec()).ok_or_else(|| Error::InfeasibleBeta {
            beta,
            reason: format!(
                "warped time {z} lies outside the knot boundary [{}, {}]",
                basis.spec().boundary[0],
                basis.spec().boundary[1]
            ),
        })?;
        basis.eval_into(z, &mut rows[c * p..(c + 1) * p])?;
    }
    Ok(rows)
}

/// Per-reading design matrix `X_beta` (`n x p`); replicates share rows.
pub fn design_matrix(
    data: &AddtDataset,
    stresses: &StressSet,
    spec: &SplineSpec,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let basis = SplineBasis::new(spec)?;
    let p = basis.n_basis();
    let cells = cell_design(data, stresses, &basis, beta)?;
    let mut x = DMatrix::zeros(data.n(), p);
    let mut row = 0;
    for (c, cell) in data.cells().enumerate() {
        for _ in cell.readings {
            for l in 0..p {
                x[(row, l)] = cells[c * p + l];
            }
            row += 1;
        }
    }
    Ok(x)
}

/// Default knots: `n_interior` equally spaced sample quantiles (levels
/// `b / (N + 1)`) of the pooled per-cell warped times. The boundary runs from
/// time zero to the largest warped time.
pub fn default_interior_knots(
    data: &AddtDataset,
    stresses: &StressSet,
    beta: f64,
    n_interior: usize,
) -> Result<(Vec<f64>, [f64; 2])> {
    let mut pooled = cell_warped_times(data, stresses, beta);
    pooled.sort_by(f64::total_cmp);
    let mut distinct = pooled.clone();
    distinct.dedup();
    if distinct.len() < n_interior + 2 {
        return Err(Error::InsufficientData(format!(
            "{} distinct warped times cannot place {} interior knots",
            distinct.len(),
            n_interior
        )));
    }
    let hi = *pooled.last().unwrap();
    if !(hi > 0.0) {
        return Err(Error::InfeasibleBeta {
            beta,
            reason: "all warped times collapse to zero".into(),
        });
    }
    let knots = (1..=n_interior)
        .map(|b| quantile_type7(&pooled, b as f64 / (n_interior + 1) as f64))
        .collect();
    Ok((knots, [0.0, hi]))
}

pub fn default_spec(
    data: &AddtDataset,
    stresses: &StressSet,
    beta: f64,
    degree: usize,
    n_interior: usize,
) -> Result<SplineSpec> {
    let (knots, boundary) = default_interior_knots(data, stresses, beta, n_interior)?;
    SplineSpec::new(degree, knots, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::stress_set;
    use proptest::prelude::*;

    /// Direct Cox–de Boor recursion, 0/0 := 0, used as an oracle.
    fn naive(knots: &[f64], q: usize, l: usize, z: f64) -> f64 {
        if q == 0 {
            let last = *knots.last().unwrap();
            let hit = knots[l] <= z && z < knots[l + 1];
            let end = z == last
                && knots[l] < knots[l + 1]
                && knots[l + 1] == last;
            return if hit || end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[l + q] - knots[l];
        if d1 > 0.0 {
            v += (z - knots[l]) / d1 * naive(knots, q - 1, l, z);
        }
        let d2 = knots[l + q + 1] - knots[l + 1];
        if d2 > 0.0 {
            v += (knots[l + q + 1] - z) / d2 * naive(knots, q - 1, l + 1, z);
        }
        v
    }

    #[test]
    fn degree_zero_single_span() {
        let spec = SplineSpec::new(0, vec![], [0.0, 1.0]).unwrap();
        assert_eq!(spec.basis(0.5).unwrap(), vec![1.0]);
    }

    #[test]
    fn degree_one_midpoint() {
        let spec = SplineSpec::new(1, vec![], [0.0, 1.0]).unwrap();
        assert_eq!(spec.full_knots(), vec![0.0, 0.0, 1.0, 1.0]);
        let b = spec.basis(0.5).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-15 && (b[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn right_endpoint_is_evaluable() {
        let spec = SplineSpec::new(2, vec![0.3, 0.6], [0.0, 1.0]).unwrap();
        let b = spec.basis(1.0).unwrap();
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b[..b.len() - 1].iter().all(|&v| v == 0.0));
        assert!(spec.basis(1.0 + 1e-9).is_err());
        assert!(spec.basis(-1e-9).is_err());
    }

    #[test]
    fn matches_naive_recursion() {
        let spec = SplineSpec::new(3, vec![0.1, 0.1, 0.4, 0.7], [0.0, 1.0]).unwrap();
        let knots = spec.full_knots();
        for i in 0..=200 {
            let z = i as f64 / 200.0;
            let fast = spec.basis(z).unwrap();
            for (l, v) in fast.iter().enumerate() {
                assert!((v - naive(&knots, 3, l, z)).abs() < 1e-13, "z={z} l={l}");
            }
        }
    }

    #[test]
    fn eta_cases() {
        assert_eq!(eta(170.0, 0.0, 3.7), 170.0);
        assert_eq!(eta(50.0, 3.0, 0.0), 50.0);
        let s = 2f64.ln() / 0.83;
        assert!((eta(100.0, s, 0.83) - 50.0).abs() < 1e-12);
        assert_eq!(eta(1.0, 1e6, 1e6), 0.0);
    }

    #[test]
    fn monotone_condition() {
        let spec = SplineSpec::new(2, vec![1.0, 2.0, 3.0], [0.0, 4.0]).unwrap();
        let ok = BaselineCoefficients(vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.6]);
        assert!(path_is_monotone(&spec, &ok));
        assert!(BaselineCoefficients(vec![1.0, 1.0, 1.0]).is_monotone_decreasing());
        assert!(!BaselineCoefficients(vec![0.5, 0.6]).is_monotone_decreasing());
    }

    fn table1_setting(temps: &[f64], times: &[f64], reps: usize) -> AddtDataset {
        let rows = temps.iter().flat_map(|&t| {
            times
                .iter()
                .flat_map(move |&h| std::iter::repeat_n((t, h, 1.0), reps))
        });
        AddtDataset::from_readings(rows, "hours").unwrap()
    }

    #[test]
    fn quantile_knots_single() {
        let d = table1_setting(&[80.0], &[0.0, 1.0, 2.0, 3.0, 4.0], 1);
        let s = stress_set(&d, 273.16).unwrap();
        let (k, b) = default_interior_knots(&d, &s, 0.83, 1).unwrap();
        assert_eq!(k, vec![2.0]);
        assert_eq!(b, [0.0, 4.0]);
        assert!(default_interior_knots(&d, &s, 0.83, 4).is_err());
    }

    #[test]
    fn quantile_knots_on_table1_design() {
        let times = [
            10.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 140.0,
            150.0, 170.0,
        ];
        let d = table1_setting(&[30.0, 40.0, 50.0, 60.0, 70.0, 80.0], &times, 10);
        let s = stress_set(&d, 273.15).unwrap();
        let (k, [lo, hi]) = default_interior_knots(&d, &s, 0.83, 3).unwrap();
        let mut pooled = cell_warped_times(&d, &s, 0.83);
        pooled.sort_by(f64::total_cmp);
        assert_eq!(k.len(), 3);
        assert!(k.iter().all(|&v| v > *pooled.first().unwrap() && v < hi));
        assert!(k.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(hi, 170.0);
        assert_eq!(lo, 0.0);

        // Duplicating every reading leaves the knots unchanged.
        let doubled = table1_setting(&[30.0, 40.0, 50.0, 60.0, 70.0, 80.0], &times, 20);
        let (k2, _) = default_interior_knots(&doubled, &s, 0.83, 3).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn design_rows() {
        let d = table1_setting(&[50.0, 65.0, 80.0], &[8.0, 25.0, 75.0, 130.0, 170.0], 3);
        let s = stress_set(&d, 273.15).unwrap();
        let spec = default_spec(&d, &s, 0.83, 2, 3).unwrap();
        let x = design_matrix(&d, &s, &spec, 0.83).unwrap();
        assert_eq!(x.nrows(), 45);
        for r in 0..x.nrows() {
            assert!((x.row(r).sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(x.row(0), x.row(1));
        assert_eq!(x.row(1), x.row(2));

        let spec0 = default_spec(&d, &s, 0.0, 2, 3).unwrap();
        let x0 = design_matrix(&d, &s, &spec0, 0.0).unwrap();
        // level 0 cell 0 vs level 2 cell 0: same time, same row at beta = 0
        assert_eq!(x0.row(0), x0.row(30));

        let narrow = SplineSpec::new(2, vec![1.0], [0.5, 100.0]).unwrap();
        assert!(matches!(
            design_matrix(&d, &s, &narrow, 0.83),
            Err(Error::InfeasibleBeta { .. })
        ));
    }

    #[test]
    fn full_rank_at_spread_points() {
        let spec = SplineSpec::new(2, vec![0.2, 0.5, 0.8], [0.0, 1.0]).unwrap();
        let p = spec.n_basis();
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            let z = (i as f64 + 0.5) / p as f64;
            for (l, v) in spec.basis(z).unwrap().into_iter().enumerate() {
                m[(i, l)] = v;
            }
        }
        assert_eq!(m.rank(1e-10), p);
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_support(
            q in 0usize..4,
            mut inner in proptest::collection::vec(0.0f64..10.0, 0..5),
            z in 0.0f64..=10.0,
        ) {
            inner.sort_by(f64::total_cmp);
            let spec = SplineSpec::new(q, inner, [0.0, 10.0]).unwrap();
            let b = spec.basis(z).unwrap();
            prop_assert!(b.iter().all(|&v| v >= 0.0));
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let knots = spec.full_knots();
            for (l, &v) in b.iter().enumerate() {
                if z < knots[l] || z > knots[l + q + 1] {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn serializes_to_documented_shape() {
        let spec = SplineSpec::new(2, vec![1.0, 2.0], [0.0, 3.0]).unwrap();
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"degree": 2, "interior_knots": [1.0, 2.0], "boundary": [0.0, 3.0]})
        );
    }
}
