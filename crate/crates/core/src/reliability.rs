//! Degradation path prediction and mean time to failure.

use serde::{Deserialize, Serialize};

use crate::bspline::eta;
use crate::dataset::AddtDataset;
use crate::error::{Error, Result};
use crate::fit::ModelFit;

/// Failure threshold, either on the response scale or as a fraction of the
/// initial level `g(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    Absolute(f64),
    Relative(f64),
}

impl Threshold {
    pub fn resolve(&self, fit: &ModelFit) -> Result<f64> {
        match *self {
            Threshold::Absolute(d) => Ok(d),
            Threshold::Relative(frac) => {
                if !(frac > 0.0 && frac.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "relative threshold {frac} must be positive"
                    )));
                }
                Ok(frac * initial_level(fit)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MttfEstimate {
    pub temp_use: f64,
    pub d_f: f64,
    pub y_m: f64,
    pub m_f: f64,
    /// Crossing point on the warped (baseline) time scale.
    pub warped_time: f64,
    /// `exp(beta (x_max - x_use))`.
    pub time_scale: f64,
}

/// Lowest reading in the data.
pub fn extrapolation_floor(data: &AddtDataset) -> f64 {
    data.responses().into_iter().fold(f64::INFINITY, f64::min)
}

/// Fitted baseline at the lower knot boundary.
pub fn initial_level(fit: &ModelFit) -> Result<f64> {
    fit.baseline(fit.spec.boundary[0])
}

/// Mean path `g(t / exp(beta s))` at `temp` for each time.
pub fn predict_path(fit: &ModelFit, temp: f64, times: &[f64]) -> Result<Vec<f64>> {
    let s = fit.stress_distance(temp)?;
    let factor = (fit.beta * s).exp();
    let [lo, hi] = fit.spec.boundary;
    let slack = 1e-12 * (1.0 + hi.abs());
    times
        .iter()
        .map(|&t| {
            let z = eta(t, s, fit.beta);
            if !(z >= lo - slack && z <= hi + slack) {
                return Err(Error::Extrapolation(format!(
                    "time {t} at {temp} C warps to {z}; admissible times are [{}, {}]",
                    lo * factor,
                    hi * factor
                )));
            }
            fit.baseline(z.clamp(lo, hi))
        })
        .collect()
}

/// Earliest time at which the mean path at `temp_use` drops to the threshold.
pub fn mttf(fit: &ModelFit, temp_use: f64, threshold: Threshold) -> Result<MttfEstimate> {
    let d_f = threshold.resolve(fit)?;
    let y_m = fit.y_floor;
    let g0 = initial_level(fit)?;
    if !d_f.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold {d_f} is not finite")));
    }
    if d_f >= g0 {
        return Err(Error::ThresholdAboveInitial {
            threshold: d_f,
            initial: g0,
        });
    }
    if d_f < y_m {
        return Err(Error::Extrapolation(format!(
            "threshold {d_f} lies below the lowest observed level {y_m}"
        )));
    }
    let [lo, hi] = fit.spec.boundary;
    let g_hi = fit.baseline(hi)?;
    if g_hi > d_f {
        return Err(Error::Extrapolation(format!(
            "the fitted path ends at {g_hi} above the threshold {d_f}"
        )));
    }
    // Invariant: g(a) > d_f >= g(b).
    let (mut a, mut b) = (lo, hi);
    for _ in 0..400 {
        if b - a <= 1e-10 * b.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let mid = 0.5 * (a + b);
        if fit.baseline(mid)? <= d_f {
            b = mid;
        } else {
            a = mid;
        }
    }
    let s = fit.stress_distance(temp_use)?;
    let time_scale = (fit.beta * s).exp();
    Ok(MttfEstimate {
        temp_use,
        d_f,
        y_m,
        m_f: b * time_scale,
        warped_time: b,
        time_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::SplineSpec;
    use crate::dataset::{arrhenius_x, DEFAULT_KELVIN_OFFSET};
    use crate::fit::KnotPolicy;

    /// Linear baseline `1 - z / 100` on [0, 100].
    fn linear_fit(beta: f64) -> ModelFit {
        let spec = SplineSpec::new(1, vec![], [0.0, 100.0]).unwrap();
        ModelFit {
            gamma: vec![1.0, 0.0],
            beta,
            sigma: 0.1,
            rho: 0.0,
            spec: spec.clone(),
            p_u: 2,
            loglik: 0.0,
            edf: 5,
            aic: 10.0,
            n: 10,
            converged: true,
            iterations: 1,
            boundary_max: false,
            degenerate: false,
            knot_policy: KnotPolicy::Fixed { spec },
            kelvin_offset: DEFAULT_KELVIN_OFFSET,
            x_max: arrhenius_x(80.0, DEFAULT_KELVIN_OFFSET).unwrap(),
            max_temp_c: 80.0,
            y_floor: 0.0,
            time_unit: "hours".into(),
            beta_grid_trace: vec![],
            beta_refine_trace: vec![],
        }
    }

    #[test]
    fn linear_root() {
        let fit = linear_fit(0.0);
        let m = mttf(&fit, 30.0, Threshold::Absolute(0.7)).unwrap();
        assert!((m.m_f - 30.0).abs() < 1e-8);
        let rel = mttf(&fit, 30.0, Threshold::Relative(0.7)).unwrap();
        assert!((rel.m_f - 30.0).abs() < 1e-8);
    }

    #[test]
    fn doubled_time_scale() {
        let mut fit = linear_fit(1.0);
        // Choose the use temperature so that beta * s = ln 2.
        let x_use = fit.x_max - 2f64.ln();
        let temp = -11605.0 / x_use - fit.kelvin_offset;
        fit.beta = 1.0;
        let m = mttf(&fit, temp, Threshold::Absolute(0.7)).unwrap();
        assert!((m.m_f - 60.0).abs() < 1e-7);
        let back = predict_path(&fit, temp, &[m.m_f]).unwrap()[0];
        assert!((back - 0.7).abs() < 1e-8);
    }

    #[test]
    fn refusals() {
        let mut fit = linear_fit(0.0);
        assert!(matches!(
            mttf(&fit, 30.0, Threshold::Absolute(1.2)),
            Err(Error::ThresholdAboveInitial { .. })
        ));
        fit.y_floor = 0.5;
        assert!(matches!(
            mttf(&fit, 30.0, Threshold::Absolute(0.4)),
            Err(Error::Extrapolation(_))
        ));
        assert!(matches!(
            predict_path(&fit, 80.0, &[150.0]),
            Err(Error::Extrapolation(_))
        ));
    }

    #[test]
    fn flat_segment_returns_earliest_crossing() {
        let mut fit = linear_fit(0.0);
        fit.spec = SplineSpec::new(1, vec![40.0, 60.0], [0.0, 100.0]).unwrap();
        fit.gamma = vec![1.0, 0.6, 0.6, 0.2];
        let m = mttf(&fit, 80.0, Threshold::Absolute(0.6)).unwrap();
        assert!((m.m_f - 40.0).abs() < 1e-7);
    }

    #[test]
    fn hottest_level_is_the_baseline() {
        let fit = linear_fit(0.7);
        let v = predict_path(&fit, 80.0, &[0.0, 25.0, 100.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.75, 0.0]);
    }

    #[test]
    fn floor_is_the_minimum() {
        let data = AddtDataset::from_readings(
            [(50.0, 1.0, 4.4), (50.0, 2.0, 3.1), (60.0, 1.0, 5.0)],
            "hours",
        )
        .unwrap();
        assert_eq!(extrapolation_floor(&data), 3.1);
    }
}
