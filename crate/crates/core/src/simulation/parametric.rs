//! Parametric degradation models used as comparators.
//!
//! * `Linear`: `y = b0 + b1 exp(b2 x) t`, linear in `(b0, b1)` for fixed `b2`.
//! * `Sigmoid`: `y = alpha / (1 + [t / exp(b0 + b1 x)]^gamma)`, linear in
//!   `alpha` for fixed `(b0, b1, gamma)`.
//!
//! Both are fitted by least squares with the linear coefficients profiled out
//! and a multi-start simplex search over the rest.

use serde::{Deserialize, Serialize};

use crate::dataset::{arrhenius_x, AddtDataset};
use crate::error::{Error, Result};
use crate::optimize::{nelder_mead_multistart, NelderMeadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParametricModel {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub model: ParametricModel,
    /// `(b0, b1, b2)` for `Linear`, `(alpha, b0, b1, gamma)` for `Sigmoid`.
    pub params: Vec<f64>,
    pub rss: f64,
    pub sigma: f64,
    pub kelvin_offset: f64,
}

/// Mean of the linear model at transformed stress `x` and time `t`.
pub fn linear_mean(params: &[f64], x: f64, t: f64) -> f64 {
    params[0] + params[1] * (params[2] * x).exp() * t
}

/// Mean of the sigmoid model at transformed stress `x` and time `t`.
pub fn sigmoid_mean(params: &[f64], x: f64, t: f64) -> f64 {
    params[0] * sigmoid_shape(params[1], params[2], params[3], x, t)
}

fn sigmoid_shape(b0: f64, b1: f64, gamma: f64, x: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let log_ratio = t.ln() - (b0 + b1 * x);
    1.0 / (1.0 + (gamma * log_ratio).exp())
}

impl ParametricFit {
    pub fn mean(&self, temp_c: f64, t: f64) -> Result<f64> {
        let x = arrhenius_x(temp_c, self.kelvin_offset)?;
        Ok(match self.model {
            ParametricModel::Linear => linear_mean(&self.params, x, t),
            ParametricModel::Sigmoid => sigmoid_mean(&self.params, x, t),
        })
    }

    /// Time at which the mean path at `temp_c` reaches `d_f`.
    pub fn mttf(&self, temp_c: f64, d_f: f64) -> Result<f64> {
        let x = arrhenius_x(temp_c, self.kelvin_offset)?;
        let p = &self.params;
        let t = match self.model {
            ParametricModel::Linear => (d_f - p[0]) / (p[1] * (p[2] * x).exp()),
            ParametricModel::Sigmoid => {
                (p[1] + p[2] * x).exp() * (p[0] / d_f - 1.0).powf(1.0 / p[3])
            }
        };
        if t.is_finite() && t >= 0.0 {
            Ok(t)
        } else {
            Err(Error::Extrapolation(format!(
                "the fitted {:?} path never reaches {d_f} at {temp_c} C",
                self.model
            )))
        }
    }
}

struct Points {
    x: Vec<f64>,
    t: Vec<f64>,
    y: Vec<f64>,
}

fn points(data: &AddtDataset, kelvin_offset: f64) -> Result<Points> {
    let mut p = Points {
        x: Vec::new(),
        t: Vec::new(),
        y: Vec::new(),
    };
    for cell in data.cells() {
        let x = arrhenius_x(cell.temp_c, kelvin_offset)?;
        for &y in cell.readings {
            p.x.push(x);
            p.t.push(cell.time);
            p.y.push(y);
        }
    }
    Ok(p)
}

/// Least-squares `(b0, b1)` and RSS of the linear model for fixed `b2`.
fn linear_given_b2(pts: &Points, b2: f64) -> ([f64; 2], f64) {
    let n = pts.y.len() as f64;
    let u: Vec<f64> = pts.x.iter().zip(&pts.t).map(|(x, t)| (b2 * x).exp() * t).collect();
    let mu = u.iter().sum::<f64>() / n;
    let my = pts.y.iter().sum::<f64>() / n;
    let suu: f64 = u.iter().map(|v| (v - mu).powi(2)).sum();
    let suy: f64 = u.iter().zip(&pts.y).map(|(a, b)| (a - mu) * (b - my)).sum();
    let b1 = if suu > 0.0 { suy / suu } else { 0.0 };
    let b0 = my - b1 * mu;
    let rss = u
        .iter()
        .zip(&pts.y)
        .map(|(a, y)| (y - b0 - b1 * a).powi(2))
        .sum();
    ([b0, b1], rss)
}

/// Least-squares `alpha` and RSS of the sigmoid model for fixed shape.
fn sigmoid_given_shape(pts: &Points, b0: f64, b1: f64, gamma: f64) -> (f64, f64) {
    let h: Vec<f64> = pts
        .x
        .iter()
        .zip(&pts.t)
        .map(|(&x, &t)| sigmoid_shape(b0, b1, gamma, x, t))
        .collect();
    let hh: f64 = h.iter().map(|v| v * v).sum();
    let hy: f64 = h.iter().zip(&pts.y).map(|(a, b)| a * b).sum();
    let alpha = if hh > 0.0 { hy / hh } else { 0.0 };
    let rss = h
        .iter()
        .zip(&pts.y)
        .map(|(a, y)| (y - alpha * a).powi(2))
        .sum();
    (alpha, rss)
}

fn options() -> NelderMeadOptions {
    NelderMeadOptions {
        max_evals: 20_000,
        ftol: 1e-10,
        xtol: 1e-10,
        restarts: 3,
    }
}

/// Least-squares fit of `model`; the Arrhenius transform uses `kelvin_offset`.
pub fn fit_parametric(
    model: ParametricModel,
    data: &AddtDataset,
    kelvin_offset: f64,
) -> Result<ParametricFit> {
    let pts = points(data, kelvin_offset)?;
    let n = pts.y.len();
    let (params, rss, k) = match model {
        ParametricModel::Linear => {
            let mut f = |z: &[f64]| linear_given_b2(&pts, z[0]).1;
            let starts: Vec<Vec<f64>> = [0.05, 0.3, 0.6, 1.0, 1.5].iter().map(|&b| vec![b]).collect();
            let best = nelder_mead_multistart(&mut f, &starts, &[0.05], &options())
                .ok_or_else(|| Error::Optimization("no finite start for the linear model".into()))?;
            let b2 = best.x[0];
            let ([b0, b1], rss) = linear_given_b2(&pts, b2);
            (vec![b0, b1, b2], rss, 3)
        }
        ParametricModel::Sigmoid => {
            // Anchor b0 so the characteristic time matches the median positive
            // test time at the mean stress, for each trial slope.
            let mut times: Vec<f64> = pts.t.iter().copied().filter(|&t| t > 0.0).collect();
            if times.is_empty() {
                return Err(Error::InsufficientData("no positive test times".into()));
            }
            times.sort_by(f64::total_cmp);
            let log_t = times[times.len() / 2].ln();
            let xbar = pts.x.iter().sum::<f64>() / n as f64;
            let mut f = |z: &[f64]| sigmoid_given_shape(&pts, z[0], z[1], z[2].exp()).1;
            let starts: Vec<Vec<f64>> = [(-0.3, 1.0), (-0.1, 1.0), (-0.6, 1.0), (-0.3, 2.0), (-0.3, 0.6)]
                .iter()
                .map(|&(b1, g)| vec![log_t - b1 * xbar, b1, f64::ln(g)])
                .collect();
            let best = nelder_mead_multistart(&mut f, &starts, &[0.3, 0.05, 0.2], &options())
                .ok_or_else(|| Error::Optimization("no finite start for the sigmoid model".into()))?;
            let (b0, b1, gamma) = (best.x[0], best.x[1], best.x[2].exp());
            let (alpha, rss) = sigmoid_given_shape(&pts, b0, b1, gamma);
            (vec![alpha, b0, b1, gamma], rss, 4)
        }
    };
    if !rss.is_finite() {
        return Err(Error::Optimization("least-squares objective is not finite".into()));
    }
    Ok(ParametricFit {
        model,
        params,
        rss,
        sigma: (rss / n.saturating_sub(k).max(1) as f64).sqrt(),
        kelvin_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(mean: impl Fn(f64, f64) -> f64) -> AddtDataset {
        let mut rows = Vec::new();
        for &temp in &[50.0, 65.0, 80.0] {
            for &t in &[0.0, 192.0, 600.0, 1800.0, 3120.0, 4320.0] {
                let x = arrhenius_x(temp, 273.15).unwrap();
                for _ in 0..2 {
                    rows.push((temp, t, mean(x, t)));
                }
            }
        }
        AddtDataset::from_readings(rows, "hours").unwrap()
    }

    #[test]
    fn linear_noiseless_recovery() {
        let truth = [1.0, -3.5, 0.3];
        let data = design(|x, t| linear_mean(&truth, x, t));
        let fit = fit_parametric(ParametricModel::Linear, &data, 273.15).unwrap();
        for (a, b) in fit.params.iter().zip(truth) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{:?}", fit.params);
        }
    }

    #[test]
    fn sigmoid_self_recovery() {
        let truth = [1.0, -1.96, -0.3, 1.5];
        let data = design(|x, t| sigmoid_mean(&truth, x, t));
        let fit = fit_parametric(ParametricModel::Sigmoid, &data, 273.15).unwrap();
        for (a, b) in fit.params.iter().zip(truth) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0), "{:?}", fit.params);
        }
    }

    #[test]
    fn mttf_inverts_the_mean() {
        let fit = ParametricFit {
            model: ParametricModel::Sigmoid,
            params: vec![1.0, -1.96, -0.3, 1.5],
            rss: 0.0,
            sigma: 0.0,
            kelvin_offset: 273.15,
        };
        let t = fit.mttf(30.0, 0.5).unwrap();
        assert!((fit.mean(30.0, t).unwrap() - 0.5).abs() < 1e-12);
    }
}
