//! Monte Carlo studies: parameter recovery under a spline truth and fits of
//! several models under a parametric truth.
//!
//! Replicate `r` draws its data from a ChaCha8 stream `(seed, r)` and its
//! bootstrap from a seed derived from `(seed, r)`, so results do not depend on
//! the thread count.

mod metrics;
mod misspec;
pub mod parametric;
mod recovery;

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use metrics::{
    CoverageMetrics, ImseMetrics, MttfMetrics, ParameterMetrics, PathCoverage, PointwiseMetric,
    SelectionCount, StudyMetrics,
};
pub use misspec::run_misspec_study;
pub use parametric::{fit_parametric, ParametricFit, ParametricModel};
pub use recovery::run_recovery_study;

use crate::bspline::{default_spec, eta, SplineSpec};
use crate::dataset::{arrhenius_x, AddtDataset, Cell, Level, StressSet};
use crate::error::{Error, Result};
use crate::fit::FitControls;
use crate::knotsel::SelectionControls;

/// Data-generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    /// Monotone spline baseline with scale acceleration. Knots default to the
    /// quantile scheme on the design at the true `beta`.
    Spline {
        degree: usize,
        n_interior: usize,
        #[serde(default)]
        interior_knots: Option<Vec<f64>>,
        gamma: Vec<f64>,
        beta: f64,
        sigma: f64,
        rho: f64,
    },
    /// `b0 + b1 exp(b2 x) t`.
    Parametric {
        b0: f64,
        b1: f64,
        b2: f64,
        sigma: f64,
        rho: f64,
    },
}

impl Truth {
    fn noise(&self) -> (f64, f64) {
        match *self {
            Truth::Spline { sigma, rho, .. } | Truth::Parametric { sigma, rho, .. } => (sigma, rho),
        }
    }
}

/// Extra cell of unaged readings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeZeroCell {
    pub temp_c: f64,
    pub reps: usize,
}

/// MTTF query evaluated for every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MttfQuery {
    pub temp_use: f64,
    pub threshold: f64,
    /// Read `threshold` as a fraction of each model's fitted initial level
    /// (and of the truth's initial level for the reference MTTF).
    #[serde(default)]
    pub relative: bool,
    /// Reported MTTF is the time on the data scale divided by this.
    #[serde(default = "one")]
    pub time_divisor: f64,
    #[serde(default)]
    pub provenance: String,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub name: String,
    pub temps: Vec<f64>,
    pub times: Vec<f64>,
    pub reps_per_cell: usize,
    #[serde(default)]
    pub time_zero: Option<TimeZeroCell>,
    pub truth: Truth,
    pub kelvin_offset: f64,
    #[serde(default = "hours")]
    pub time_unit: String,
    /// Desk-scale replication count.
    pub n_datasets: usize,
    /// Replication count used with `--full`.
    #[serde(default)]
    pub full_datasets: Option<usize>,
    /// Bootstrap size per dataset; 0 skips interval coverage.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub path_grid: usize,
    #[serde(default)]
    pub mttf: Option<MttfQuery>,
    #[serde(default)]
    pub fit: FitControls,
    #[serde(default)]
    pub selection: SelectionControls,
}

fn hours() -> String {
    "hours".into()
}

fn default_alpha() -> f64 {
    0.05
}

fn default_grid() -> usize {
    200
}

impl SimulationScenario {
    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let sc: SimulationScenario = serde_json::from_reader(reader)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.temps.is_empty() || self.times.is_empty() || self.reps_per_cell == 0 {
            return bad("scenario needs temperatures, times and replicates".into());
        }
        if self.n_datasets == 0 {
            return bad("scenario needs at least one dataset".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.path_grid < 2 {
            return bad("path grid needs at least two points".into());
        }
        let (sigma, rho) = self.truth.noise();
        if !(sigma >= 0.0) || !(0.0..=1.0).contains(&rho) {
            return bad(format!("noise (sigma = {sigma}, rho = {rho}) is invalid"));
        }
        if let Truth::Spline { degree, n_interior, gamma, .. } = &self.truth {
            if gamma.len() != degree + n_interior + 1 {
                return bad(format!(
                    "spline truth has {} coefficients, expected {}",
                    gamma.len(),
                    degree + n_interior + 1
                ));
            }
            if gamma.windows(2).any(|w| w[1] > w[0]) {
                return bad("spline truth coefficients are not monotone".into());
            }
        }
        self.fit.validate()
    }

    /// Replication count for desk (`false`) or full (`true`) scale.
    pub fn datasets(&self, full: bool) -> usize {
        if full {
            self.full_datasets.unwrap_or(self.n_datasets)
        } else {
            self.n_datasets
        }
    }

    /// Cell layout with every reading set to zero.
    pub fn layout(&self) -> Result<AddtDataset> {
        self.dataset_with(|_, _| 0.0, 0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn dataset_with<F, R>(&self, mean: F, sigma: f64, rho: f64, rng: &mut R) -> Result<AddtDataset>
    where
        F: Fn(f64, f64) -> f64,
        R: Rng + ?Sized,
    {
        let mut levels: Vec<Level> = self
            .temps
            .iter()
            .map(|&temp| Level {
                temp_c: temp,
                cells: Vec::new(),
            })
            .collect();
        if let Some(tz) = self.time_zero {
            let idx = self
                .temps
                .iter()
                .position(|&t| t == tz.temp_c)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "time-zero temperature {} is not a test level",
                        tz.temp_c
                    ))
                })?;
            levels[idx].cells.push(Cell {
                time: 0.0,
                readings: vec![0.0; tz.reps],
            });
        }
        for level in &mut levels {
            for &t in &self.times {
                level.cells.push(Cell {
                    time: t,
                    readings: vec![0.0; self.reps_per_cell],
                });
            }
        }
        let shared = rho.sqrt() * sigma;
        let own = (1.0 - rho).sqrt() * sigma;
        for level in &mut levels {
            level.cells.sort_by(|a, b| a.time.total_cmp(&b.time));
            for cell in &mut level.cells {
                let mu = mean(level.temp_c, cell.time);
                let zc: f64 = rng.sample(StandardNormal);
                for y in &mut cell.readings {
                    let z: f64 = rng.sample(StandardNormal);
                    *y = mu + shared * zc + own * z;
                }
            }
        }
        AddtDataset::new(levels, self.time_unit.clone())
    }

    /// Spline truth with knots resolved on the design.
    pub fn truth_spec(&self) -> Result<SplineSpec> {
        let Truth::Spline {
            degree,
            n_interior,
            interior_knots,
            beta,
            ..
        } = &self.truth
        else {
            return Err(Error::InvalidArgument("scenario truth is not a spline".into()));
        };
        let layout = self.layout()?;
        let stresses = StressSet::new(&layout, self.kelvin_offset)?;
        let spec = default_spec(&layout, &stresses, *beta, *degree, *n_interior)?;
        match interior_knots {
            Some(k) => SplineSpec::new(*degree, k.clone(), spec.boundary),
            None => Ok(spec),
        }
    }

    /// `t_m`: the longest test time at the hottest level.
    pub fn max_time(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    /// Baseline-time grid `[0, t_m]` used for path metrics.
    pub fn path_times(&self) -> Vec<f64> {
        let tm = self.max_time();
        let m = self.path_grid;
        (0..m).map(|i| tm * i as f64 / (m - 1) as f64).collect()
    }

    /// True baseline path at each time.
    pub fn truth_baseline(&self, times: &[f64]) -> Result<Vec<f64>> {
        match &self.truth {
            Truth::Spline { gamma, .. } => {
                let spec = self.truth_spec()?;
                times.iter().map(|&t| spec.value(gamma, t)).collect()
            }
            Truth::Parametric { b0, b1, b2, .. } => {
                let hot = self.temps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let x = arrhenius_x(hot, self.kelvin_offset)?;
                Ok(times.iter().map(|&t| b0 + b1 * (b2 * x).exp() * t).collect())
            }
        }
    }
}

/// Dataset from the spline truth; replicates in a cell share `sqrt(rho) sigma Z`.
pub fn generate_spline_data<R: Rng + ?Sized>(
    scenario: &SimulationScenario,
    rng: &mut R,
) -> Result<AddtDataset> {
    let Truth::Spline {
        gamma, beta, sigma, rho, ..
    } = &scenario.truth
    else {
        return Err(Error::InvalidArgument("scenario truth is not a spline".into()));
    };
    let spec = scenario.truth_spec()?;
    let layout = scenario.layout()?;
    let stresses = StressSet::new(&layout, scenario.kelvin_offset)?;
    let temps = layout.temperatures();
    let mean = |temp: f64, t: f64| {
        let level = temps.iter().position(|&x| x == temp).expect("design level");
        let z = eta(t, stresses.s[level], *beta).clamp(spec.boundary[0], spec.boundary[1]);
        spec.value(gamma, z).expect("truth coefficients match spec")
    };
    scenario.dataset_with(mean, *sigma, *rho, rng)
}

/// Dataset from `y = b0 + b1 exp(b2 x) t + eps`.
pub fn generate_parametric_data<R: Rng + ?Sized>(
    scenario: &SimulationScenario,
    rng: &mut R,
) -> Result<AddtDataset> {
    let Truth::Parametric {
        b0, b1, b2, sigma, rho,
    } = scenario.truth
    else {
        return Err(Error::InvalidArgument("scenario truth is not parametric".into()));
    };
    let offset = scenario.kelvin_offset;
    let mean = |temp: f64, t: f64| {
        let x = arrhenius_x(temp, offset).expect("validated temperature");
        b0 + b1 * (b2 * x).exp() * t
    };
    scenario.dataset_with(mean, sigma, rho, rng)
}

pub(crate) fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Bootstrap seed for dataset `replicate` (splitmix64 finalizer).
pub(crate) fn derived_seed(seed: u64, replicate: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((replicate as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Threshold at which the linear truth reaches a target MTTF at `temp_use`
/// (MTTF given in data time units divided by `time_divisor`).
pub fn backsolve_linear_threshold(
    truth: &Truth,
    temp_use: f64,
    kelvin_offset: f64,
    target_mttf: f64,
    time_divisor: f64,
) -> Result<f64> {
    let Truth::Parametric { b0, b1, b2, .. } = *truth else {
        return Err(Error::InvalidArgument("threshold back-solve needs a parametric truth".into()));
    };
    let x = arrhenius_x(temp_use, kelvin_offset)?;
    Ok(b0 + b1 * (b2 * x).exp() * target_mttf * time_divisor)
}

/// Recovery design of the spline study: `levels` of {3, 6} and `times` of {5, 10, 15}.
pub fn recovery_scenario(levels: usize, times: usize) -> Result<SimulationScenario> {
    let temps = match levels {
        3 => vec![50.0, 65.0, 80.0],
        6 => vec![30.0, 40.0, 50.0, 60.0, 70.0, 80.0],
        _ => return Err(Error::InvalidArgument(format!("no design with {levels} levels"))),
    };
    let times = match times {
        5 => vec![8.0, 25.0, 75.0, 130.0, 170.0],
        10 => vec![5.0, 10.0, 30.0, 50.0, 70.0, 90.0, 110.0, 130.0, 150.0, 170.0],
        15 => vec![
            10.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 140.0,
            150.0, 170.0,
        ],
        _ => return Err(Error::InvalidArgument(format!("no design with {times} time points"))),
    };
    Ok(SimulationScenario {
        name: format!("recovery_n{levels}_j{}", times.len()),
        temps,
        times,
        reps_per_cell: 10,
        time_zero: None,
        truth: Truth::Spline {
            degree: 2,
            n_interior: 3,
            interior_knots: None,
            gamma: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.6],
            beta: 0.83,
            sigma: 0.019,
            rho: 0.2,
        },
        kelvin_offset: crate::dataset::DEFAULT_KELVIN_OFFSET,
        time_unit: "hours".into(),
        n_datasets: 200,
        full_datasets: Some(500),
        bootstrap: 0,
        alpha: 0.05,
        seed: 20240601,
        path_grid: 50,
        mttf: None,
        fit: FitControls::default(),
        selection: SelectionControls::default(),
    })
}

/// Misspecification design: linear truth, three levels, five aged times plus
/// a time-zero cell, MTTF at 30 C in weeks.
pub fn misspec_scenario() -> SimulationScenario {
    let truth = Truth::Parametric {
        b0: 1.0,
        b1: -3.5,
        b2: 0.3,
        sigma: 0.02,
        rho: 0.0,
    };
    // The truth starts at b0 = 1, so the back-solved level is also the fraction.
    let threshold = backsolve_linear_threshold(&truth, 30.0, 273.15, 82.60, 168.0)
        .expect("finite temperature");
    SimulationScenario {
        name: "misspecification".into(),
        temps: vec![50.0, 65.0, 80.0],
        times: vec![192.0, 600.0, 1800.0, 3120.0, 4320.0],
        reps_per_cell: 5,
        time_zero: Some(TimeZeroCell {
            temp_c: 50.0,
            reps: 10,
        }),
        truth,
        kelvin_offset: 273.15,
        time_unit: "hours".into(),
        n_datasets: 200,
        full_datasets: Some(600),
        bootstrap: 0,
        alpha: 0.05,
        seed: 20240602,
        path_grid: 200,
        mttf: Some(MttfQuery {
            temp_use: 30.0,
            threshold,
            relative: true,
            time_divisor: 168.0,
            provenance: "fraction of the initial level back-solved so the linear truth has MTTF \
                         82.60 weeks at 30 C"
                .into(),
        }),
        fit: FitControls::default(),
        selection: SelectionControls::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_on_the_path() {
        let mut sc = recovery_scenario(3, 5).unwrap();
        if let Truth::Spline { sigma, .. } = &mut sc.truth {
            *sigma = 0.0;
        }
        let data = generate_spline_data(&sc, &mut replicate_rng(1, 0)).unwrap();
        let spec = sc.truth_spec().unwrap();
        assert_eq!(spec.interior_knots.len(), 3);
        let hot = data.levels().last().unwrap();
        for cell in &hot.cells {
            let g = spec.value(&[1.0, 0.9, 0.8, 0.7, 0.6, 0.6], cell.time).unwrap();
            assert!(cell.readings.iter().all(|y| (y - g).abs() < 1e-15));
        }
    }

    #[test]
    fn perfect_correlation_gives_equal_readings() {
        let mut sc = recovery_scenario(3, 5).unwrap();
        if let Truth::Spline { rho, .. } = &mut sc.truth {
            *rho = 1.0;
        }
        let data = generate_spline_data(&sc, &mut replicate_rng(2, 0)).unwrap();
        for cell in data.cells() {
            assert!(cell.readings.iter().all(|y| (y - cell.readings[0]).abs() < 1e-15));
        }
    }

    #[test]
    fn parametric_truth_means() {
        let mut sc = misspec_scenario();
        if let Truth::Parametric { sigma, .. } = &mut sc.truth {
            *sigma = 0.0;
        }
        let data = generate_parametric_data(&sc, &mut replicate_rng(3, 0)).unwrap();
        assert_eq!(data.n(), 10 + 3 * 5 * 5);
        let zero = data.cells().find(|c| c.time == 0.0).unwrap();
        assert!(zero.readings.iter().all(|&y| y == 1.0));
        let last = |temp: f64| {
            data.cells()
                .find(|c| c.temp_c == temp && c.time == 4320.0)
                .unwrap()
                .readings[0]
        };
        assert!(last(80.0) < last(50.0));
    }

    #[test]
    fn threshold_anchor() {
        let sc = misspec_scenario();
        let d = sc.mttf.as_ref().unwrap().threshold;
        let x = arrhenius_x(30.0, 273.15).unwrap();
        let expect = 1.0 - 3.5 * (0.3 * x).exp() * 82.60 * 168.0;
        assert!((d - expect).abs() < 1e-15);
        assert!((d - 0.5).abs() < 0.01);
    }

    #[test]
    fn within_cell_correlation_converges() {
        let mut sc = recovery_scenario(6, 15).unwrap();
        sc.reps_per_cell = 2;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut rng = replicate_rng(9, 0);
        let mut cells = 0;
        while cells < 10_000 {
            let data = generate_spline_data(&sc, &mut rng).unwrap();
            let clean = {
                let mut quiet = sc.clone();
                if let Truth::Spline { sigma, .. } = &mut quiet.truth {
                    *sigma = 0.0;
                }
                generate_spline_data(&quiet, &mut replicate_rng(0, 0)).unwrap()
            };
            for (c, m) in data.cells().zip(clean.cells()) {
                let a = c.readings[0] - m.readings[0];
                let b = c.readings[1] - m.readings[1];
                num += a * b;
                den += 0.5 * (a * a + b * b);
                cells += 1;
            }
        }
        assert!((num / den - 0.2).abs() < 0.05);
    }
}
