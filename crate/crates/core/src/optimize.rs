//! Derivative-free optimizers: bounded scalar search and Nelder–Mead.

/// Golden-section search for a maximum of `f` on `[lo, hi]`, stopping once the
/// bracket is narrower than `width`. Returns the best point evaluated.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, width: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = sanitize_max(f(x1));
    let mut f2 = sanitize_max(f(x2));
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    while b - a > width {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = sanitize_max(f(x1));
            if f1 > best.1 {
                best = (x1, f1);
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = sanitize_max(f(x2));
            if f2 > best.1 {
                best = (x2, f2);
            }
        }
    }
    best
}

fn sanitize_max(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Brent's bounded minimizer (golden section with parabolic steps).
pub fn brent_min<F>(mut f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const GOLDEN: f64 = 0.381_966_011_250_105;
    let sqrt_eps = f64::EPSILON.sqrt();
    let sanitize = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = sanitize(f(x));
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = sanitize(f(u));
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Maximizes `f` on `[lo, hi]`: a uniform scan of `grid` points locates the
/// basin, then Brent refines between the neighbours of the best grid point.
pub fn grid_brent_max<F>(mut f: F, lo: f64, hi: f64, grid: usize, xtol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let grid = grid.max(3);
    let step = (hi - lo) / (grid - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_i = 0;
    for i in 0..grid {
        let x = if i == grid - 1 { hi } else { lo + step * i as f64 };
        let fx = sanitize_max(f(x));
        if fx > best.1 {
            best = (x, fx);
            best_i = i;
        }
    }
    let a = lo + step * best_i.saturating_sub(1) as f64;
    let b = (lo + step * (best_i + 1) as f64).min(hi);
    let (x, fneg) = brent_min(|x| -f(x), a, b, xtol);
    if -fneg >= best.1 {
        (x, -fneg)
    } else {
        best
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Relative spread of simplex objective values at convergence.
    pub ftol: f64,
    /// Simplex diameter at convergence, relative to `1 + |x|`.
    pub xtol: f64,
    /// Restarts from the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 20_000,
            ftol: 1e-10,
            xtol: 1e-10,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization from `x0` with initial edge lengths `step`.
pub fn nelder_mead<F>(
    f: &mut F,
    x0: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let dim = x0.len();
    let mut evals = 0;
    let mut incumbent = (x0.to_vec(), eval(x0));
    evals += 1;
    let mut converged = false;

    for round in 0..=opts.restarts {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push(incumbent.clone());
        for i in 0..dim {
            let mut x = incumbent.0.clone();
            let h = if round == 0 { step[i] } else { step[i] * 0.1f64.powi(round as i32) };
            x[i] += if h == 0.0 { 1e-4 } else { h };
            let fx = eval(&x);
            evals += 1;
            simplex.push((x, fx));
        }
        converged = false;
        while evals < opts.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (f_lo, f_hi) = (simplex[0].1, simplex[dim].1);
            let spread = (f_hi - f_lo).abs();
            let diameter = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            let scale = 1.0 + simplex[0].0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if spread <= opts.ftol * 0.5 * (f_lo.abs() + f_hi.abs()) + 1e-300
                && diameter <= opts.xtol * scale
            {
                converged = true;
                break;
            }
            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
                .collect();
            let worst = simplex[dim].0.clone();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(1.0);
            let fr = eval(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe);
                evals += 1;
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[dim].1 {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                evals += 1;
                if fc < simplex[dim].1.min(fr) {
                    simplex[dim] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let x: Vec<f64> = vertex
                            .0
                            .iter()
                            .zip(&best)
                            .map(|(v, b)| b + 0.5 * (v - b))
                            .collect();
                        let fx = eval(&x);
                        *vertex = (x, fx);
                    }
                    evals += dim;
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = incumbent.1 - simplex[0].1;
        let settled = improved <= opts.ftol * incumbent.1.abs().max(1e-300);
        if simplex[0].1 <= incumbent.1 {
            incumbent = simplex[0].clone();
        }
        if (round > 0 && settled) || evals >= opts.max_evals {
            break;
        }
    }
    NelderMeadResult {
        x: incumbent.0,
        fx: incumbent.1,
        evals,
        converged,
    }
}

/// Runs [`nelder_mead`] from every start and keeps the best result.
pub fn nelder_mead_multistart<F>(
    f: &mut F,
    starts: &[Vec<f64>],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> Option<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    starts
        .iter()
        .map(|x0| nelder_mead(f, x0, step, opts))
        .filter(|r| r.fx.is_finite())
        .min_by(|a, b| a.fx.total_cmp(&b.fx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_section_max(|x| -(x - 0.83f64).powi(2), 0.0, 5.0, 1e-6);
        assert!((x - 0.83).abs() < 1e-6);
        assert!(fx <= 0.0);
    }

    #[test]
    fn brent_handles_asymmetric_functions() {
        let (x, _) = brent_min(|x: f64| x.exp() - 2.0 * x, 0.0, 3.0, 1e-10);
        assert!((x - 2f64.ln()).abs() < 1e-8);
        let (x, _) = brent_min(|x: f64| x, 0.2, 1.0, 1e-10);
        assert!((x - 0.2).abs() < 1e-8);
    }

    #[test]
    fn grid_brent_beats_grid() {
        let f = |x: f64| (5.0 * x).sin() + 0.3 * x;
        let (x, fx) = grid_brent_max(f, 0.0, 3.0, 30, 1e-9);
        for i in 0..=300 {
            assert!(fx >= f(3.0 * i as f64 / 300.0) - 1e-12);
        }
        assert!(x > 0.0 && x < 3.0);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(&mut f, &[-1.2, 1.0], &[0.5, 0.5], &NelderMeadOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn multistart_picks_global_basin() {
        let mut f = |x: &[f64]| (x[0] * x[0] - 4.0).powi(2) + 0.1 * (x[0] - 2.0).powi(2);
        let starts = vec![vec![-3.0], vec![3.0]];
        let r = nelder_mead_multistart(&mut f, &starts, &[0.1], &NelderMeadOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-6);
    }
}
