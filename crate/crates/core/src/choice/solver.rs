//! Generic perturbed-argmax solver over the open simplex.
//!
//! Maximizes `f(z) = z'p - Q(z)` by damped Newton in reduced coordinates: the
//! largest coordinate is eliminated through `sum z = 1`, so small coordinates
//! keep full floating-point resolution. Steps are cut back to stay inside the
//! open simplex and then halved until an Armijo condition holds. If Newton
//! stalls, entropic mirror ascent takes over.

use nalgebra::{DMatrix, DVector};

use super::perturbation::PerturbationModel;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITERS: usize = 200;
const MAX_MIRROR_ITERS: usize = 20_000;
const ARMIJO_C: f64 = 1e-4;
const BOUNDARY_FRACTION: f64 = 0.9;

/// Norm of the tangent-space projection of `p - ∇Q(z)`.
pub fn stationarity_residual(model: &PerturbationModel, p: &[f64], z: &[f64]) -> f64 {
    let mut g = vec![0.0; z.len()];
    model.gradient(z, &mut g);
    for (gi, pi) in g.iter_mut().zip(p) {
        *gi = pi - *gi;
    }
    tangent_norm(&g)
}

fn tangent_norm(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>().sqrt()
}

fn objective(model: &PerturbationModel, p: &[f64], z: &[f64]) -> f64 {
    z.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() - model.value(z)
}

fn is_interior(z: &[f64]) -> bool {
    z.iter().all(|&v| v > 0.0 && v.is_finite())
}

/// The unique maximizer of `z'p - Q(z)` over the open simplex, started from the
/// barycenter.
pub fn solve_choice(model: &PerturbationModel, p: &[f64], tol: f64) -> Result<Vec<f64>> {
    solve_choice_from(model, p, tol, None)
}

/// Same as [`solve_choice`], warm-started from `start` when it is interior.
pub fn solve_choice_from(
    model: &PerturbationModel,
    p: &[f64],
    tol: f64,
    start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let n = model.n();
    if p.len() != n {
        return Err(Error::param(format!("payoff has length {}, model has {n} strategies", p.len())));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("payoff entries must be finite"));
    }
    let mut z = match start {
        Some(s) if s.len() == n && is_interior(s) => {
            let total: f64 = s.iter().sum();
            s.iter().map(|v| v / total).collect()
        }
        _ => vec![1.0 / n as f64; n],
    };

    match newton(model, p, tol, &mut z) {
        Ok(()) => Ok(z),
        Err(_) => {
            log::debug!("newton stalled, switching to mirror ascent");
            mirror_ascent(model, p, tol, &mut z)?;
            Ok(z)
        }
    }
}

fn newton(model: &PerturbationModel, p: &[f64], tol: f64, z: &mut Vec<f64>) -> Result<()> {
    let n = z.len();
    let m = n - 1;
    let mut grad = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    let mut trial = vec![0.0; n];
    let mut dz = vec![0.0; n];

    for iter in 0..MAX_NEWTON_ITERS {
        model.gradient(z, &mut grad);
        let resid: Vec<f64> = p.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let res_norm = tangent_norm(&resid);
        if res_norm <= tol {
            return Ok(());
        }
        model.hessian(z, &mut hess);

        let pivot = argmax(z);
        let free: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
        let g = DVector::from_iterator(m, free.iter().map(|&i| resid[i] - resid[pivot]));
        let a = DMatrix::from_fn(m, m, |r, c| {
            let (i, j) = (free[r], free[c]);
            hess[(i, j)] - hess[(i, pivot)] - hess[(pivot, j)] + hess[(pivot, pivot)]
        });
        let d = match a.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => match a.lu().solve(&g) {
                Some(d) => d,
                None => {
                    return Err(Error::Solver { iterations: iter, residual: res_norm, last_iterate: z.clone() })
                }
            },
        };

        dz.iter_mut().for_each(|v| *v = 0.0);
        let mut sum = 0.0;
        for (k, &i) in free.iter().enumerate() {
            dz[i] = d[k];
            sum += d[k];
        }
        dz[pivot] = -sum;

        // largest step keeping every coordinate positive
        let mut t_max = f64::INFINITY;
        for i in 0..n {
            if dz[i] < 0.0 {
                t_max = t_max.min(z[i] / -dz[i]);
            }
        }
        let mut t = if t_max <= 1.0 { BOUNDARY_FRACTION * t_max } else { 1.0 };

        let f0 = objective(model, p, z);
        let slope = g.dot(&d);
        let mut accepted = false;
        while t > 1e-18 {
            for i in 0..n {
                trial[i] = z[i] + t * dz[i];
            }
            if is_interior(&trial) {
                let f1 = objective(model, p, &trial);
                if f1 >= f0 + ARMIJO_C * t * slope
                    || stationarity_residual(model, p, &trial) < res_norm
                {
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Solver { iterations: iter, residual: res_norm, last_iterate: z.clone() });
        }
        // renormalize against drift in the sum constraint
        let total: f64 = trial.iter().sum();
        for i in 0..n {
            z[i] = trial[i] / total;
        }
    }
    let residual = stationarity_residual(model, p, z);
    if residual <= tol {
        Ok(())
    } else {
        Err(Error::Solver { iterations: MAX_NEWTON_ITERS, residual, last_iterate: z.clone() })
    }
}

fn mirror_ascent(model: &PerturbationModel, p: &[f64], tol: f64, z: &mut Vec<f64>) -> Result<()> {
    let n = z.len();
    if !is_interior(z) {
        *z = vec![1.0 / n as f64; n];
    }
    let mut grad = vec![0.0; n];
    let mut step = 1.0;
    let mut f = objective(model, p, z);
    for _ in 0..MAX_MIRROR_ITERS {
        model.gradient(z, &mut grad);
        let g: Vec<f64> = p.iter().zip(&grad).map(|(a, b)| a - b).collect();
        if tangent_norm(&g) <= tol {
            return Ok(());
        }
        let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        loop {
            let mut trial: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi * (step * (gi - gmax)).exp()).collect();
            let total: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|v| *v /= total);
            if is_interior(&trial) {
                let f1 = objective(model, p, &trial);
                if f1 >= f {
                    *z = trial;
                    f = f1;
                    step *= 1.5;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-20 {
                let residual = stationarity_residual(model, p, z);
                return Err(Error::Solver { iterations: 0, residual, last_iterate: z.clone() });
            }
        }
    }
    let residual = stationarity_residual(model, p, z);
    Err(Error::Solver { iterations: MAX_MIRROR_ITERS, residual, last_iterate: z.clone() })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
