//! Damped (Levenberg-style) weighted least squares with a numeric Jacobian.
//!
//! Deterministic for a given residual function, initial guess and
//! configuration; no randomness anywhere in the solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, StarkError};

pub struct LmConfig {
    pub max_iter: usize,
    /// Relative cost-decrease threshold for convergence.
    pub ftol: f64,
    /// Relative step-size threshold for convergence.
    pub xtol: f64,
    pub lambda0: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-11,
            lambda0: 1e-3,
        }
    }
}

pub struct LmResult {
    pub params: Vec<f64>,
    /// Unscaled covariance (J^T J)^-1 at the solution.
    pub jtj_inv: DMatrix<f64>,
    /// Final weighted sum of squared residuals.
    pub cost: f64,
}

/// Minimize the sum of squares of `resid` over the parameters.
///
/// `resid(p, out)` fills `out` with the (already weighted) residual vector.
/// `scales` gives a typical magnitude per parameter, used for the finite
/// difference step and the relative step-size test.
pub fn minimize<F>(
    mut resid: F,
    n_resid: usize,
    p0: &[f64],
    scales: &[f64],
    cfg: &LmConfig,
) -> Result<LmResult>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n_par = p0.len();
    if n_resid < n_par {
        return Err(StarkError::FitFailed(format!(
            "{n_resid} residuals cannot constrain {n_par} parameters"
        )));
    }
    let mut p = p0.to_vec();
    let mut r = vec![0.0; n_resid];
    resid(&p, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    if !cost.is_finite() {
        return Err(StarkError::FitFailed(
            "non-finite cost at the initial guess".into(),
        ));
    }

    let mut lambda = cfg.lambda0;
    let mut jac = DMatrix::zeros(n_resid, n_par);
    let mut r_pert = vec![0.0; n_resid];
    let mut converged = false;
    let mut iter = 0;

    while iter < cfg.max_iter {
        iter += 1;
        // forward-difference Jacobian
        for j in 0..n_par {
            let h = 1e-7 * p[j].abs().max(scales[j].abs().max(1e-12));
            let saved = p[j];
            p[j] = saved + h;
            resid(&p, &mut r_pert);
            p[j] = saved;
            for i in 0..n_resid {
                jac[(i, j)] = (r_pert[i] - r[i]) / h;
            }
        }
        let rvec = DVector::from_column_slice(&r);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * &rvec;

        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for j in 0..n_par {
                let d = damped[(j, j)];
                damped[(j, j)] = d + lambda * d.max(1e-30);
            }
            let step = match damped.clone().lu().solve(&(-&jtr)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            resid(&trial, &mut r_pert);
            let trial_cost: f64 = r_pert.iter().map(|v| v * v).sum();
            if trial_cost.is_finite() && trial_cost < cost {
                let rel_step = step
                    .iter()
                    .enumerate()
                    .map(|(j, s)| s.abs() / p[j].abs().max(scales[j].abs().max(1e-12)))
                    .fold(0.0f64, f64::max);
                let rel_drop = (cost - trial_cost) / cost.max(1e-300);
                p = trial;
                std::mem::swap(&mut r, &mut r_pert);
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-14);
                improved = true;
                if rel_drop < cfg.ftol || rel_step < cfg.xtol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                // no descent direction left at this point: treat as converged
                converged = true;
                break;
            }
        }
        if converged || !improved {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(StarkError::FitFailed(format!(
            "no convergence after {} iterations (cost {cost:.6e})",
            cfg.max_iter
        )));
    }

    // covariance from the Gauss-Newton approximation at the solution
    for j in 0..n_par {
        let h = 1e-7 * p[j].abs().max(scales[j].abs().max(1e-12));
        let saved = p[j];
        p[j] = saved + h;
        resid(&p, &mut r_pert);
        p[j] = saved;
        for i in 0..n_resid {
            jac[(i, j)] = (r_pert[i] - r[i]) / h;
        }
    }
    let jtj = jac.transpose() * &jac;
    let jtj_inv = jtj
        .try_inverse()
        .ok_or_else(|| StarkError::FitFailed("singular normal matrix at solution".into()))?;

    Ok(LmResult {
        params: p,
        jtj_inv,
        cost,
    })
}
