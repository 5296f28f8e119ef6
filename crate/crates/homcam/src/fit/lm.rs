//! Damped Gauss-Newton least squares with a Levenberg damping schedule.
//!
//! Parameters can be bounded through smooth transforms: the optimizer walks
//! an unconstrained internal space, the model sees external values.
//! Jacobians are central finite differences in the internal space;
//! parameter errors come from the inverse normal matrix mapped back through
//! the transform derivatives.

use nalgebra::{DMatrix, DVector};

use super::FitError;

/// Smooth reparameterization of one fit parameter.
#[derive(Debug, Clone, Copy)]
pub enum Transform {
    Linear,
    /// external = exp(internal), keeps the parameter > 0
    LogPositive,
    /// external in (lo, hi) through a logistic map
    Logistic { lo: f64, hi: f64 },
}

impl Transform {
    pub fn to_internal(&self, x: f64) -> f64 {
        match *self {
            Transform::Linear => x,
            Transform::LogPositive => x.max(1e-300).ln(),
            Transform::Logistic { lo, hi } => {
                let u = ((x - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
                (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn to_external(&self, e: f64) -> f64 {
        match *self {
            Transform::Linear => e,
            Transform::LogPositive => e.exp(),
            Transform::Logistic { lo, hi } => {
                let s = 1.0 / (1.0 + (-e).exp());
                lo + (hi - lo) * s
            }
        }
    }

    fn dext_dint(&self, e: f64) -> f64 {
        match *self {
            Transform::Linear => 1.0,
            Transform::LogPositive => e.exp(),
            Transform::Logistic { lo, hi } => {
                let s = 1.0 / (1.0 + (-e).exp());
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Converged when the relative chi² change of an accepted step drops
    /// below this.
    pub rel_tol: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-9,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    /// Best-fit parameters, external space.
    pub params: Vec<f64>,
    /// 1-sigma parameter errors, external space.
    pub errors: Vec<f64>,
    pub chi2: f64,
    pub ndf: i64,
    pub n_iter: usize,
    pub converged: bool,
    /// Covariance in external space (transform-mapped).
    pub covariance: Option<DMatrix<f64>>,
}

fn eval_residuals<F>(f: &F, transforms: &[Transform], internal: &[f64], out: &mut Vec<f64>)
where
    F: Fn(&[f64], &mut Vec<f64>),
{
    let external: Vec<f64> = internal
        .iter()
        .zip(transforms)
        .map(|(&e, t)| t.to_external(e))
        .collect();
    out.clear();
    f(&external, out);
}

fn chi2_of(res: &[f64]) -> f64 {
    res.iter().map(|r| r * r).sum()
}

/// Minimize the sum of squared residuals.
///
/// `residual_fn(params_external, &mut out)` must push one (already weighted)
/// residual per data point; the residual count must stay fixed.
pub fn fit_least_squares<F>(
    residual_fn: F,
    init_external: &[f64],
    transforms: &[Transform],
    opts: &LmOptions,
) -> Result<LmFit, FitError>
where
    F: Fn(&[f64], &mut Vec<f64>),
{
    let n_par = init_external.len();
    assert_eq!(n_par, transforms.len(), "one transform per parameter");
    let mut internal: Vec<f64> = init_external
        .iter()
        .zip(transforms)
        .map(|(&x, t)| t.to_internal(x))
        .collect();

    let mut res = Vec::new();
    eval_residuals(&residual_fn, transforms, &internal, &mut res);
    let n_res = res.len();
    if n_res < n_par {
        return Err(FitError::NotEnoughData {
            what: "fewer residuals than parameters",
            got: n_res,
            need: n_par,
        });
    }
    let mut chi2 = chi2_of(&res);
    if !chi2.is_finite() {
        return Err(FitError::Numerical {
            reason: "initial residuals not finite".into(),
        });
    }

    let mut lambda = opts.lambda_init;
    let mut converged = false;
    let mut n_iter = 0usize;
    let mut jac = DMatrix::<f64>::zeros(n_res, n_par);
    let mut r_plus = Vec::new();
    let mut r_minus = Vec::new();

    for iter in 0..opts.max_iter {
        n_iter = iter + 1;
        // central-difference jacobian in internal space
        for j in 0..n_par {
            let h = opts.fd_step * internal[j].abs().max(1.0);
            let mut p = internal.clone();
            p[j] += h;
            eval_residuals(&residual_fn, transforms, &p, &mut r_plus);
            p[j] = internal[j] - h;
            eval_residuals(&residual_fn, transforms, &p, &mut r_minus);
            if r_plus.len() != n_res || r_minus.len() != n_res {
                return Err(FitError::Numerical {
                    reason: "residual count changed during fit".into(),
                });
            }
            for i in 0..n_res {
                jac[(i, j)] = (r_plus[i] - r_minus[i]) / (2.0 * h);
            }
        }
        let r_vec = DVector::from_column_slice(&res);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * &r_vec;

        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for j in 0..n_par {
                let d = jtj[(j, j)];
                damped[(j, j)] = d + lambda * d.max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= opts.lambda_up;
                continue;
            };
            let step = chol.solve(&jtr);
            let trial: Vec<f64> = internal
                .iter()
                .enumerate()
                .map(|(j, &v)| v - step[j])
                .collect();
            let mut r_trial = Vec::new();
            eval_residuals(&residual_fn, transforms, &trial, &mut r_trial);
            if r_trial.len() != n_res {
                return Err(FitError::Numerical {
                    reason: "residual count changed during fit".into(),
                });
            }
            let c_trial = chi2_of(&r_trial);
            if c_trial.is_finite() && c_trial <= chi2 {
                let rel = (chi2 - c_trial) / chi2.max(1e-300);
                internal = trial;
                res = r_trial;
                chi2 = c_trial;
                lambda = (lambda * opts.lambda_down).max(1e-12);
                improved = true;
                if rel < opts.rel_tol {
                    converged = true;
                }
                break;
            }
            lambda *= opts.lambda_up;
            if lambda > 1e14 {
                break;
            }
        }
        if converged {
            break;
        }
        if !improved {
            // cannot improve further; treat the stall as convergence at the
            // current point (the damping already probed a wide range)
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(FitError::NoConvergence {
            n_iter,
            chi2,
            params: internal
                .iter()
                .zip(transforms)
                .map(|(&e, t)| t.to_external(e))
                .collect(),
        });
    }

    // covariance at the optimum: recompute the jacobian, invert JtJ and map
    // through the transform derivatives
    for j in 0..n_par {
        let h = opts.fd_step * internal[j].abs().max(1.0);
        let mut p = internal.clone();
        p[j] += h;
        eval_residuals(&residual_fn, transforms, &p, &mut r_plus);
        p[j] = internal[j] - h;
        eval_residuals(&residual_fn, transforms, &p, &mut r_minus);
        for i in 0..n_res {
            jac[(i, j)] = (r_plus[i] - r_minus[i]) / (2.0 * h);
        }
    }
    let jtj = jac.transpose() * &jac;
    let covariance = jtj.clone().try_inverse().or_else(|| {
        let mut ridged = jtj;
        for j in 0..n_par {
            ridged[(j, j)] += 1e-9 * ridged[(j, j)].abs().max(1e-12);
        }
        ridged.try_inverse()
    });

    let params: Vec<f64> = internal
        .iter()
        .zip(transforms)
        .map(|(&e, t)| t.to_external(e))
        .collect();
    let (errors, cov_ext) = match &covariance {
        Some(cov) => {
            let d: Vec<f64> = internal
                .iter()
                .zip(transforms)
                .map(|(&e, t)| t.dext_dint(e))
                .collect();
            let mut ext = cov.clone();
            for i in 0..n_par {
                for j in 0..n_par {
                    ext[(i, j)] *= d[i] * d[j];
                }
            }
            let errs = (0..n_par).map(|j| ext[(j, j)].max(0.0).sqrt()).collect();
            (errs, Some(ext))
        }
        None => (vec![f64::NAN; n_par], None),
    };

    Ok(LmFit {
        params,
        errors,
        chi2,
        ndf: n_res as i64 - n_par as i64,
        n_iter,
        converged,
        covariance: cov_ext,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_line_fit_exactly() {
        // y = 2x + 1 with unit weights
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let res = |p: &[f64], out: &mut Vec<f64>| {
            for (x, y) in xs.iter().zip(&ys) {
                out.push(y - (p[0] * x + p[1]));
            }
        };
        let fit = fit_least_squares(
            res,
            &[1.0, 0.0],
            &[Transform::Linear, Transform::Linear],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((fit.params[0] - 2.0).abs() < 1e-9);
        assert!((fit.params[1] - 1.0).abs() < 1e-9);
        assert!(fit.chi2 < 1e-16);
    }

    #[test]
    fn nonlinear_exponential_with_bounds() {
        // y = 3 exp(-x/5), amplitude linear, decay constant kept positive
        let xs: Vec<f64> = (0..30).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-x / 5.0).exp()).collect();
        let res = |p: &[f64], out: &mut Vec<f64>| {
            for (x, y) in xs.iter().zip(&ys) {
                out.push(y - p[0] * (-x / p[1]).exp());
            }
        };
        let fit = fit_least_squares(
            res,
            &[1.0, 2.0],
            &[Transform::Linear, Transform::LogPositive],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((fit.params[0] - 3.0).abs() < 1e-6, "{:?}", fit.params);
        assert!((fit.params[1] - 5.0).abs() < 1e-6);
        assert!(fit.errors.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn logistic_transform_round_trips() {
        let t = Transform::Logistic { lo: 0.0, hi: 1.0 };
        for v in [0.01, 0.42, 0.5, 0.99] {
            let e = t.to_internal(v);
            assert!((t.to_external(e) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_match_analytic_weighted_mean() {
        // constant model fitted to unit-error data: error of mean = 1/sqrt(n)
        let ys = [1.0, 2.0, 3.0, 4.0];
        let res = |p: &[f64], out: &mut Vec<f64>| {
            for y in ys {
                out.push(y - p[0]);
            }
        };
        let fit = fit_least_squares(res, &[0.0], &[Transform::Linear], &LmOptions::default())
            .unwrap();
        assert!((fit.params[0] - 2.5).abs() < 1e-9);
        assert!((fit.errors[0] - 0.5).abs() < 1e-6);
        assert_eq!(fit.ndf, 3);
    }
}
