//! Small dense Levenberg–Marquardt least-squares solver.
//!
//! Used by the detector-response and rate-histogram fits. The Jacobian is
//! formed by central finite differences in the (possibly reparameterized)
//! parameter space; the damped normal equations are solved with nalgebra.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("fit did not converge within {0} iterations")]
    FitDiverged(usize),
    #[error("normal equations singular")]
    Singular,
}

pub struct LmOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the relative cost change of an accepted step.
    pub cost_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iterations: 200, cost_tolerance: 1e-9, initial_damping: 1e-3 }
    }
}

pub struct LmSolution {
    pub params: Vec<f64>,
    /// Final sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    /// Inverse of JᵀJ at the solution (undamped), if invertible.
    pub covariance: Option<DMatrix<f64>>,
}

fn residual_vector<F>(f: &F, p: &[f64], n: usize) -> DVector<f64>
where
    F: Fn(&[f64], &mut Vec<f64>),
{
    let mut buf = Vec::with_capacity(n);
    f(p, &mut buf);
    DVector::from_vec(buf)
}

fn jacobian<F>(f: &F, p: &[f64], n: usize) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut Vec<f64>),
{
    let m = p.len();
    let mut j = DMatrix::zeros(n, m);
    let mut pw = p.to_vec();
    for k in 0..m {
        let h = 1e-6 * p[k].abs().max(1.0);
        pw[k] = p[k] + h;
        let plus = residual_vector(f, &pw, n);
        pw[k] = p[k] - h;
        let minus = residual_vector(f, &pw, n);
        pw[k] = p[k];
        for i in 0..n {
            j[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    j
}

/// Minimize `‖r(p)‖²` starting from `initial`. `residuals` writes the
/// residual vector (fixed length `n_residuals`) for the given parameters.
///
/// Damping starts at `initial_damping`, ×10 on a rejected step and ÷10 on an
/// accepted one.
pub fn minimize<F>(
    residuals: F,
    initial: &[f64],
    n_residuals: usize,
    opts: &LmOptions,
) -> Result<LmSolution, LmError>
where
    F: Fn(&[f64], &mut Vec<f64>),
{
    let mut p = DVector::from_column_slice(initial);
    let mut r = residual_vector(&residuals, p.as_slice(), n_residuals);
    let mut cost = r.norm_squared();
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let j = jacobian(&residuals, p.as_slice(), n_residuals);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;

        let mut accepted = false;
        // Inner loop: inflate damping until a step reduces the cost.
        for _ in 0..25 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let step = match a.lu().solve(&jtr) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = &p - &step;
            let rc = residual_vector(&residuals, candidate.as_slice(), n_residuals);
            let new_cost = rc.norm_squared();
            if new_cost.is_finite() && new_cost <= cost {
                let rel_change = (cost - new_cost) / cost.max(1e-300);
                p = candidate;
                r = rc;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-14);
                accepted = true;
                if rel_change < opts.cost_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // Damping saturated without improvement: local minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(LmError::FitDiverged(opts.max_iterations));
    }
    let j = jacobian(&residuals, p.as_slice(), n_residuals);
    let covariance = (j.transpose() * &j).try_inverse();
    Ok(LmSolution { params: p.as_slice().to_vec(), cost, iterations, covariance })
}
