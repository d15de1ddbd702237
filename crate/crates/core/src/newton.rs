//! Damped Newton iteration with a central finite-difference Jacobian.

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, LuFactor, Matrix, Vector};
use crate::scalar::Scalar;

/// Nonlinear solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig<T> {
    /// Absolute tolerance on the infinity norm of the residual.
    pub tol: T,
    pub max_iter: usize,
    /// Step halvings tried when a full step increases the residual.
    pub max_halvings: usize,
    /// Relative finite-difference increment for the Jacobian.
    pub fd_step: T,
}

impl<T: Scalar> Default for NewtonConfig<T> {
    fn default() -> Self {
        NewtonConfig {
            tol: T::default_tolerance(),
            max_iter: 50,
            max_halvings: 20,
            fd_step: newton_fd_step(),
        }
    }
}

impl<T: Scalar> NewtonConfig<T> {
    pub fn with_tol(tol: T) -> Self {
        NewtonConfig { tol, ..Self::default() }
    }
}

/// Converged Newton iterate.
#[derive(Clone, Debug)]
pub struct NewtonSolution<T> {
    pub x: Vector<T>,
    pub iterations: usize,
    pub residual_norm: T,
}

/// Relative finite-difference increment for algebraic Jacobians: `1e-7` in
/// double precision, `sqrt(eps)` when that is larger.
pub fn default_fd_step<T: Scalar>() -> T {
    T::lit(1e-7).max(T::epsilon().sqrt())
}

/// Relative increment used inside Newton. Central differences carry no
/// truncation error on linear and quadratic residuals, so a large increment
/// keeps the roundoff in the Jacobian near `1e-13` and Newton exact in one
/// iteration on linear systems.
pub fn newton_fd_step<T: Scalar>() -> T {
    T::lit(1e-3)
}

/// Central-difference Jacobian of `f` at `x`; column `j` uses the increment
/// `step * (1 + |x_j|)`.
pub fn fd_jacobian<T, F>(f: &mut F, x: &[T], m: usize, step: T) -> Result<Matrix<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Vector<T>>,
{
    let n = x.len();
    let mut jac = Matrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let delta = step * (T::one() + x[j].abs());
        let (hi, lo) = (x[j] + delta, x[j] - delta);
        xp[j] = hi;
        let fp = f(&xp)?;
        xp[j] = lo;
        let fm = f(&xp)?;
        xp[j] = x[j];
        let width = hi - lo;
        if fp.len() != m || fm.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "residual length {} differs from expected {m}",
                fp.len()
            )));
        }
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / width;
        }
    }
    if jac.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::EvaluationFailure("non-finite Jacobian entry".into()));
    }
    Ok(jac)
}

/// Solves `residual(x) = 0` starting from `x0`.
///
/// The Jacobian is rebuilt and refactorized every iteration. A singular
/// Jacobian at the starting point is reported as [`Error::SingularMatrix`]
/// (a structural problem); later singular Jacobians, iteration exhaustion and
/// non-finite residuals are reported as [`Error::NewtonDivergence`].
pub fn newton_solve<T, F>(mut residual: F, x0: &[T], cfg: &NewtonConfig<T>) -> Result<NewtonSolution<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Vector<T>>,
{
    let mut x = Vector::from_vec(x0.to_vec());
    let mut r = residual(&x)?;
    let m = r.len();
    let mut rnorm = r.norm_inf();
    let diverged = |iterations: usize, rnorm: T| Error::NewtonDivergence {
        iterations,
        residual: rnorm.as_f64(),
    };
    if !rnorm.is_finite() {
        return Err(diverged(0, rnorm));
    }
    let step = cfg.fd_step;
    for iter in 0..=cfg.max_iter {
        if rnorm <= cfg.tol {
            return Ok(NewtonSolution {
                x,
                iterations: iter,
                residual_norm: rnorm,
            });
        }
        if iter == cfg.max_iter {
            break;
        }
        let jac = fd_jacobian(&mut residual, &x, m, step)?;
        let lu = match LuFactor::new(&jac) {
            Ok(lu) => lu,
            Err(e @ Error::SingularMatrix { .. }) if iter == 0 => return Err(e),
            Err(_) => return Err(diverged(iter, rnorm)),
        };
        let dx = lu.solve(&r.scaled(-T::one()))?;
        let mut lambda = T::one();
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = x.axpy(lambda, &dx);
            let rc = residual(&cand)?;
            let rcn = norm_inf(&rc);
            if rcn.is_finite() && rcn < rnorm {
                accepted = Some((cand, rc, rcn));
                break;
            }
            if rcn.is_finite() {
                accepted = accepted.or(Some((cand, rc, rcn)));
            }
            lambda = lambda * T::lit(0.5);
        }
        let (xn, rn, rnn) = accepted.ok_or_else(|| diverged(iter + 1, rnorm))?;
        x = xn;
        r = rn;
        rnorm = rnn;
    }
    Err(diverged(cfg.max_iter, rnorm))
}
