//! Damped Newton-Raphson maximization.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Converged once the Euclidean gradient norm falls below this.
    pub gradient_tol: f64,
    /// Largest allowed change of any coordinate in a single step.
    pub max_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 100,
            gradient_tol: 1e-6,
            max_step: 5.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
}

impl NewtonResult {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.norm()
    }

    /// Inverse observed information, if the Hessian is negative definite.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        (-&self.hessian).cholesky().map(|c| c.inverse())
    }
}

#[derive(Clone, Debug)]
pub struct NewtonFailure {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub last: Option<NewtonResult>,
}

/// Function value, gradient and Hessian at a point; `None` when undefined.
pub type Evaluation = Option<(f64, DVector<f64>, DMatrix<f64>)>;

/// Maximizes `value` starting from `x0`.
///
/// `full` returns value, gradient and Hessian; `value` is the cheap
/// objective used while halving steps. Where the Hessian is not negative
/// definite the step is Levenberg-damped.
#[allow(clippy::result_large_err)]
pub fn maximize<F, V>(
    x0: DVector<f64>,
    full: F,
    value: V,
    opts: NewtonOptions,
) -> Result<NewtonResult, NewtonFailure>
where
    F: Fn(&DVector<f64>) -> Evaluation,
    V: Fn(&DVector<f64>) -> f64,
{
    let fail = |iterations, gradient_norm, last| NewtonFailure {
        iterations,
        gradient_norm,
        last,
    };
    let Some((mut f, mut g, mut h)) = full(&x0) else {
        return Err(fail(0, f64::NAN, None));
    };
    let mut x = x0;
    let dim = x.len();
    for iter in 0..=opts.max_iter {
        let gnorm = g.norm();
        if gnorm < opts.gradient_tol {
            return Ok(NewtonResult {
                x,
                value: f,
                gradient: g,
                hessian: h,
                iterations: iter,
            });
        }
        if iter == opts.max_iter || !gnorm.is_finite() {
            break;
        }

        let neg_h = -&h;
        let scale = (0..dim).map(|i| neg_h[(i, i)].abs()).fold(1.0, f64::max);
        let mut mu = 0.0;
        let mut step = loop {
            let mut damped = neg_h.clone();
            for i in 0..dim {
                damped[(i, i)] += mu;
            }
            if let Some(ch) = damped.cholesky() {
                break ch.solve(&g);
            }
            mu = if mu == 0.0 { 1e-8 * scale } else { mu * 10.0 };
            if mu > 1e12 * scale {
                break g.clone() / scale;
            }
        };
        let largest = step.amax();
        if largest > opts.max_step {
            step *= opts.max_step / largest;
        }

        let slack = 1e-13 * f.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &x + &step * t;
            let fc = value(&candidate);
            if fc.is_finite() && fc >= f - slack {
                if let Some(eval) = full(&candidate) {
                    accepted = Some((candidate, eval));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((xn, (fnew, gnew, hnew))) => {
                x = xn;
                f = fnew;
                g = gnew;
                h = hnew;
            }
            None => {
                return Err(fail(
                    iter,
                    gnorm,
                    Some(NewtonResult {
                        x,
                        value: f,
                        gradient: g,
                        hessian: h,
                        iterations: iter,
                    }),
                ))
            }
        }
    }
    let gnorm = g.norm();
    Err(fail(
        opts.max_iter,
        gnorm,
        Some(NewtonResult {
            x,
            value: f,
            gradient: g,
            hessian: h,
            iterations: opts.max_iter,
        }),
    ))
}
