//! Generic stacked-estimating-equation sandwich variance engine.
//!
//! An M-estimator theta-hat solves `sum_i lambda(Z_i, theta) = 0` for a
//! stacked moment function lambda. Under standard regularity (Stefanski &
//! Boos, 2002, "The calculus of M-estimation"), its asymptotic covariance is
//! the sandwich
//!
//! ```text
//!     Cov(theta-hat) ~ A^-1 B A^-T / N,
//!     A = E[d lambda / d theta],    B = E[lambda lambda'],
//! ```
//!
//! estimated here with empirical means, a central-finite-difference Jacobian
//! for A, and QR solves with an explicit condition check. The engine is
//! deliberately learner-agnostic: callers describe their estimator as a
//! moment function over row indices, and nuisance estimation error
//! propagates into the variance exactly insofar as the nuisance's own score
//! equations are stacked into lambda.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Root tolerance: the supplied theta-hat must zero the mean moment to this
/// max-norm.
pub const ROOT_TOL: f64 = 1e-6;
/// Condition-number ceiling for the bread matrix A.
pub const MAX_CONDITION: f64 = 1e10;

/// A stacked estimating-equation system at its solution.
pub struct EstimatingSystem<'a> {
    labels: Vec<String>,
    theta_hat: DVector<f64>,
    n_rows: usize,
    lambda: Box<dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Sync + 'a>,
}

impl<'a> EstimatingSystem<'a> {
    /// Wrap a moment function and verify the root condition
    /// `|(1/N) sum_i lambda(i, theta_hat)|_inf < 1e-6`.
    pub fn new(
        labels: Vec<String>,
        theta_hat: DVector<f64>,
        n_rows: usize,
        lambda: impl Fn(usize, &DVector<f64>) -> DVector<f64> + Sync + 'a,
    ) -> Result<Self> {
        let dim = theta_hat.len();
        if labels.len() != dim {
            return Err(Error::Variance(format!(
                "{} labels for {dim} parameters",
                labels.len()
            )));
        }
        if n_rows == 0 {
            return Err(Error::Variance("empty estimating system".into()));
        }
        let sys = EstimatingSystem {
            labels,
            theta_hat,
            n_rows,
            lambda: Box::new(lambda),
        };
        let mean = sys.mean_lambda(&sys.theta_hat);
        let worst = mean.amax();
        if worst >= ROOT_TOL {
            return Err(Error::Variance(format!(
                "estimating equations not solved at theta-hat: |mean lambda|_inf = {worst:.3e} \
                 (worst coordinate `{}`)",
                sys.labels[mean.iamax()]
            )));
        }
        Ok(sys)
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn mean_lambda(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(self.theta_dim());
        for i in 0..self.n_rows {
            acc += (self.lambda)(i, theta);
        }
        acc / self.n_rows as f64
    }

    /// Sandwich covariance estimate of theta-hat: `A^-1 B A^-T / N` with
    /// `A = (1/N) sum d lambda/d theta` (central differences, step
    /// `1e-6 * (1 + |theta_j|)`) and `B = (1/N) sum lambda lambda'`.
    ///
    /// The result is symmetrized; asymmetry beyond numerical noise, a
    /// non-finite entry, or an ill-conditioned A is an error.
    pub fn sandwich(&self) -> Result<DMatrix<f64>> {
        let dim = self.theta_dim();
        let n = self.n_rows as f64;

        // Bread: column j of A is the central difference of the mean moment.
        let mut a = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let h = 1e-6 * (1.0 + self.theta_hat[j].abs());
            let mut up = self.theta_hat.clone();
            up[j] += h;
            let mut down = self.theta_hat.clone();
            down[j] -= h;
            let diff = (self.mean_lambda(&up) - self.mean_lambda(&down)) / (2.0 * h);
            a.set_column(j, &diff);
        }

        // Meat.
        let mut b = DMatrix::zeros(dim, dim);
        for i in 0..self.n_rows {
            let l = (self.lambda)(i, &self.theta_hat);
            b.syger(1.0, &l, &l, 1.0); // rank-1 update of the lower triangle
        }
        b /= n;
        b.fill_upper_triangle_with_lower_triangle();

        // Condition check on A, then Cov = A^-1 B A^-T / N via two QR solves.
        let svs = a.clone().svd(false, false).singular_values;
        let (smax, smin) = (svs.max(), svs.min());
        if smin <= 0.0 || smax / smin > MAX_CONDITION {
            return Err(Error::Singular {
                what: "sandwich bread matrix",
                message: format!(
                    "condition number {:.3e} exceeds {MAX_CONDITION:.0e}",
                    if smin > 0.0 { smax / smin } else { f64::INFINITY }
                ),
            });
        }
        let solve = |m: &DMatrix<f64>, rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            m.clone()
                .col_piv_qr()
                .solve(rhs)
                .ok_or_else(|| Error::Singular {
                    what: "sandwich bread matrix",
                    message: "QR solve failed".into(),
                })
        };
        // Cov = A^-1 B A^-T: with M = A^-1 B, Cov' = A^-1 M', so two solves
        // against A suffice.
        let ainv_b = solve(&a, &b)?;
        let cov_t = solve(&a, &ainv_b.transpose())?;
        let mut cov = cov_t.transpose() / n;

        let scale = cov.amax().max(1e-300);
        let mut asym = 0.0_f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                asym = asym.max((cov[(i, j)] - cov[(j, i)]).abs());
            }
        }
        if asym > 1e-6 * scale {
            return Err(Error::Variance(format!(
                "sandwich asymmetric beyond numerical noise: {asym:.3e} (scale {scale:.3e})"
            )));
        }
        let sym = (&cov + cov.transpose()) / 2.0;
        cov = sym;
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Variance("non-finite sandwich entry".into()));
        }
        Ok(cov)
    }
}

/// Delta-method variance `grad' cov grad`, clamped at zero for results within
/// -1e-12 of it; more negative values indicate a broken covariance.
pub fn delta_method(cov: &DMatrix<f64>, grad: &DVector<f64>) -> Result<f64> {
    if cov.nrows() != grad.len() || cov.ncols() != grad.len() {
        return Err(Error::Variance(format!(
            "dimension mismatch: covariance {}x{}, gradient {}",
            cov.nrows(),
            cov.ncols(),
            grad.len()
        )));
    }
    let v = (grad.transpose() * cov * grad)[(0, 0)];
    if v < -1e-12 {
        return Err(Error::Variance(format!(
            "delta-method variance is negative: {v:.3e}"
        )));
    }
    Ok(v.max(0.0))
}
