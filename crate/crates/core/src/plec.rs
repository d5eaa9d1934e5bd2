//! Power law with exponential cutoff, `y = c·x^w·e^{d·x}`, and its
//! constrained least-squares fit.
//!
//! The fit is a damped Gauss-Newton (Levenberg-Marquardt) iteration on raw
//! scale residuals. Internally the scale enters as `ln c` so that `c` stays
//! positive; the cutoff is held at or below `FitOptions::d_ceiling` by
//! projection, with the cutoff frozen once it sits on the bound and the
//! gradient keeps pushing it upward.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::regression::{fit_pl_growth, RegressionError};
use crate::scalar::{from_usize, lit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlecError {
    #[error("TooFewPoints: need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("NonPositiveValue: value {value} at index {index} must be > 0")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("NotIncreasing: abscissa at index {index} does not exceed its predecessor")]
    NotIncreasing { index: usize },
    #[error("SingularNormalEquations: damped normal matrix not invertible at maximum damping")]
    SingularNormalEquations,
    #[error("InvalidOptions: {0}")]
    InvalidOptions(&'static str),
}

/// `y = c·x^w·e^{d·x}`.
///
/// `w` is the growth exponent (written `z` for diversity-area data) and
/// `d` the cutoff; a finite interior maximum exists when `w > 0` and `d < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlecModel<T> {
    pub c: T,
    pub w: T,
    pub d: T,
}

impl<T: Scalar> PlecModel<T> {
    pub fn new(c: T, w: T, d: T) -> Self {
        Self { c, w, d }
    }

    pub fn from_ln_c(ln_c: T, w: T, d: T) -> Self {
        Self {
            c: ln_c.exp(),
            w,
            d,
        }
    }

    pub fn ln_c(&self) -> T {
        self.c.ln()
    }

    /// Same scale and exponent with the cutoff removed.
    pub fn without_cutoff(&self) -> Self {
        Self {
            d: T::zero(),
            ..*self
        }
    }

    pub fn eval(&self, x: T) -> Result<T, PlecError> {
        plec_eval(self, x)
    }

    pub fn jacobian(&self, x: T) -> Result<[T; 3], PlecError> {
        plec_jacobian(self, x)
    }

    #[inline]
    fn eval_unchecked(&self, x: T) -> T {
        self.c * x.powf(self.w) * (self.d * x).exp()
    }
}

/// Solver controls. `d_ceiling` is the largest admissible cutoff and must be
/// negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<T> {
    pub max_iterations: usize,
    /// Relative change in the sum of squared residuals below which an
    /// accepted step ends the iteration.
    pub residual_tolerance: T,
    pub initial_damping: T,
    pub d_ceiling: T,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            residual_tolerance: lit::<T>(1e-10).max(T::epsilon() * lit(100.0)),
            initial_damping: lit(1e-3),
            d_ceiling: lit(-1e-12),
        }
    }
}

impl<T: Scalar> FitOptions<T> {
    fn validate(&self) -> Result<(), PlecError> {
        if self.max_iterations == 0 {
            return Err(PlecError::InvalidOptions("max_iterations must be positive"));
        }
        if !(self.residual_tolerance > T::zero()) {
            return Err(PlecError::InvalidOptions(
                "residual_tolerance must be positive",
            ));
        }
        if !(self.initial_damping > T::zero()) {
            return Err(PlecError::InvalidOptions(
                "initial_damping must be positive",
            ));
        }
        if !(self.d_ceiling < T::zero()) {
            return Err(PlecError::InvalidOptions("d_ceiling must be negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics<T> {
    pub converged: bool,
    pub iterations: usize,
    pub sum_squared_residuals: T,
    /// Raw-scale `1 - SSR/SST`, SST taken about the mean of `y`.
    pub r_squared: T,
    /// The cutoff ended on `d_ceiling`.
    pub constraint_active: bool,
}

fn non_positive<T: Scalar>(index: usize, value: T) -> PlecError {
    PlecError::NonPositiveValue {
        index,
        value: value.to_f64().unwrap_or(f64::NAN),
    }
}

pub fn plec_eval<T: Scalar>(model: &PlecModel<T>, x: T) -> Result<T, PlecError> {
    if !(x > T::zero()) {
        return Err(non_positive(0, x));
    }
    Ok(model.eval_unchecked(x))
}

/// Partial derivatives `(∂y/∂c, ∂y/∂w, ∂y/∂d)` at `x`.
pub fn plec_jacobian<T: Scalar>(model: &PlecModel<T>, x: T) -> Result<[T; 3], PlecError> {
    if !(x > T::zero()) {
        return Err(non_positive(0, x));
    }
    let base = x.powf(model.w) * (model.d * x).exp();
    let y = model.c * base;
    Ok([base, y * x.ln(), y * x])
}

const LN_C: usize = 0;
const EXPONENT: usize = 1;
const CUTOFF: usize = 2;

struct Problem<'a, T> {
    xs: &'a [T],
    ys: &'a [T],
    ln_xs: Vec<T>,
}

impl<T: Scalar> Problem<'_, T> {
    fn model(theta: &[T; 3]) -> PlecModel<T> {
        PlecModel::from_ln_c(theta[LN_C], theta[EXPONENT], theta[CUTOFF])
    }

    fn ssr(&self, theta: &[T; 3]) -> T {
        let m = Self::model(theta);
        let mut acc = T::zero();
        for (&x, &y) in self.xs.iter().zip(self.ys) {
            let e = y - m.eval_unchecked(x);
            acc = acc + e * e;
        }
        if acc.is_finite() {
            acc
        } else {
            T::infinity()
        }
    }

    /// Normal matrix `JᵀJ` and gradient `Jᵀr` in `(ln c, w, d)`.
    #[allow(clippy::needless_range_loop)]
    fn normal_equations(&self, theta: &[T; 3]) -> ([[T; 3]; 3], [T; 3]) {
        let m = Self::model(theta);
        let mut jtj = [[T::zero(); 3]; 3];
        let mut jtr = [T::zero(); 3];
        for ((&x, &y), &lnx) in self.xs.iter().zip(self.ys).zip(&self.ln_xs) {
            let f = m.eval_unchecked(x);
            let row = [f, f * lnx, f * x];
            let r = y - f;
            for i in 0..3 {
                jtr[i] = jtr[i] + row[i] * r;
                for j in 0..=i {
                    jtj[i][j] = jtj[i][j] + row[i] * row[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..i {
                jtj[j][i] = jtj[i][j];
            }
        }
        (jtj, jtr)
    }
}

/// Cholesky solve of the damped system restricted to `free` indices.
#[allow(clippy::needless_range_loop)]
fn solve_damped<T: Scalar>(
    jtj: &[[T; 3]; 3],
    jtr: &[T; 3],
    scale: &[T; 3],
    damping: T,
    free: &[usize],
) -> Option<[T; 3]> {
    let n = free.len();
    let mut a = [[T::zero(); 3]; 3];
    let mut b = [T::zero(); 3];
    for (p, &i) in free.iter().enumerate() {
        b[p] = jtr[i];
        for (q, &j) in free.iter().enumerate() {
            a[p][q] = jtj[i][j];
        }
        a[p][p] = a[p][p] + damping * scale[i];
    }

    let mut l = [[T::zero(); 3]; 3];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut z = [T::zero(); 3];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let mut sol = [T::zero(); 3];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s = s - l[k][i] * sol[k];
        }
        sol[i] = s / l[i][i];
    }

    let mut step = [T::zero(); 3];
    for (p, &i) in free.iter().enumerate() {
        if !sol[p].is_finite() {
            return None;
        }
        step[i] = sol[p];
    }
    Some(step)
}

fn validate_points<T: Scalar>(points: &[(T, T)]) -> Result<(), PlecError> {
    if points.len() < 4 {
        return Err(PlecError::TooFewPoints {
            needed: 4,
            got: points.len(),
        });
    }
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x > T::zero()) || !x.is_finite() {
            return Err(non_positive(i, x));
        }
        if !(y > T::zero()) || !y.is_finite() {
            return Err(non_positive(i, y));
        }
        if i > 0 && !(x > points[i - 1].0) {
            return Err(PlecError::NotIncreasing { index: i });
        }
    }
    Ok(())
}

fn r_squared<T: Scalar>(ys: &[T], ssr: T) -> T {
    let mean = ys.iter().copied().sum::<T>() / from_usize(ys.len());
    let sst = ys.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>();
    if sst > T::zero() {
        T::one() - ssr / sst
    } else if ssr == T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Least-squares fit of `y = c·x^w·e^{d·x}` subject to `d ≤ opts.d_ceiling`.
///
/// Starts from the log-log power-law fit for `(c, w)` and `d = -1/(2·x_max)`.
/// Running out of iterations is reported through `FitDiagnostics::converged`
/// rather than as an error.
pub fn fit_plec<T: Scalar>(
    points: &[(T, T)],
    opts: &FitOptions<T>,
) -> Result<(PlecModel<T>, FitDiagnostics<T>), PlecError> {
    opts.validate()?;
    validate_points(points)?;

    let xs: Vec<T> = points.iter().map(|p| p.0).collect();
    let ys: Vec<T> = points.iter().map(|p| p.1).collect();
    let problem = Problem {
        ln_xs: xs.iter().map(|x| x.ln()).collect(),
        xs: &xs,
        ys: &ys,
    };

    let start = fit_pl_growth(points).map_err(|e| match e {
        RegressionError::TooFewPoints { needed, got } => PlecError::TooFewPoints { needed, got },
        RegressionError::NonPositiveValue { index, value } => {
            PlecError::NonPositiveValue { index, value }
        }
        RegressionError::DegenerateX => PlecError::NotIncreasing { index: 1 },
    })?;
    let x_last = *xs.last().expect("validated non-empty");
    let d0 = (-T::one() / (lit::<T>(2.0) * x_last)).min(opts.d_ceiling);
    let mut theta = [start.ln_c, start.exponent, d0];
    let mut ssr = problem.ssr(&theta);

    let sum_y2 = ys.iter().map(|&y| y * y).sum::<T>();
    let floor = T::epsilon() * T::epsilon() * sum_y2 * from_usize(ys.len());
    let max_damping: T = lit(1e16);
    let min_damping: T = lit(1e-15);
    let mut damping = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = false;

    let (mut jtj, mut jtr) = problem.normal_equations(&theta);
    while iterations < opts.max_iterations {
        if ssr <= floor {
            converged = true;
            break;
        }
        let mut scale = [T::zero(); 3];
        let max_diag = jtj[0][0].max(jtj[1][1]).max(jtj[2][2]);
        for i in 0..3 {
            scale[i] = jtj[i][i].max(max_diag * T::epsilon());
        }

        let at_bound = theta[CUTOFF] >= opts.d_ceiling;
        let full = [LN_C, EXPONENT, CUTOFF];
        let step = match solve_damped(&jtj, &jtr, &scale, damping, &full) {
            Some(s) if at_bound && s[CUTOFF] > T::zero() => {
                solve_damped(&jtj, &jtr, &scale, damping, &[LN_C, EXPONENT])
            }
            other => other,
        };
        iterations += 1;

        let Some(step) = step else {
            damping = damping * lit(10.0);
            if damping > max_damping {
                return Err(PlecError::SingularNormalEquations);
            }
            continue;
        };

        let mut trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
        trial[CUTOFF] = trial[CUTOFF].min(opts.d_ceiling);
        let trial_ssr = problem.ssr(&trial);

        if trial_ssr < ssr {
            let rel_change = (ssr - trial_ssr) / ssr;
            theta = trial;
            ssr = trial_ssr;
            damping = (damping / lit(10.0)).max(min_damping);
            if rel_change < opts.residual_tolerance {
                converged = true;
                break;
            }
            (jtj, jtr) = problem.normal_equations(&theta);
        } else {
            damping = damping * lit(10.0);
            if damping > max_damping {
                // No damped step lowers the residual at working precision.
                converged = true;
                break;
            }
        }
    }

    let model = Problem::<T>::model(&theta);
    let diagnostics = FitDiagnostics {
        converged,
        iterations,
        sum_squared_residuals: ssr,
        r_squared: r_squared(&ys, ssr),
        constraint_active: theta[CUTOFF] >= opts.d_ceiling,
    };
    Ok((model, diagnostics))
}

/// Two-sided Wald p-value of `d = 0` at a fitted model.
///
/// `se(d)` comes from `σ²·(JᵀJ)⁻¹` with `σ² = SSR/(n-3)`; the statistic is
/// referred to Student's t with `n - 3` degrees of freedom. A cutoff that
/// cannot be told apart from the other two parameters gets `p = 1`.
pub fn cutoff_p_value<T: Scalar>(points: &[(T, T)], model: &PlecModel<T>) -> Result<T, PlecError> {
    validate_points(points)?;
    let xs: Vec<T> = points.iter().map(|p| p.0).collect();
    let ys: Vec<T> = points.iter().map(|p| p.1).collect();
    let problem = Problem {
        ln_xs: xs.iter().map(|x| x.ln()).collect(),
        xs: &xs,
        ys: &ys,
    };
    let theta = [model.ln_c(), model.w, model.d];
    let ssr = problem.ssr(&theta);
    let (a, _) = problem.normal_equations(&theta);
    if model.d == T::zero() {
        return Ok(T::one());
    }
    if !(ssr > T::zero()) {
        return Ok(T::zero());
    }

    // Schur complement of the (ln c, w) block, in correlation scale.
    let corr = |i: usize, j: usize| a[i][j] / (a[i][i] * a[j][j]).sqrt();
    let (r, s0, s1) = (
        corr(LN_C, EXPONENT),
        corr(CUTOFF, LN_C),
        corr(CUTOFF, EXPONENT),
    );
    let explained = (s0 * s0 - lit::<T>(2.0) * r * s0 * s1 + s1 * s1) / (T::one() - r * r);
    let residual = T::one() - explained;
    if !(residual > T::epsilon()) || !residual.is_finite() {
        return Ok(T::one());
    }
    let dof = points.len() - 3;
    let sigma2 = ssr / from_usize(dof);
    let se = (sigma2 / (a[CUTOFF][CUTOFF] * residual)).sqrt();
    let t_stat = (model.d / se).abs().to_f64().unwrap_or(f64::INFINITY);
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("positive degrees of freedom");
    Ok(lit((2.0 * dist.sf(t_stat)).clamp(0.0, 1.0)))
}
