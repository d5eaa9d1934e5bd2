//! Straight-line fits on log-log axes.
//!
//! Two relationships share the same ordinary least squares machinery:
//! Taylor's power law `V = a·M^b` (variance against mean) and the plain
//! growth power law `y = c·t^w`. Both are fitted as lines in natural logs.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::scalar::{from_usize, lit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressionError {
    #[error("TooFewPoints: need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("NonPositiveValue: value {value} at index {index} must be > 0")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("DegenerateX: all abscissae are identical, slope undefined")]
    DegenerateX,
}

/// One (mean, variance) observation for Taylor's power law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceMeanPair<T> {
    pub mean: T,
    pub variance: T,
}

impl<T: Scalar> VarianceMeanPair<T> {
    pub fn new(mean: T, variance: T) -> Self {
        Self { mean, variance }
    }

    /// Both coordinates strictly positive, i.e. usable on log axes.
    pub fn is_loggable(&self) -> bool {
        self.mean > T::zero() && self.variance > T::zero()
    }
}

/// Fitted Taylor's power law `V = exp(ln_a)·M^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TplFit<T> {
    pub ln_a: T,
    pub b: T,
    pub r_squared: T,
    pub n_pairs: usize,
}

impl<T: Scalar> TplFit<T> {
    pub fn a(&self) -> T {
        self.ln_a.exp()
    }

    pub fn predict_variance(&self, mean: T) -> Result<T, RegressionError> {
        predict_variance(self, mean)
    }
}

/// Fitted growth power law `y = exp(ln_c)·t^exponent` with regression
/// diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlFit<T> {
    pub ln_c: T,
    pub exponent: T,
    /// Pearson correlation of the log-log points.
    pub r: T,
    /// Two-sided p-value of the slope t-test on `n - 2` degrees of freedom.
    pub p_value: T,
    pub n_points: usize,
    /// Calendar date of `t = 1`, when the series is a dated time series.
    pub start_date: Option<NaiveDate>,
}

impl<T: Scalar> PlFit<T> {
    pub fn c(&self) -> T {
        self.ln_c.exp()
    }

    pub fn r_squared(&self) -> T {
        self.r * self.r
    }

    pub fn with_start_date(mut self, date: NaiveDate) -> Self {
        self.start_date = Some(date);
        self
    }

    /// Evaluates `c·t^exponent`.
    pub fn predict(&self, t: T) -> Result<T, RegressionError> {
        if !(t > T::zero()) {
            return Err(non_positive(0, t));
        }
        Ok((self.ln_c + self.exponent * t.ln()).exp())
    }
}

/// Summary of a simple linear regression `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy)]
struct LineFit<T> {
    intercept: T,
    slope: T,
    r: T,
    r_squared: T,
    sxx: T,
    ssr: T,
    n: usize,
}

fn non_positive<T: Scalar>(index: usize, value: T) -> RegressionError {
    RegressionError::NonPositiveValue {
        index,
        value: value.to_f64().unwrap_or(f64::NAN),
    }
}

fn ordinary_least_squares<T: Scalar>(xs: &[T], ys: &[T]) -> Result<LineFit<T>, RegressionError> {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let nf: T = from_usize(n);
    let mean_x = xs.iter().copied().sum::<T>() / nf;
    let mean_y = ys.iter().copied().sum::<T>() / nf;

    let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
        sxy = sxy + dx * dy;
    }
    if sxx <= T::zero() {
        return Err(RegressionError::DegenerateX);
    }

    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<T>();

    // A constant response is reproduced exactly by the zero-slope line.
    let (r, r_squared) = if syy <= T::zero() {
        (T::one(), T::one())
    } else {
        let r = (sxy / (sxx.sqrt() * syy.sqrt()))
            .max(-T::one())
            .min(T::one());
        (r, (r * r).min(T::one()))
    };

    Ok(LineFit {
        intercept,
        slope,
        r,
        r_squared,
        sxx,
        ssr,
        n,
    })
}

fn log_coordinates<T: Scalar>(
    points: impl ExactSizeIterator<Item = (T, T)>,
) -> Result<(Vec<T>, Vec<T>), RegressionError> {
    let got = points.len();
    if got < 3 {
        return Err(RegressionError::TooFewPoints { needed: 3, got });
    }
    let mut xs = Vec::with_capacity(got);
    let mut ys = Vec::with_capacity(got);
    for (i, (x, y)) in points.enumerate() {
        if !(x > T::zero()) || !x.is_finite() {
            return Err(non_positive(i, x));
        }
        if !(y > T::zero()) || !y.is_finite() {
            return Err(non_positive(i, y));
        }
        xs.push(x.ln());
        ys.push(y.ln());
    }
    Ok((xs, ys))
}

/// Fits Taylor's power law by OLS of `ln V` on `ln M`.
pub fn fit_loglog<T: Scalar>(pairs: &[VarianceMeanPair<T>]) -> Result<TplFit<T>, RegressionError> {
    let (xs, ys) = log_coordinates(pairs.iter().map(|p| (p.mean, p.variance)))?;
    let line = ordinary_least_squares(&xs, &ys)?;
    Ok(TplFit {
        ln_a: line.intercept,
        b: line.slope,
        r_squared: line.r_squared,
        n_pairs: line.n,
    })
}

/// `V = exp(ln_a)·mean^b`.
pub fn predict_variance<T: Scalar>(fit: &TplFit<T>, mean: T) -> Result<T, RegressionError> {
    if !(mean > T::zero()) {
        return Err(non_positive(0, mean));
    }
    Ok((fit.ln_a + fit.b * mean.ln()).exp())
}

/// Fits `y = c·t^w` by OLS on `(ln t, ln y)`, reporting the correlation and
/// the slope's two-sided t-test p-value.
pub fn fit_pl_growth<T: Scalar>(series: &[(T, T)]) -> Result<PlFit<T>, RegressionError> {
    let (xs, ys) = log_coordinates(series.iter().copied())?;
    let line = ordinary_least_squares(&xs, &ys)?;
    Ok(PlFit {
        ln_c: line.intercept,
        exponent: line.slope,
        r: line.r,
        p_value: slope_p_value(&line),
        n_points: line.n,
        start_date: None,
    })
}

fn slope_p_value<T: Scalar>(line: &LineFit<T>) -> T {
    let dof = line.n - 2;
    let mse = line.ssr / from_usize(dof);
    let se = (mse / line.sxx).sqrt();
    if !(se > T::zero()) {
        // Exact fit: the slope is known without error.
        return if line.slope == T::zero() {
            T::one()
        } else {
            T::zero()
        };
    }
    let t_stat = (line.slope / se).abs().to_f64().unwrap_or(f64::INFINITY);
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t_stat)).clamp(0.0, 1.0);
    lit(p)
}
