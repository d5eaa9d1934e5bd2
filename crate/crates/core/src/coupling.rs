//! Coupling of the cutoff power-law fit with Taylor's power law.
//!
//! The cutoff fit supplies a point estimate (a value on the curve or the
//! curve's maximum); Taylor's power law supplies the variance at that
//! level; the two combine into a normal 95% band `point ± 1.96·√(V/n)`.

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diversity::AccumulationCurve;
use crate::ingest::TruncatedSeries;
use crate::plec::{cutoff_p_value, fit_plec, FitDiagnostics, FitOptions, PlecError, PlecModel};
use crate::regression::{
    fit_loglog, fit_pl_growth, predict_variance, PlFit, RegressionError, TplFit, VarianceMeanPair,
};
use crate::scalar::{from_usize, lit, Scalar};

/// Two-sided 95% standard-normal quantile.
pub const Z_95: f64 = 1.96;

/// Level of the Wald test on `d` below which a cutoff counts as identified.
pub const CUTOFF_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error("NoAsymptote: a finite maximum needs w > 0 and d < 0 (w = {w}, d = {d})")]
    NoAsymptote { w: f64, d: f64 },
    #[error("InvalidSampleCount: n must be at least 1")]
    InvalidSampleCount,
    #[error("NegativeVariance: variance {0} must be >= 0")]
    NegativeVariance(f64),
    #[error("UnsupportedOrder: confidence coupling is defined for q = 0 only (got q = {0})")]
    UnsupportedOrder(f64),
    #[error("TooFewPoints: need at least {needed} positive observations, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("TPL fit failed: {0}")]
    Tpl(RegressionError),
    #[error("power-law fit failed: {0}")]
    PowerLaw(RegressionError),
    #[error("PLEC fit failed: {0}")]
    Plec(#[from] PlecError),
}

/// Location `x_max = -w/d` and height `y_max` of the curve's maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptotePrediction<T> {
    pub x_max: T,
    pub y_max: T,
}

pub fn compute_asymptote<T: Scalar>(
    model: &PlecModel<T>,
) -> Result<AsymptotePrediction<T>, CouplingError> {
    if !(model.w > T::zero()) || !(model.d < T::zero()) {
        return Err(CouplingError::NoAsymptote {
            w: model.w.to_f64().unwrap_or(f64::NAN),
            d: model.d.to_f64().unwrap_or(f64::NAN),
        });
    }
    let x_max = -model.w / model.d;
    // Evaluated through the model so that y_max is bit-identical to the curve.
    let y_max = model.eval(x_max)?;
    Ok(AsymptotePrediction { x_max, y_max })
}

/// Symmetric normal band around a point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand<T> {
    pub point: T,
    pub lower: T,
    pub upper: T,
    pub n: usize,
    pub variance: T,
}

impl<T: Scalar> ConfidenceBand<T> {
    /// `point ± 1.96·√(variance/n)`.
    pub fn from_variance(point: T, variance: T, n: usize) -> Result<Self, CouplingError> {
        if n == 0 {
            return Err(CouplingError::InvalidSampleCount);
        }
        if !(variance >= T::zero()) {
            return Err(CouplingError::NegativeVariance(
                variance.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let half = lit::<T>(Z_95) * (variance / from_usize(n)).sqrt();
        Ok(Self {
            point,
            lower: point - half,
            upper: point + half,
            n,
            variance,
        })
    }

    pub fn half_width(&self) -> T {
        lit::<T>(Z_95) * (self.variance / from_usize(self.n)).sqrt()
    }

    /// Translates the band by `offset`, keeping its variance and width.
    pub fn shifted(&self, offset: T) -> Self {
        Self {
            point: self.point + offset,
            lower: self.lower + offset,
            upper: self.upper + offset,
            ..*self
        }
    }
}

/// Band at `point` with the variance predicted by `tpl` at that level.
pub fn confidence_band<T: Scalar>(
    point: T,
    tpl: &TplFit<T>,
    n: usize,
) -> Result<ConfidenceBand<T>, CouplingError> {
    if n == 0 {
        return Err(CouplingError::InvalidSampleCount);
    }
    let variance = predict_variance(tpl, point).map_err(CouplingError::Tpl)?;
    ConfidenceBand::from_variance(point, variance, n)
}

/// Calendar date of day index `t`, with `t = 1` on `start`.
pub fn day_index_to_date(start: NaiveDate, t: u32) -> NaiveDate {
    debug_assert!(t >= 1, "day indices start at 1");
    start + Duration::days(i64::from(t.saturating_sub(1)))
}

/// Day index of `date` relative to `start` (`start` is day 1).
pub fn date_to_day_index(start: NaiveDate, date: NaiveDate) -> i64 {
    (date - start).num_days() + 1
}

/// Why the power-law branch was taken instead of the cutoff model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FallbackReason {
    /// Iteration budget exhausted.
    NotConverged,
    /// Cutoff ended on the constraint ceiling, so no taper is identified.
    CutoffAtCeiling,
    /// Fitted exponent or cutoff admits no finite maximum.
    NoAsymptote,
    /// Damped normal equations could not be solved.
    SolverBreakdown,
    /// The fitted cutoff is indistinguishable from zero at [`CUTOFF_ALPHA`].
    CutoffNotSignificant,
}

/// A power-law band at a requested abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonPrediction<T> {
    pub x: T,
    pub date: Option<NaiveDate>,
    pub band: ConfidenceBand<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome<T> {
    Plec {
        model: PlecModel<T>,
        diagnostics: FitDiagnostics<T>,
        /// Maximum of the fitted curve, before adding the baseline.
        asymptote: AsymptotePrediction<T>,
        /// Band around `baseline + y_max`.
        band: ConfidenceBand<T>,
    },
    PowerLaw {
        fit: PlFit<T>,
        reason: FallbackReason,
        plec_diagnostics: Option<FitDiagnostics<T>>,
        horizons: Vec<HorizonPrediction<T>>,
    },
}

/// Result of one coupled run: either the cutoff model with its maximum and
/// band, or the power-law fallback with bands at requested horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPrediction<T> {
    pub outcome: Outcome<T>,
    pub tpl: TplFit<T>,
    pub n: usize,
    /// Count absorbed at truncation and added back to every reported value.
    pub baseline: T,
    /// Last observed value, baseline included.
    pub observed_latest: T,
    /// Abscissa of `observed_latest`.
    pub observed_at: T,
    /// Date of `x = 1` for dated series.
    pub start_date: Option<NaiveDate>,
}

impl<T: Scalar> CoupledPrediction<T> {
    pub fn fallback_used(&self) -> bool {
        matches!(self.outcome, Outcome::PowerLaw { .. })
    }

    pub fn plec_model(&self) -> Option<&PlecModel<T>> {
        match &self.outcome {
            Outcome::Plec { model, .. } => Some(model),
            Outcome::PowerLaw { .. } => None,
        }
    }

    pub fn asymptote(&self) -> Option<&AsymptotePrediction<T>> {
        match &self.outcome {
            Outcome::Plec { asymptote, .. } => Some(asymptote),
            Outcome::PowerLaw { .. } => None,
        }
    }

    /// Band around the predicted maximum, baseline included.
    pub fn max_band(&self) -> Option<&ConfidenceBand<T>> {
        match &self.outcome {
            Outcome::Plec { band, .. } => Some(band),
            Outcome::PowerLaw { .. } => None,
        }
    }

    /// `baseline + y_max`.
    pub fn total_max(&self) -> Option<T> {
        self.asymptote().map(|a| self.baseline + a.y_max)
    }

    /// Observed value as a percentage of the predicted total maximum.
    pub fn completion_pct(&self) -> Option<T> {
        self.total_max()
            .map(|m| self.observed_latest / m * lit(100.0))
    }

    pub fn date_of_max(&self) -> Option<NaiveDate> {
        let start = self.start_date?;
        let x = self.asymptote()?.x_max.round().to_u32()?;
        Some(day_index_to_date(start, x.max(1)))
    }

    /// Model value at `x` with the baseline added back.
    pub fn predict(&self, x: T) -> Result<T, CouplingError> {
        let relative = match &self.outcome {
            Outcome::Plec { model, .. } => model.eval(x)?,
            Outcome::PowerLaw { fit, .. } => fit.predict(x).map_err(CouplingError::PowerLaw)?,
        };
        Ok(self.baseline + relative)
    }

    /// Band at an arbitrary abscissa, variance taken at the reported level.
    pub fn band_at(&self, x: T) -> Result<ConfidenceBand<T>, CouplingError> {
        confidence_band(self.predict(x)?, &self.tpl, self.n)
    }
}

fn fallback_reason<T: Scalar>(
    points: &[(T, T)],
    result: &Result<(PlecModel<T>, FitDiagnostics<T>), PlecError>,
) -> Option<FallbackReason> {
    match result {
        Err(PlecError::SingularNormalEquations) => Some(FallbackReason::SolverBreakdown),
        Err(_) => None,
        Ok((model, diag)) => {
            if !diag.converged {
                Some(FallbackReason::NotConverged)
            } else if diag.constraint_active {
                Some(FallbackReason::CutoffAtCeiling)
            } else if !(model.w > T::zero()) || !(model.d < T::zero()) {
                Some(FallbackReason::NoAsymptote)
            } else if !matches!(cutoff_p_value(points, model), Ok(p) if p < lit(CUTOFF_ALPHA)) {
                Some(FallbackReason::CutoffNotSignificant)
            } else {
                None
            }
        }
    }
}

struct CoupleInput<'a, T> {
    points: &'a [(T, T)],
    tpl: TplFit<T>,
    n: usize,
    baseline: T,
    observed_latest: T,
    observed_at: T,
    start_date: Option<NaiveDate>,
    horizons: &'a [T],
    opts: &'a FitOptions<T>,
}

fn couple<T: Scalar>(input: CoupleInput<'_, T>) -> Result<CoupledPrediction<T>, CouplingError> {
    if input.n == 0 {
        return Err(CouplingError::InvalidSampleCount);
    }
    let fitted = fit_plec(input.points, input.opts);
    let outcome = match fallback_reason(input.points, &fitted) {
        None => {
            let (model, diagnostics) = fitted?;
            let asymptote = compute_asymptote(&model)?;
            let band = confidence_band(input.baseline + asymptote.y_max, &input.tpl, input.n)?;
            Outcome::Plec {
                model,
                diagnostics,
                asymptote,
                band,
            }
        }
        Some(reason) => {
            log::debug!("cutoff fit rejected ({reason:?}), fitting a power law");
            let mut fit = fit_pl_growth(input.points).map_err(CouplingError::PowerLaw)?;
            if let Some(start) = input.start_date {
                fit = fit.with_start_date(start);
            }
            let horizons = input
                .horizons
                .iter()
                .map(|&x| {
                    let point = input.baseline + fit.predict(x).map_err(CouplingError::PowerLaw)?;
                    let band = confidence_band(point, &input.tpl, input.n)?;
                    let date = input
                        .start_date
                        .zip(x.round().to_u32())
                        .map(|(s, t)| day_index_to_date(s, t.max(1)));
                    Ok(HorizonPrediction { x, date, band })
                })
                .collect::<Result<Vec<_>, CouplingError>>()?;
            Outcome::PowerLaw {
                fit,
                reason,
                plec_diagnostics: fitted.ok().map(|(_, d)| d),
                horizons,
            }
        }
    };
    Ok(CoupledPrediction {
        outcome,
        tpl: input.tpl,
        n: input.n,
        baseline: input.baseline,
        observed_latest: input.observed_latest,
        observed_at: input.observed_at,
        start_date: input.start_date,
    })
}

/// Fatality-time pipeline on a truncated cumulative series.
///
/// The cutoff model is fitted to the post-truncation counts (days with a
/// non-positive relative count are skipped); every reported value has the
/// truncation baseline added back, and the band variance is evaluated at
/// that baseline-inclusive level. When the cutoff fit fails to identify a
/// maximum, a power law is fitted instead and banded at `horizons` (day
/// indices on the same `T = 1` axis).
pub fn run_ftr_pipeline<T: Scalar>(
    series: &TruncatedSeries,
    vm_pairs: &[VarianceMeanPair<T>],
    n: usize,
    horizons: &[u32],
    opts: &FitOptions<T>,
) -> Result<CoupledPrediction<T>, CouplingError> {
    let points = series.positive_points::<T>();
    if points.len() < 4 {
        return Err(CouplingError::TooFewPoints {
            needed: 4,
            got: points.len(),
        });
    }
    let tpl = fit_loglog(vm_pairs).map_err(CouplingError::Tpl)?;
    let horizons: Vec<T> = horizons.iter().map(|&h| from_usize(h as usize)).collect();
    couple(CoupleInput {
        points: &points,
        tpl,
        n,
        baseline: lit(series.baseline as f64),
        observed_latest: lit(series.observed_latest() as f64),
        observed_at: from_usize(series.len()),
        start_date: Some(series.start_date),
        horizons: &horizons,
        opts,
    })
}

/// Fitted model, diagnostics and (when identified) the maximum.
pub type AccumulationFit<T> = (
    PlecModel<T>,
    FitDiagnostics<T>,
    Option<AsymptotePrediction<T>>,
);

/// Cutoff fit and maximum of an accumulation curve, without a band.
///
/// Usable at any diversity order; the banded pipeline is restricted to
/// richness.
pub fn fit_accumulation<T: Scalar>(
    curve: &AccumulationCurve<T>,
    opts: &FitOptions<T>,
) -> Result<AccumulationFit<T>, CouplingError> {
    let points = curve.points();
    let (model, diag) = fit_plec(&points, opts)?;
    let asymptote = match fallback_reason(&points, &Ok((model, diag))) {
        None => Some(compute_asymptote(&model)?),
        Some(_) => None,
    };
    Ok((model, diag, asymptote))
}

/// Diversity-accumulation pipeline: cutoff fit on the mean accumulation
/// curve, Taylor's power law on the per-step (mean, variance) pairs with
/// positive coordinates, band around the maximal accrual diversity.
pub fn run_dar_pipeline<T: Scalar>(
    curve: &AccumulationCurve<T>,
    n: usize,
    opts: &FitOptions<T>,
) -> Result<CoupledPrediction<T>, CouplingError> {
    if curve.q != T::zero() {
        return Err(CouplingError::UnsupportedOrder(
            curve.q.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let points = curve.points();
    let tpl = fit_loglog(&curve.tpl_pairs()).map_err(CouplingError::Tpl)?;
    let last = from_usize::<T>(curve.len());
    couple(CoupleInput {
        points: &points,
        tpl,
        n,
        baseline: T::zero(),
        observed_latest: *curve
            .mean_diversity
            .last()
            .ok_or(CouplingError::TooFewPoints { needed: 4, got: 0 })?,
        observed_at: last,
        start_date: None,
        horizons: &[last],
        opts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tpl(ln_a: f64, b: f64) -> TplFit<f64> {
        TplFit {
            ln_a,
            b,
            r_squared: 1.0,
            n_pairs: 3,
        }
    }

    #[test]
    fn unit_asymptote() {
        let a = compute_asymptote(&PlecModel::new(1.0, 1.0, -1.0)).unwrap();
        assert_eq!(a.x_max, 1.0);
        assert!((a.y_max - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn asymptote_requires_growth_and_cutoff() {
        for m in [
            PlecModel::new(1.0, -0.5, -0.1),
            PlecModel::new(1.0, 0.0, -0.1),
            PlecModel::new(1.0, 1.0, 0.0),
            PlecModel::new(1.0, 1.0, 0.2),
        ] {
            assert!(matches!(
                compute_asymptote(&m),
                Err(CouplingError::NoAsymptote { .. })
            ));
        }
    }

    #[test]
    fn band_arithmetic() {
        let b: ConfidenceBand<f64> = ConfidenceBand::from_variance(100.0, 400.0, 4).unwrap();
        assert!((b.lower - 80.4).abs() < 1e-12);
        assert!((b.upper - 119.6).abs() < 1e-12);

        let b = confidence_band(50.0, &tpl(0.0, 2.0), 25).unwrap();
        assert!((b.variance - 2500.0).abs() < 1e-9);
        assert!((b.lower - 30.4).abs() < 1e-9);
        assert!((b.upper - 69.6).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_collapses() {
        let b: ConfidenceBand<f64> = ConfidenceBand::from_variance(42.0, 0.0, 7).unwrap();
        assert_eq!(b.lower, 42.0);
        assert_eq!(b.upper, 42.0);
    }

    #[test]
    fn band_rejects_bad_inputs() {
        assert_eq!(
            ConfidenceBand::from_variance(1.0, 1.0, 0).unwrap_err(),
            CouplingError::InvalidSampleCount
        );
        assert!(matches!(
            ConfidenceBand::from_variance(1.0, -1.0, 3),
            Err(CouplingError::NegativeVariance(_))
        ));
        assert!(matches!(
            confidence_band(0.0, &tpl(0.0, 1.0), 3),
            Err(CouplingError::Tpl(RegressionError::NonPositiveValue { .. }))
        ));
    }

    #[test]
    fn shifted_band_keeps_width() {
        let b: ConfidenceBand<f64> = ConfidenceBand::from_variance(10.0, 9.0, 1).unwrap();
        let s = b.shifted(1000.0);
        assert_eq!(s.point, 1010.0);
        assert!((s.half_width() - b.half_width()).abs() < 1e-12);
        assert!(((s.upper - s.point) - (b.upper - b.point)).abs() < 1e-9);
    }

    #[test]
    fn day_indices() {
        let start = NaiveDate::from_ymd_opt(2021, 3, 21).unwrap();
        assert_eq!(day_index_to_date(start, 1), start);
        assert_eq!(
            day_index_to_date(start, 113),
            NaiveDate::from_ymd_opt(2021, 7, 11).unwrap()
        );
        assert_eq!(
            day_index_to_date(start, 193),
            NaiveDate::from_ymd_opt(2021, 9, 29).unwrap()
        );
        assert_eq!(
            date_to_day_index(start, NaiveDate::from_ymd_opt(2021, 7, 11).unwrap()),
            113
        );
    }

    #[test]
    fn completion_percentage() {
        let pred = CoupledPrediction {
            outcome: Outcome::Plec {
                model: PlecModel::new(1.0, 1.0, -1.0),
                diagnostics: FitDiagnostics {
                    converged: true,
                    iterations: 1,
                    sum_squared_residuals: 0.0,
                    r_squared: 1.0,
                    constraint_active: false,
                },
                asymptote: AsymptotePrediction {
                    x_max: 1.0,
                    y_max: 182_643.0 - 100.0,
                },
                band: ConfidenceBand::from_variance(182_643.0, 0.0, 1).unwrap(),
            },
            tpl: tpl(0.0, 1.0),
            n: 1,
            baseline: 100.0,
            observed_latest: 127_983.0,
            observed_at: 1.0,
            start_date: None,
        };
        assert_eq!(pred.total_max(), Some(182_643.0));
        let pct = pred.completion_pct().unwrap();
        assert_eq!(format!("{pct:.1}"), "70.1");
    }
}
