//! Report records and their serialized forms.
//!
//! Every table has a fixed column set, written in the order of the
//! `*_COLUMNS` constants. Missing values (a unit without a turning point,
//! a band that could not be computed) are empty cells.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tplec_core::coupling::Outcome;
use tplec_core::{
    compute_asymptote, confidence_band, day_index_to_date, CoupledPrediction, CouplingError,
    PlecModel, TplFit,
};

pub const FTR_COLUMNS: [&str; 13] = [
    "unit",
    "c",
    "w",
    "d",
    "r_squared",
    "t_max",
    "date_max",
    "f_max",
    "observed",
    "completion_pct",
    "lower_95",
    "upper_95",
    "fallback_used",
];

pub const PL_COLUMNS: [&str; 11] = [
    "unit",
    "z",
    "ln_c",
    "r",
    "p_value",
    "observed",
    "horizon_date",
    "predicted",
    "lower_95",
    "upper_95",
    "start_date",
];

pub const DAR_COLUMNS: [&str; 13] = [
    "unit",
    "q",
    "z",
    "d",
    "ln_c",
    "r_squared",
    "a_max",
    "d_max",
    "observed",
    "lower_95",
    "upper_95",
    "fallback_used",
    "note",
];

pub const CURVE_COLUMNS: [&str; 6] = ["t", "date", "predicted", "lower", "upper", "observed"];

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn day(v: Option<NaiveDate>) -> String {
    v.map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_default()
}

/// One unit (continent or `World`) of the fatality-time report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtrRow {
    pub unit: String,
    pub c: Option<f64>,
    pub w: Option<f64>,
    pub d: Option<f64>,
    pub r_squared: Option<f64>,
    pub t_max: Option<f64>,
    pub date_max: Option<NaiveDate>,
    pub f_max: Option<f64>,
    pub observed: Option<f64>,
    pub completion_pct: Option<f64>,
    pub lower_95: Option<f64>,
    pub upper_95: Option<f64>,
    pub fallback_used: bool,
}

impl FtrRow {
    pub fn from_prediction(unit: &str, pred: &CoupledPrediction) -> Self {
        let mut row = Self::empty(unit, Some(pred.observed_latest));
        match &pred.outcome {
            Outcome::Plec {
                model,
                diagnostics,
                asymptote,
                band,
            } => {
                row.c = Some(model.c);
                row.w = Some(model.w);
                row.d = Some(model.d);
                row.r_squared = Some(diagnostics.r_squared);
                row.t_max = Some(asymptote.x_max);
                row.date_max = pred.date_of_max();
                row.f_max = pred.total_max();
                row.completion_pct = pred.completion_pct();
                row.lower_95 = Some(band.lower);
                row.upper_95 = Some(band.upper);
            }
            Outcome::PowerLaw { fit, .. } => {
                row.c = Some(fit.c());
                row.w = Some(fit.exponent);
                row.r_squared = Some(fit.r_squared());
                row.fallback_used = true;
            }
        }
        row
    }

    /// Row for a unit whose pipeline could not run.
    pub fn empty(unit: &str, observed: Option<f64>) -> Self {
        Self {
            unit: unit.to_string(),
            c: None,
            w: None,
            d: None,
            r_squared: None,
            t_max: None,
            date_max: None,
            f_max: None,
            observed,
            completion_pct: None,
            lower_95: None,
            upper_95: None,
            fallback_used: false,
        }
    }

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.unit.clone(),
            num(self.c),
            num(self.w),
            num(self.d),
            num(self.r_squared),
            num(self.t_max),
            day(self.date_max),
            num(self.f_max),
            num(self.observed),
            self.completion_pct
                .map(|p| format!("{p:.1}"))
                .unwrap_or_default(),
            num(self.lower_95),
            num(self.upper_95),
            self.fallback_used.to_string(),
        ]
    }
}

/// One horizon of a power-law fallback prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlRow {
    pub unit: String,
    pub z: f64,
    pub ln_c: f64,
    pub r: f64,
    pub p_value: f64,
    pub observed: f64,
    pub horizon_date: Option<NaiveDate>,
    pub predicted: f64,
    pub lower_95: f64,
    pub upper_95: f64,
    pub start_date: Option<NaiveDate>,
}

impl PlRow {
    pub fn from_prediction(unit: &str, pred: &CoupledPrediction) -> Vec<Self> {
        let Outcome::PowerLaw { fit, horizons, .. } = &pred.outcome else {
            return Vec::new();
        };
        horizons
            .iter()
            .map(|h| PlRow {
                unit: unit.to_string(),
                z: fit.exponent,
                ln_c: fit.ln_c,
                r: fit.r,
                p_value: fit.p_value,
                observed: pred.observed_latest,
                horizon_date: h.date,
                predicted: h.band.point,
                lower_95: h.band.lower,
                upper_95: h.band.upper,
                start_date: fit.start_date,
            })
            .collect()
    }

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.unit.clone(),
            self.z.to_string(),
            self.ln_c.to_string(),
            self.r.to_string(),
            self.p_value.to_string(),
            self.observed.to_string(),
            day(self.horizon_date),
            self.predicted.to_string(),
            self.lower_95.to_string(),
            self.upper_95.to_string(),
            day(self.start_date),
        ]
    }
}

/// Diversity-accumulation report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarRow {
    pub unit: String,
    pub q: f64,
    pub z: Option<f64>,
    pub d: Option<f64>,
    pub ln_c: Option<f64>,
    pub r_squared: Option<f64>,
    pub a_max: Option<f64>,
    pub d_max: Option<f64>,
    pub observed: f64,
    pub lower_95: Option<f64>,
    pub upper_95: Option<f64>,
    pub fallback_used: bool,
    pub note: String,
}

impl DarRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.unit.clone(),
            self.q.to_string(),
            num(self.z),
            num(self.d),
            num(self.ln_c),
            num(self.r_squared),
            num(self.a_max),
            num(self.d_max),
            self.observed.to_string(),
            num(self.lower_95),
            num(self.upper_95),
            self.fallback_used.to_string(),
            self.note.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: u32,
    pub date: Option<NaiveDate>,
    pub predicted: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub observed: Option<f64>,
}

impl CurveRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            day(self.date),
            self.predicted.to_string(),
            num(self.lower),
            num(self.upper),
            num(self.observed),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    pub ln_c: f64,
    pub exponent: f64,
}

/// Everything needed to redraw a unit's curve: the fitted model, the
/// variance law, `n`, the baseline and the observations on `t = 1, 2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFit {
    pub unit: String,
    pub model: Option<PlecModel>,
    pub power_law: Option<PowerLawParams>,
    pub tpl: Option<TplFit>,
    pub n: usize,
    pub baseline: f64,
    pub start_date: Option<NaiveDate>,
    pub observed: Vec<f64>,
}

impl UnitFit {
    pub fn from_prediction(unit: &str, pred: &CoupledPrediction, observed: Vec<f64>) -> Self {
        let (model, power_law) = match &pred.outcome {
            Outcome::Plec { model, .. } => (Some(*model), None),
            Outcome::PowerLaw { fit, .. } => (
                None,
                Some(PowerLawParams {
                    ln_c: fit.ln_c,
                    exponent: fit.exponent,
                }),
            ),
        };
        Self {
            unit: unit.to_string(),
            model,
            power_law,
            tpl: Some(pred.tpl),
            n: pred.n,
            baseline: pred.baseline,
            start_date: pred.start_date,
            observed,
        }
    }

    /// Turning point of the cutoff model, if it has one.
    pub fn x_max(&self) -> Option<f64> {
        self.model
            .as_ref()
            .and_then(|m| compute_asymptote(m).ok())
            .map(|a| a.x_max)
    }

    /// Default horizon: the later of the last observation and the turning
    /// point.
    pub fn default_horizon(&self) -> u32 {
        let obs = self.observed.len() as u32;
        let turn = self.x_max().map(|x| x.ceil() as u32).unwrap_or(0);
        obs.max(turn).max(1)
    }

    /// Baseline plus the accrued value at `t`. Past the turning point the
    /// accrual stays at its maximum.
    pub fn predicted(&self, t: f64) -> Result<f64, CouplingError> {
        let relative = match (&self.model, &self.power_law) {
            (Some(m), _) => {
                let x = self.x_max().map_or(t, |x_max| t.min(x_max));
                m.eval(x)?
            }
            (None, Some(pl)) => (pl.ln_c + pl.exponent * t.ln()).exp(),
            (None, None) => {
                return Err(CouplingError::TooFewPoints { needed: 1, got: 0 });
            }
        };
        Ok(self.baseline + relative)
    }

    pub fn curve(&self, horizon: u32) -> Result<Vec<CurveRow>, CouplingError> {
        (1..=horizon)
            .map(|t| {
                let predicted = self.predicted(f64::from(t))?;
                let band = match &self.tpl {
                    Some(tpl) => Some(confidence_band(predicted, tpl, self.n)?),
                    None => None,
                };
                Ok(CurveRow {
                    t,
                    date: self.start_date.map(|s| day_index_to_date(s, t)),
                    predicted,
                    lower: band.map(|b| b.lower),
                    upper: band.map(|b| b.upper),
                    observed: self.observed.get(t as usize - 1).copied(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtrReport {
    pub rows: Vec<FtrRow>,
    pub power_law: Vec<PlRow>,
    pub fits: Vec<UnitFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarReport {
    pub row: DarRow,
    pub curve: Vec<CurveRow>,
    pub fit: UnitFit,
}

/// Structured-object report, tagged by pipeline.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Report {
    Ftr(FtrReport),
    Dar(DarReport),
}

impl Report {
    pub fn fits(&self) -> Vec<&UnitFit> {
        match self {
            Report::Ftr(r) => r.fits.iter().collect(),
            Report::Dar(r) => vec![&r.fit],
        }
    }
}

/// Writes a header and rows as comma-separated values.
pub fn write_dsv<W: Write>(
    out: W,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}
