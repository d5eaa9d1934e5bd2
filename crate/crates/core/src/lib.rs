//! Coupled power-law estimation.
//!
//! A power law with exponential cutoff, `y = c·x^w·e^{d·x}`, is fitted to a
//! cumulative series (fatalities over days, diversity over pooled samples)
//! and its maximum `x_max = -w/d` gives the eventual turning point.
//! Taylor's power law `V = a·M^b`, fitted to mean/variance pairs, supplies
//! the variance at the predicted level, which yields a 95% band around it.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

// `!(x > 0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod diversity;
pub mod ingest;
pub mod plec;
pub mod regression;
mod scalar;

pub use coupling::{
    compute_asymptote, confidence_band, date_to_day_index, day_index_to_date, fit_accumulation,
    run_dar_pipeline, run_ftr_pipeline, CouplingError, FallbackReason, Outcome, CUTOFF_ALPHA, Z_95,
};
pub use diversity::{
    accumulate, hill_number, resample_accumulation, resample_accumulation_serial, AbundanceTable,
    DiversityError,
};
pub use ingest::{
    aggregate_regions, cross_sectional_pairs, parse_abundance_table, parse_continent_map,
    parse_jhu_deaths, truncate_series, write_abundance_table, ContinentMap, IngestError,
    RegionSeries, TruncatedSeries, WORLD,
};
pub use plec::{cutoff_p_value, fit_plec, plec_eval, plec_jacobian, PlecError};
pub use regression::{fit_loglog, fit_pl_growth, predict_variance, RegressionError};
pub use scalar::Scalar;

pub type TplFit = regression::TplFit<f64>;
pub type PlFit = regression::PlFit<f64>;
pub type VarianceMeanPair = regression::VarianceMeanPair<f64>;
pub type PlecModel = plec::PlecModel<f64>;
pub type FitOptions = plec::FitOptions<f64>;
pub type FitDiagnostics = plec::FitDiagnostics<f64>;
pub type AsymptotePrediction = coupling::AsymptotePrediction<f64>;
pub type ConfidenceBand = coupling::ConfidenceBand<f64>;
pub type HorizonPrediction = coupling::HorizonPrediction<f64>;
pub type CoupledPrediction = coupling::CoupledPrediction<f64>;
pub type AccumulationCurve = diversity::AccumulationCurve<f64>;
