//! Commands behind the `tplec` binary.
//!
//! * `ftr`: cutoff fits of continent and world fatality series with bands.
//! * `dar`: diversity accumulation on an abundance table.
//! * `curve`: per-day (or per-sample) predicted values and bands.
//!
//! Input problems surface as [`CliError`] (exit status 2). A unit whose
//! fit fails is still reported, with empty cells.

pub mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, ValueEnum};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use tplec_core::coupling::Outcome;
use tplec_core::{
    aggregate_regions, cross_sectional_pairs, date_to_day_index, fit_accumulation,
    parse_abundance_table, parse_continent_map, parse_jhu_deaths, resample_accumulation,
    run_dar_pipeline, run_ftr_pipeline, truncate_series, CouplingError, DiversityError, FitOptions,
    IngestError, PlecModel, RegionSeries, TplFit,
};

use report::{
    write_dsv, CurveRow, DarReport, DarRow, FtrReport, FtrRow, PlRow, Report, UnitFit,
    CURVE_COLUMNS, DAR_COLUMNS, FTR_COLUMNS, PL_COLUMNS,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{op}: {source}")]
    Ingest {
        op: &'static str,
        source: IngestError,
    },
    #[error("{op}: {source}")]
    Diversity {
        op: &'static str,
        source: DiversityError,
    },
    #[error("{op}: {source}")]
    Coupling {
        op: &'static str,
        source: CouplingError,
    },
    #[error("{op}: InvalidArgument: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: {}: {source}", path.display())]
    Io {
        op: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{op}: {source}")]
    Csv {
        op: &'static str,
        source: csv::Error,
    },
    #[error("{op}: {source}")]
    Json {
        op: &'static str,
        source: serde_json::Error,
    },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    /// Comma-separated values with a header row.
    #[default]
    Dsv,
    /// A single JSON document.
    Obj,
}

#[derive(Debug, Clone, Args)]
pub struct FtrArgs {
    /// JHU-style cumulative deaths CSV.
    #[arg(long)]
    pub deaths: PathBuf,
    /// `country,continent` CSV.
    #[arg(long)]
    pub continents: PathBuf,
    /// First modelled day (day 1), YYYY-MM-DD.
    #[arg(long)]
    pub start: NaiveDate,
    /// Last modelled day, YYYY-MM-DD.
    #[arg(long)]
    pub end: NaiveDate,
    /// Sample size in the band half-width; defaults to the number of fitted days.
    #[arg(long)]
    pub n: Option<usize>,
    /// Dates for power-law fallback predictions (repeatable); defaults to
    /// 30, 60 and 90 days after `--end`.
    #[arg(long)]
    pub horizon: Vec<NaiveDate>,
    /// Report table, or the whole report with `--format obj`.
    #[arg(long)]
    pub out: PathBuf,
    /// Fallback prediction table (dsv only); defaults to `<out>.pl.csv`.
    #[arg(long)]
    pub pl_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Dsv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct DarArgs {
    /// Tab-separated abundance table, one sample per row.
    #[arg(long)]
    pub abundance: PathBuf,
    /// Hill number order.
    #[arg(long, default_value_t = 0.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample size in the band half-width; defaults to the number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Last step of the emitted curve; defaults to the number of samples.
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Summary row, or the whole report with `--format obj`.
    #[arg(long)]
    pub out: PathBuf,
    /// Curve table (dsv only); defaults to `<out>.curve.csv`.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Dsv)]
    pub format: Format,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CurveArgs {
    /// Report written by `ftr` or `dar` with `--format obj`.
    #[arg(long, conflicts_with_all = ["c", "w", "d"])]
    pub report: Option<PathBuf>,
    /// Unit to draw from a multi-unit report.
    #[arg(long, requires = "report")]
    pub unit: Option<String>,
    #[arg(long, requires_all = ["w", "d"])]
    pub c: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub w: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub d: Option<f64>,
    /// Taylor's power law intercept ln a; with `--tpl-b` adds a band.
    #[arg(long, requires = "tpl_b", allow_negative_numbers = true)]
    pub tpl_ln_a: Option<f64>,
    #[arg(long, requires = "tpl_ln_a", allow_negative_numbers = true)]
    pub tpl_b: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Count added to every predicted value.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub baseline: f64,
    /// Date of day 1.
    #[arg(long)]
    pub start: Option<NaiveDate>,
    /// Last `t`; defaults to the later of the data end and the turning point.
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Curve table.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Dsv)]
    pub format: Format,
}

fn open(op: &'static str, path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CliError::Io {
            op,
            path: path.to_path_buf(),
            source,
        })
}

fn create(op: &'static str, path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            op,
            path: path.to_path_buf(),
            source,
        })
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn write_table(
    op: &'static str,
    path: &Path,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let file = create(op, path)?;
    write_dsv(file, columns, rows).map_err(|source| CliError::Csv { op, source })
}

fn write_json<T: Serialize>(op: &'static str, path: &Path, value: &T) -> Result<()> {
    let mut file = create(op, path)?;
    serde_json::to_writer_pretty(&mut file, value)
        .map_err(|source| CliError::Json { op, source })?;
    writeln!(file)
        .and_then(|_| file.flush())
        .map_err(|source| CliError::Io {
            op,
            path: path.to_path_buf(),
            source,
        })
}

fn ingest(op: &'static str) -> impl Fn(IngestError) -> CliError {
    move |source| CliError::Ingest { op, source }
}

struct UnitResult {
    row: FtrRow,
    pl: Vec<PlRow>,
    fit: Option<UnitFit>,
}

fn ftr_unit(
    series: &RegionSeries,
    members: &[&RegionSeries],
    args: &FtrArgs,
    horizons: &[u32],
) -> Result<UnitResult> {
    let unit = series.region.as_str();
    let clipped = series.clip_end(args.end).map_err(ingest("clip_end"))?;
    let truncated = truncate_series(&clipped, args.start).map_err(ingest("truncate_series"))?;
    let pairs = cross_sectional_pairs::<f64>(members, args.start, args.end)
        .map_err(ingest("cross_sectional_pairs"))?;
    let observed: Vec<f64> = (1..=truncated.len())
        .filter_map(|t| truncated.cumulative_at(t))
        .map(|v| v as f64)
        .collect();
    let latest = truncated.observed_latest() as f64;
    let n = args
        .n
        .unwrap_or_else(|| truncated.positive_points::<f64>().len())
        .max(1);
    match run_ftr_pipeline(&truncated, &pairs, n, horizons, &FitOptions::default()) {
        Ok(pred) => {
            if let Outcome::PowerLaw { reason, .. } = &pred.outcome {
                warn!("{unit}: cutoff model rejected ({reason:?}), reporting power-law fallback");
            }
            Ok(UnitResult {
                row: FtrRow::from_prediction(unit, &pred),
                pl: PlRow::from_prediction(unit, &pred),
                fit: Some(UnitFit::from_prediction(unit, &pred, observed)),
            })
        }
        Err(e) => {
            warn!("{unit}: run_ftr_pipeline: {e}");
            Ok(UnitResult {
                row: FtrRow::empty(unit, Some(latest)),
                pl: Vec::new(),
                fit: None,
            })
        }
    }
}

/// Fatality-time report: one row per continent, then `World`.
pub fn cmd_ftr(args: &FtrArgs) -> Result<()> {
    if args.start >= args.end {
        return Err(CliError::Invalid {
            op: "cmd_ftr",
            msg: format!("--start {} must precede --end {}", args.start, args.end),
        });
    }
    if args.n == Some(0) {
        return Err(CliError::Invalid {
            op: "cmd_ftr",
            msg: "--n must be at least 1".into(),
        });
    }
    let rows = parse_jhu_deaths(open("parse_jhu_deaths", &args.deaths)?)
        .map_err(ingest("parse_jhu_deaths"))?;
    let map = parse_continent_map(open("parse_continent_map", &args.continents)?)
        .map_err(ingest("parse_continent_map"))?;
    for r in &rows {
        let bad = r.monotonicity_violations();
        if let Some(&first) = bad.first() {
            warn!(
                "{}{}: cumulative count decreases on {} day(s), first on {}",
                r.region,
                r.province
                    .as_deref()
                    .map(|p| format!(" / {p}"))
                    .unwrap_or_default(),
                bad.len(),
                r.dates[first]
            );
        }
    }
    let units = aggregate_regions(&rows, &map).map_err(ingest("aggregate_regions"))?;
    let groups = tplec_core::ingest::group_by_continent(&rows, &map)
        .map_err(ingest("group_by_continent"))?;
    let everyone: Vec<&RegionSeries> = rows.iter().collect();

    let horizon_dates = if args.horizon.is_empty() {
        [30, 60, 90]
            .iter()
            .map(|&k| args.end + chrono::Duration::days(k))
            .collect()
    } else {
        args.horizon.clone()
    };
    let horizons = horizon_dates
        .iter()
        .map(|&d| {
            u32::try_from(date_to_day_index(args.start, d))
                .ok()
                .filter(|&t| t >= 1)
                .ok_or_else(|| CliError::Invalid {
                    op: "cmd_ftr",
                    msg: format!("--horizon {d} precedes --start {}", args.start),
                })
        })
        .collect::<Result<Vec<u32>>>()?;

    let results = units
        .par_iter()
        .map(|u| {
            let members = groups.get(&u.region).map_or(&everyone, |m| m);
            ftr_unit(u, members, args, &horizons)
        })
        .collect::<Result<Vec<UnitResult>>>()?;

    let mut report = FtrReport {
        rows: Vec::new(),
        power_law: Vec::new(),
        fits: Vec::new(),
    };
    for r in results {
        report.rows.push(r.row);
        report.power_law.extend(r.pl);
        report.fits.extend(r.fit);
    }
    match args.format {
        Format::Dsv => {
            write_table(
                "cmd_ftr",
                &args.out,
                &FTR_COLUMNS,
                report.rows.iter().map(FtrRow::cells),
            )?;
            let pl_out = args
                .pl_out
                .clone()
                .unwrap_or_else(|| sidecar(&args.out, ".pl.csv"));
            write_table(
                "cmd_ftr",
                &pl_out,
                &PL_COLUMNS,
                report.power_law.iter().map(PlRow::cells),
            )
        }
        Format::Obj => write_json("cmd_ftr", &args.out, &Report::Ftr(report)),
    }
}

const NO_BAND_NOTE: &str =
    "no confidence band for q > 0: Taylor's power law is coupled for richness only";

/// Diversity-accumulation report: one summary row plus the curve.
pub fn cmd_dar(args: &DarArgs) -> Result<()> {
    if args.n == Some(0) {
        return Err(CliError::Invalid {
            op: "cmd_dar",
            msg: "--n must be at least 1".into(),
        });
    }
    let table = parse_abundance_table(open("parse_abundance_table", &args.abundance)?)
        .map_err(ingest("parse_abundance_table"))?;
    let curve =
        resample_accumulation(&table, args.replicates, args.q, args.seed).map_err(|source| {
            CliError::Diversity {
                op: "resample_accumulation",
                source,
            }
        })?;
    let unit = args
        .abundance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let n = args.n.unwrap_or(curve.len());
    let observed = curve.mean_diversity.clone();
    let mut row = DarRow {
        unit: unit.clone(),
        q: args.q,
        z: None,
        d: None,
        ln_c: None,
        r_squared: None,
        a_max: None,
        d_max: None,
        observed: *observed.last().unwrap_or(&0.0),
        lower_95: None,
        upper_95: None,
        fallback_used: false,
        note: String::new(),
    };
    let mut fit = UnitFit {
        unit: unit.clone(),
        model: None,
        power_law: None,
        tpl: None,
        n,
        baseline: 0.0,
        start_date: None,
        observed,
    };

    let fill_model = |row: &mut DarRow, m: &PlecModel, r2: f64| {
        row.z = Some(m.w);
        row.d = Some(m.d);
        row.ln_c = Some(m.ln_c());
        row.r_squared = Some(r2);
    };
    if args.q == 0.0 {
        match run_dar_pipeline(&curve, n, &FitOptions::default()) {
            Ok(pred) => {
                match &pred.outcome {
                    Outcome::Plec {
                        model,
                        diagnostics,
                        asymptote,
                        band,
                    } => {
                        fill_model(&mut row, model, diagnostics.r_squared);
                        row.a_max = Some(asymptote.x_max);
                        row.d_max = Some(asymptote.y_max);
                        row.lower_95 = Some(band.lower);
                        row.upper_95 = Some(band.upper);
                    }
                    Outcome::PowerLaw {
                        fit: pl, reason, ..
                    } => {
                        row.z = Some(pl.exponent);
                        row.ln_c = Some(pl.ln_c);
                        row.r_squared = Some(pl.r_squared());
                        row.fallback_used = true;
                        row.note = format!("power-law fallback: {reason:?}");
                        warn!("{unit}: {}", row.note);
                    }
                }
                fit = UnitFit::from_prediction(&unit, &pred, fit.observed);
            }
            Err(e) => {
                warn!("{unit}: run_dar_pipeline: {e}");
                row.note = e.to_string();
            }
        }
    } else {
        warn!("{unit}: {NO_BAND_NOTE}");
        row.note = NO_BAND_NOTE.into();
        match fit_accumulation(&curve, &FitOptions::default()) {
            Ok((model, diag, asymptote)) => {
                fill_model(&mut row, &model, diag.r_squared);
                if let Some(a) = asymptote {
                    row.a_max = Some(a.x_max);
                    row.d_max = Some(a.y_max);
                }
                fit.model = Some(model);
            }
            Err(e) => {
                warn!("{unit}: fit_accumulation: {e}");
                row.note = format!("{NO_BAND_NOTE}; {e}");
            }
        }
    }

    let horizon = args.horizon.unwrap_or(curve.len() as u32);
    let curve_rows = if fit.model.is_some() || fit.power_law.is_some() {
        fit.curve(horizon).map_err(|source| CliError::Coupling {
            op: "curve",
            source,
        })?
    } else {
        Vec::new()
    };
    match args.format {
        Format::Dsv => {
            write_table("cmd_dar", &args.out, &DAR_COLUMNS, [row.cells()])?;
            let curve_out = args
                .curve_out
                .clone()
                .unwrap_or_else(|| sidecar(&args.out, ".curve.csv"));
            write_table(
                "cmd_dar",
                &curve_out,
                &CURVE_COLUMNS,
                curve_rows.iter().map(CurveRow::cells),
            )
        }
        Format::Obj => write_json(
            "cmd_dar",
            &args.out,
            &Report::Dar(DarReport {
                row,
                curve: curve_rows,
                fit,
            }),
        ),
    }
}

fn fit_from_args(args: &CurveArgs) -> Result<UnitFit> {
    if let Some(path) = &args.report {
        let report: Report =
            serde_json::from_reader(open("cmd_curve", path)?).map_err(|source| CliError::Json {
                op: "cmd_curve",
                source,
            })?;
        let fits = report.fits();
        let chosen = match &args.unit {
            Some(u) => fits.into_iter().find(|f| &f.unit == u),
            None if fits.len() == 1 => fits.into_iter().next(),
            None => {
                return Err(CliError::Invalid {
                    op: "cmd_curve",
                    msg: "report has several units; pick one with --unit".into(),
                })
            }
        };
        let mut fit = chosen.cloned().ok_or_else(|| CliError::Invalid {
            op: "cmd_curve",
            msg: format!(
                "unit {:?} not in report",
                args.unit.as_deref().unwrap_or("")
            ),
        })?;
        if let Some(n) = args.n {
            fit.n = n;
        }
        return Ok(fit);
    }
    let (Some(c), Some(w), Some(d)) = (args.c, args.w, args.d) else {
        return Err(CliError::Invalid {
            op: "cmd_curve",
            msg: "give either --report or all of --c, --w, --d".into(),
        });
    };
    let tpl = args.tpl_ln_a.zip(args.tpl_b).map(|(ln_a, b)| TplFit {
        ln_a,
        b,
        r_squared: f64::NAN,
        n_pairs: 0,
    });
    Ok(UnitFit {
        unit: "curve".into(),
        model: Some(PlecModel::new(c, w, d)),
        power_law: None,
        tpl,
        n: args.n.unwrap_or(1),
        baseline: args.baseline,
        start_date: args.start,
        observed: Vec::new(),
    })
}

/// Plot data `t, date, predicted, lower, upper, observed` for one unit.
pub fn cmd_curve(args: &CurveArgs) -> Result<()> {
    if args.n == Some(0) {
        return Err(CliError::Invalid {
            op: "cmd_curve",
            msg: "--n must be at least 1".into(),
        });
    }
    let fit = fit_from_args(args)?;
    let horizon = args.horizon.unwrap_or_else(|| fit.default_horizon());
    let rows = fit.curve(horizon).map_err(|source| CliError::Coupling {
        op: "cmd_curve",
        source,
    })?;
    match args.format {
        Format::Dsv => write_table(
            "cmd_curve",
            &args.out,
            &CURVE_COLUMNS,
            rows.iter().map(CurveRow::cells),
        ),
        Format::Obj => write_json("cmd_curve", &args.out, &rows),
    }
}
