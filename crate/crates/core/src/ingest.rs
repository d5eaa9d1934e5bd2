//! Input parsing and series preparation.
//!
//! Handles the cumulative-deaths CSV layout published by the JHU CSSE
//! repository, a two-column country→continent map, and tab-separated
//! abundance tables. Counts stay as exact integers until fitting.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diversity::{AbundanceTable, DiversityError};
use crate::regression::VarianceMeanPair;
use crate::scalar::{from_usize, lit, Scalar};

/// Name of the synthetic all-continent series.
pub const WORLD: &str = "World";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("MalformedHeader: {0}")]
    MalformedHeader(String),
    #[error("RaggedRow: line {line} has {got} fields, expected {expected}")]
    RaggedRow {
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("UnparseableDate: column {column} header {value:?}")]
    UnparseableDate { column: usize, value: String },
    #[error("UnparseableCount: line {line}, column {column:?}: {value:?}")]
    UnparseableCount {
        line: u64,
        column: String,
        value: String,
    },
    #[error("NegativeCount: line {line}, column {column:?}: {value:?}")]
    NegativeCount {
        line: u64,
        column: String,
        value: String,
    },
    #[error("DuplicateSampleId: {0:?}")]
    DuplicateSampleId(String),
    #[error("UnmappedCountry: {0:?} has no continent")]
    UnmappedCountry(String),
    #[error("MisalignedDates: series {0:?} does not share the common date axis")]
    MisalignedDates(String),
    #[error("DateOutOfRange: {date} is outside {first}..={last}")]
    DateOutOfRange {
        date: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("EmptyInput: {0}")]
    EmptyInput(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Table(#[from] DiversityError),
}

/// Daily cumulative counts for one region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSeries {
    pub region: String,
    pub province: Option<String>,
    pub dates: Vec<NaiveDate>,
    pub cumulative: Vec<u64>,
}

impl RegionSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    fn index_of(&self, date: NaiveDate) -> Result<usize, IngestError> {
        let (first, last) = match (self.first_date(), self.last_date()) {
            (Some(f), Some(l)) => (f, l),
            _ => {
                return Err(IngestError::EmptyInput(format!(
                    "series {:?} has no dates",
                    self.region
                )))
            }
        };
        let offset = (date - first).num_days();
        if date < first || date > last || self.dates.get(offset as usize) != Some(&date) {
            return Err(IngestError::DateOutOfRange { date, first, last });
        }
        Ok(offset as usize)
    }

    pub fn value_on(&self, date: NaiveDate) -> Option<u64> {
        self.index_of(date).ok().map(|i| self.cumulative[i])
    }

    /// Indices `i` where the count drops below the previous day's.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        self.cumulative
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0])
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Drops every day after `end`.
    pub fn clip_end(&self, end: NaiveDate) -> Result<RegionSeries, IngestError> {
        let i = self.index_of(end)?;
        Ok(RegionSeries {
            region: self.region.clone(),
            province: self.province.clone(),
            dates: self.dates[..=i].to_vec(),
            cumulative: self.cumulative[..=i].to_vec(),
        })
    }
}

/// Series re-based at a start date: `f_rel[T-1] = cumulative(start + T - 1) - baseline`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedSeries {
    pub region: String,
    pub start_date: NaiveDate,
    /// Cumulative count on the day before `start_date`, or 0.
    pub baseline: u64,
    /// Relative counts for `T = 1..=m`. Signed because source corrections can
    /// take the cumulative count below the baseline.
    pub f_rel: Vec<i64>,
}

impl TruncatedSeries {
    pub fn len(&self) -> usize {
        self.f_rel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_rel.is_empty()
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::days(self.f_rel.len().saturating_sub(1) as i64)
    }

    /// Cumulative count on the last day, baseline included.
    pub fn observed_latest(&self) -> i64 {
        self.baseline as i64 + self.f_rel.last().copied().unwrap_or(0)
    }

    /// `baseline + f_rel[T-1]`, the original cumulative count on day `T`.
    pub fn cumulative_at(&self, t: usize) -> Option<i64> {
        t.checked_sub(1)
            .and_then(|i| self.f_rel.get(i))
            .map(|&f| self.baseline as i64 + f)
    }

    /// `(T, f_rel)` for days with a positive relative count.
    pub fn positive_points<T: Scalar>(&self) -> Vec<(T, T)> {
        self.f_rel
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0)
            .map(|(i, &f)| (from_usize(i + 1), lit(f as f64)))
            .collect()
    }
}

pub fn truncate_series(
    series: &RegionSeries,
    start_date: NaiveDate,
) -> Result<TruncatedSeries, IngestError> {
    let i = series.index_of(start_date)?;
    let baseline = if i == 0 { 0 } else { series.cumulative[i - 1] };
    let f_rel = series.cumulative[i..]
        .iter()
        .map(|&c| c as i64 - baseline as i64)
        .collect();
    Ok(TruncatedSeries {
        region: series.region.clone(),
        start_date,
        baseline,
        f_rel,
    })
}

const JHU_FIXED: [&str; 4] = ["Province/State", "Country/Region", "Lat", "Long"];

fn parse_jhu_date(column: usize, raw: &str) -> Result<NaiveDate, IngestError> {
    let err = || IngestError::UnparseableDate {
        column,
        value: raw.to_string(),
    };
    let mut parts = raw.trim().split('/');
    let (Some(m), Some(d), Some(y), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(err());
    };
    let m: u32 = m.parse().map_err(|_| err())?;
    let d: u32 = d.parse().map_err(|_| err())?;
    let y: i32 = y.parse().map_err(|_| err())?;
    if !(0..100).contains(&y) {
        return Err(err());
    }
    NaiveDate::from_ymd_opt(2000 + y, m, d).ok_or_else(err)
}

/// Parses the JHU CSSE global deaths layout: `Province/State,Country/Region,
/// Lat,Long` followed by `M/D/YY` date columns.
pub fn parse_jhu_deaths<R: Read>(input: R) -> Result<Vec<RegionSeries>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < JHU_FIXED.len() {
        return Err(IngestError::MalformedHeader(format!(
            "expected at least {} columns, got {}",
            JHU_FIXED.len(),
            header.len()
        )));
    }
    for (i, expected) in JHU_FIXED.iter().enumerate() {
        let got = header[i].trim().trim_start_matches('\u{feff}');
        if got != *expected {
            return Err(IngestError::MalformedHeader(format!(
                "column {} is {got:?}, expected {expected:?}",
                i + 1
            )));
        }
    }
    let dates = header
        .iter()
        .enumerate()
        .skip(JHU_FIXED.len())
        .map(|(i, raw)| parse_jhu_date(i + 1, raw))
        .collect::<Result<Vec<_>, _>>()?;
    if dates.windows(2).any(|w| w[1] != w[0] + Duration::days(1)) {
        return Err(IngestError::MalformedHeader(
            "date columns must be consecutive days".into(),
        ));
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(IngestError::RaggedRow {
                line,
                expected: header.len(),
                got: record.len(),
            });
        }
        let province = record[0].trim();
        let cumulative = record
            .iter()
            .enumerate()
            .skip(JHU_FIXED.len())
            .map(|(j, raw)| {
                let raw = raw.trim();
                raw.parse::<u64>()
                    .map_err(|_| IngestError::UnparseableCount {
                        line,
                        column: header[j].to_string(),
                        value: raw.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(RegionSeries {
            region: record[1].trim().to_string(),
            province: (!province.is_empty()).then(|| province.to_string()),
            dates: dates.clone(),
            cumulative,
        });
    }
    Ok(out)
}

/// Country → continent lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinentMap {
    map: BTreeMap<String, String>,
}

impl ContinentMap {
    pub fn continent_of(&self, country: &str) -> Option<&str> {
        self.map.get(country).map(String::as_str)
    }

    pub fn insert(&mut self, country: impl Into<String>, continent: impl Into<String>) {
        self.map.insert(country.into(), continent.into());
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for ContinentMap {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let mut m = ContinentMap::default();
        for (k, v) in iter {
            m.insert(k, v);
        }
        m
    }
}

/// Two-column CSV with header `country,continent`.
pub fn parse_continent_map<R: Read>(input: R) -> Result<ContinentMap, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let cols: Vec<&str> = header
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}'))
        .collect();
    if cols != ["country", "continent"] {
        return Err(IngestError::MalformedHeader(format!(
            "continent map header must be country,continent, got {cols:?}"
        )));
    }
    let mut map = ContinentMap::default();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(IngestError::RaggedRow {
                line,
                expected: 2,
                got: record.len(),
            });
        }
        map.insert(record[0].trim(), record[1].trim());
    }
    Ok(map)
}

fn check_aligned(series: &[RegionSeries]) -> Result<&[NaiveDate], IngestError> {
    let first = series
        .first()
        .ok_or_else(|| IngestError::EmptyInput("no series to aggregate".into()))?;
    for s in series {
        if s.dates != first.dates || s.cumulative.len() != s.dates.len() {
            return Err(IngestError::MisalignedDates(s.region.clone()));
        }
    }
    Ok(&first.dates)
}

/// Group series by continent (rows of the same country included).
pub fn group_by_continent<'a>(
    series: &'a [RegionSeries],
    map: &ContinentMap,
) -> Result<BTreeMap<String, Vec<&'a RegionSeries>>, IngestError> {
    let mut groups: BTreeMap<String, Vec<&RegionSeries>> = BTreeMap::new();
    for s in series {
        let continent = map
            .continent_of(&s.region)
            .ok_or_else(|| IngestError::UnmappedCountry(s.region.clone()))?;
        groups.entry(continent.to_string()).or_default().push(s);
    }
    Ok(groups)
}

/// Element-wise sums per continent (alphabetical), followed by a `World`
/// series summing every continent.
pub fn aggregate_regions(
    series: &[RegionSeries],
    map: &ContinentMap,
) -> Result<Vec<RegionSeries>, IngestError> {
    let dates = check_aligned(series)?;
    let groups = group_by_continent(series, map)?;
    let sum = |name: &str, members: &[&RegionSeries]| {
        let mut total = vec![0u64; dates.len()];
        for m in members {
            for (t, &c) in total.iter_mut().zip(&m.cumulative) {
                *t += c;
            }
        }
        RegionSeries {
            region: name.to_string(),
            province: None,
            dates: dates.to_vec(),
            cumulative: total,
        }
    };
    let mut out: Vec<RegionSeries> = groups
        .iter()
        .map(|(continent, members)| sum(continent, members))
        .collect();
    let all: Vec<&RegionSeries> = out.iter().collect();
    let world = sum(WORLD, &all);
    out.push(world);
    Ok(out)
}

/// Cross-sectional (mean, unbiased variance) of the member series' counts on
/// each day of `start..=end`. Days where either statistic is zero are
/// skipped.
pub fn cross_sectional_pairs<T: Scalar>(
    members: &[&RegionSeries],
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<VarianceMeanPair<T>>, IngestError> {
    if members.len() < 2 {
        return Ok(Vec::new());
    }
    let nf: T = from_usize(members.len());
    let mut pairs = Vec::new();
    let mut day = start;
    while day <= end {
        let values = members
            .iter()
            .map(|m| m.index_of(day).map(|i| lit::<T>(m.cumulative[i] as f64)))
            .collect::<Result<Vec<T>, _>>()?;
        let mean = values.iter().copied().sum::<T>() / nf;
        let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (nf - T::one());
        let pair = VarianceMeanPair::new(mean, var);
        if pair.is_loggable() {
            pairs.push(pair);
        }
        day += Duration::days(1);
    }
    Ok(pairs)
}

/// Tab-separated abundance table: a header row of taxon ids (optionally
/// preceded by a corner cell over the sample-id column), then one row per
/// sample of `id<TAB>count<TAB>count...`. LF or CRLF line endings.
pub fn parse_abundance_table<R: Read>(mut input: R) -> Result<AbundanceTable, IngestError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (_, header) = lines
        .next()
        .ok_or_else(|| IngestError::EmptyInput("abundance table is empty".into()))?;
    let header: Vec<&str> = header.split('\t').collect();
    let rows: Vec<(u64, Vec<&str>)> = lines.map(|(n, l)| (n, l.split('\t').collect())).collect();
    let width = rows
        .first()
        .map(|(_, r)| r.len())
        .unwrap_or(header.len() + 1);

    let taxa: Vec<&str> = if header.len() + 1 == width {
        header
    } else if header.len() == width {
        header[1..].to_vec()
    } else {
        return Err(IngestError::MalformedHeader(format!(
            "{} header cells do not match {} fields per row",
            header.len(),
            width
        )));
    };
    let mut seen_taxa = HashSet::new();
    for (j, t) in taxa.iter().enumerate() {
        if t.trim().is_empty() {
            return Err(IngestError::MalformedHeader(format!(
                "taxon column {} has an empty id",
                j + 1
            )));
        }
        if !seen_taxa.insert(t.trim()) {
            return Err(IngestError::MalformedHeader(format!(
                "duplicate taxon id {:?}",
                t.trim()
            )));
        }
    }

    let mut sample_ids = Vec::with_capacity(rows.len());
    let mut counts = Vec::with_capacity(rows.len());
    let mut seen = HashSet::new();
    for (line, fields) in rows {
        if fields.len() != taxa.len() + 1 {
            return Err(IngestError::RaggedRow {
                line,
                expected: taxa.len() + 1,
                got: fields.len(),
            });
        }
        let id = fields[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateSampleId(id));
        }
        let row = fields[1..]
            .iter()
            .zip(&taxa)
            .map(|(raw, taxon)| {
                let raw = raw.trim();
                match raw.parse::<i64>() {
                    Ok(v) if v < 0 => Err(IngestError::NegativeCount {
                        line,
                        column: taxon.to_string(),
                        value: raw.to_string(),
                    }),
                    Ok(v) => Ok(v as u64),
                    Err(_) => Err(IngestError::UnparseableCount {
                        line,
                        column: taxon.to_string(),
                        value: raw.to_string(),
                    }),
                }
            })
            .collect::<Result<Vec<u64>, _>>()?;
        sample_ids.push(id);
        counts.push(row);
    }
    let taxa = taxa.into_iter().map(|t| t.trim().to_string()).collect();
    Ok(AbundanceTable::new(sample_ids, taxa, counts)?)
}

/// Canonical TSV form: `sample` corner cell, LF line endings.
pub fn write_abundance_table<W: Write>(table: &AbundanceTable, mut out: W) -> std::io::Result<()> {
    write!(out, "sample")?;
    for t in table.taxon_ids() {
        write!(out, "\t{t}")?;
    }
    writeln!(out)?;
    for (id, row) in table.sample_ids().iter().zip(table.counts()) {
        write!(out, "{id}")?;
        for c in row {
            write!(out, "\t{c}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
