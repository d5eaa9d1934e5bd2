#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// One source row: optional province, country, integer weight.
pub type Member = (Option<&'static str>, &'static str, u64);

/// A continent whose member rows split a generated total by fixed weights.
pub struct Unit {
    pub continent: &'static str,
    pub members: Vec<Member>,
    /// Total on the day before the start date; a multiple of the weight sum.
    pub baseline: u64,
    /// Growth above the baseline on day `t >= 1`.
    pub growth: Box<dyn Fn(f64) -> f64>,
}

impl Unit {
    fn weight(&self) -> u64 {
        self.members.iter().map(|m| m.2).sum()
    }

    /// Unit total on each day, rounded to a multiple of the weight sum so
    /// the member split is exact. Lead days ramp up to the baseline.
    pub fn totals(&self, lead: usize, days: usize) -> Vec<u64> {
        let w = self.weight();
        let lead_part = (0..lead).map(|i| self.baseline / w * (i as u64 + 1) / lead as u64 * w);
        let body = (1..=days).map(|t| {
            let v = self.baseline as f64 + (self.growth)(t as f64);
            (v / w as f64).round() as u64 * w
        });
        lead_part.chain(body).collect()
    }
}

pub struct FtrFixture {
    pub deaths: PathBuf,
    pub continents: PathBuf,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub lead: usize,
    pub days: usize,
}

/// Writes a JHU-style deaths file and a continent map for `units`.
pub fn write_ftr_fixture(
    dir: &Path,
    units: &[Unit],
    start: NaiveDate,
    lead: usize,
    days: usize,
) -> FtrFixture {
    let first = start - Duration::days(lead as i64);
    let mut text = String::from("Province/State,Country/Region,Lat,Long");
    for i in 0..lead + days {
        text.push_str(
            &(first + Duration::days(i as i64))
                .format(",%-m/%-d/%y")
                .to_string(),
        );
    }
    text.push('\n');
    let mut map = BTreeSet::new();
    for u in units {
        let totals = u.totals(lead, days);
        let w = u.weight();
        for &(province, country, share) in &u.members {
            text.push_str(&format!("{},\"{country}\",0.0,0.0", province.unwrap_or("")));
            for t in &totals {
                text.push_str(&format!(",{}", t / w * share));
            }
            text.push('\n');
            map.insert((country, u.continent));
        }
    }
    let mut continents = String::from("country,continent\n");
    for (country, continent) in map {
        continents.push_str(&format!("\"{country}\",{continent}\n"));
    }
    let deaths = dir.join("deaths.csv");
    let cont = dir.join("continents.csv");
    fs::write(&deaths, text).unwrap();
    fs::write(&cont, continents).unwrap();
    FtrFixture {
        deaths,
        continents: cont,
        start,
        end: start + Duration::days(days as i64 - 1),
        lead,
        days,
    }
}

pub fn plec(c: f64, w: f64, d: f64) -> Box<dyn Fn(f64) -> f64> {
    Box::new(move |t: f64| c * t.powf(w) * (d * t).exp())
}

/// Two continents with known cutoff curves, three countries, four rows.
pub fn three_country_units() -> Vec<Unit> {
    vec![
        Unit {
            continent: "Alpha",
            members: vec![(None, "Aland", 2), (None, "Borduria", 3)],
            baseline: 200_000,
            growth: plec(500.0, 1.3, -0.012),
        },
        Unit {
            continent: "Beta",
            members: vec![
                (Some("North"), "Carpania", 3),
                (Some("South"), "Carpania", 7),
            ],
            baseline: 50_000,
            growth: plec(200.0, 1.1, -0.008),
        },
    ]
}

/// Accelerating growth with no turning point in sight.
pub fn asia_like_units() -> Vec<Unit> {
    vec![Unit {
        continent: "Asia",
        members: vec![(None, "Amestris", 1), (None, "Xing", 3)],
        baseline: 1_000_000,
        growth: Box::new(|t: f64| 50.0 * t.powf(2.07) * (1.0 + 0.02 * (t / 120.0).powi(2))),
    }]
}

/// Tab-separated table whose samples carry taxon `j` with probability
/// `0.03 + 0.4·(j/R)²`.
pub fn synthetic_community_tsv(richness: usize, samples: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("sample");
    for j in 0..richness {
        text.push_str(&format!("\totu{j}"));
    }
    text.push('\n');
    for i in 0..samples {
        let mut row: Vec<u64> = (0..richness)
            .map(|j| {
                let p = 0.03 + 0.4 * (j as f64 / richness as f64).powi(2);
                if rng.random_bool(p) {
                    rng.random_range(1..50)
                } else {
                    0
                }
            })
            .collect();
        if row.iter().all(|&c| c == 0) {
            row[richness - 1] = 1;
        }
        text.push_str(&format!("s{i}"));
        for c in row {
            text.push_str(&format!("\t{c}"));
        }
        text.push('\n');
    }
    text
}

pub const THREE_SAMPLES_TSV: &str = "sample\totu0\totu1\totu2\totu3\totu4\totu5\n\
s0\t4\t0\t1\t0\t2\t0\n\
s1\t0\t3\t1\t0\t0\t0\n\
s2\t1\t0\t0\t6\t0\t1\n";

/// Header and records of a comma-separated file.
pub fn read_dsv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

pub fn cell<'a>(header: &[String], row: &'a [String], name: &str) -> &'a str {
    let i = header.iter().position(|h| h == name).unwrap();
    &row[i]
}

pub fn num(header: &[String], row: &[String], name: &str) -> f64 {
    cell(header, row, name).parse().unwrap()
}
