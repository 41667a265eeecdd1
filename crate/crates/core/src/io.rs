//! CSV formats for observations, dose schedules, campaign comparisons and plot series.
//!
//! All dates are ISO-8601. Day indices count from the earliest date in the data.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};

use crate::allocate::{ComparisonReport, DayTotals, ScheduleRow};
use crate::epimodel::DoseSchedule;
use crate::error::{Error, Result};
use crate::estimate::Observation;

pub const OBSERVATION_HEADER: [&str; 5] = [
    "date",
    "location",
    "detected_active",
    "deaths_cum",
    "recovered_cum",
];
pub const SCHEDULE_HEADER: [&str; 5] = ["date", "location", "group", "first_doses", "second_doses"];
pub const COMPARISON_HEADER: [&str; 6] = [
    "doses",
    "random_infections",
    "approach_infections",
    "r_saving",
    "a_saving",
    "advantage",
];

/// Observations of every location, with day 0 at `first_date`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub first_date: NaiveDate,
    pub rows: Vec<Observation>,
}

impl ObservationTable {
    /// Location names in order of first appearance.
    pub fn locations(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .filter(|o| seen.insert(o.location.as_str()))
            .map(|o| o.location.clone())
            .collect()
    }

    /// Rows of one location sorted by day.
    pub fn for_location(&self, name: &str) -> Vec<Observation> {
        let mut rows: Vec<Observation> = self
            .rows
            .iter()
            .filter(|o| o.location == name)
            .cloned()
            .collect();
        rows.sort_by_key(|o| o.day);
        rows
    }

    pub fn date_of(&self, day: u32) -> NaiveDate {
        date_of(self.first_date, day)
    }

    /// Day index of `date`, or `None` before the first date.
    pub fn day_of(&self, date: NaiveDate) -> Option<u32> {
        day_between(self.first_date, date)
    }
}

pub fn date_of(first: NaiveDate, day: u32) -> NaiveDate {
    first + Days::new(day as u64)
}

fn day_between(first: NaiveDate, date: NaiveDate) -> Option<u32> {
    u32::try_from((date - first).num_days()).ok()
}

fn schema(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    schema(path, line, e.to_string())
}

/// Reads the header and every record, keeping each record's line number.
fn records<R: Read>(reader: R, path: &str, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.is_empty() || (found.len() == 1 && found[0].is_empty()) {
        return Err(schema(path, 1, "file is empty"));
    }
    if found.iter().ne(header.iter().copied()) {
        return Err(schema(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_date(path: &str, line: u64, field: &str) -> Result<NaiveDate> {
    field
        .parse::<NaiveDate>()
        .map_err(|_| schema(path, line, format!("`{field}` is not an ISO date")))
}

fn parse_count(path: &str, line: u64, name: &str, field: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(schema(path, line, format!("{name} `{field}` is not a nonnegative number"))),
    }
}

/// Parses `date,location,detected_active,deaths_cum,recovered_cum` rows.
///
/// `path` only labels errors.
pub fn read_observations<R: Read>(reader: R, path: &str) -> Result<ObservationTable> {
    let recs = records(reader, path, &OBSERVATION_HEADER)?;
    if recs.is_empty() {
        return Err(schema(path, 1, "no observations"));
    }
    let mut parsed = Vec::with_capacity(recs.len());
    let mut seen = HashSet::new();
    for (line, rec) in &recs {
        let line = *line;
        let date = parse_date(path, line, &rec[0])?;
        let location = rec[1].to_owned();
        if location.is_empty() {
            return Err(schema(path, line, "empty location"));
        }
        if !seen.insert((location.clone(), date)) {
            return Err(schema(path, line, format!("duplicate row for {location} on {date}")));
        }
        let detected = parse_count(path, line, "detected_active", &rec[2])?;
        let deaths = parse_count(path, line, "deaths_cum", &rec[3])?;
        let recovered = parse_count(path, line, "recovered_cum", &rec[4])?;
        parsed.push((date, location, detected, deaths, recovered));
    }
    let first_date = parsed.iter().map(|r| r.0).min().expect("nonempty");
    let rows = parsed
        .into_iter()
        .map(|(date, location, detected, deaths, recovered)| Observation {
            day: day_between(first_date, date).expect("after the first date"),
            location,
            detected,
            deaths,
            recovered,
        })
        .collect();
    Ok(ObservationTable { first_date, rows })
}

pub fn load_observations(path: &Path) -> Result<ObservationTable> {
    read_observations(File::open(path)?, &path.display().to_string())
}

/// Writes observations back in the input format.
pub fn write_observations<W: Write>(table: &ObservationTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OBSERVATION_HEADER)?;
    for o in &table.rows {
        w.write_record([
            table.date_of(o.day).to_string(),
            o.location.clone(),
            o.detected.to_string(),
            o.deaths.to_string(),
            o.recovered.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schedule<W: Write>(rows: &[ScheduleRow], first: NaiveDate, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCHEDULE_HEADER)?;
    for r in rows {
        w.write_record([
            date_of(first, r.day).to_string(),
            r.location.clone(),
            r.group.to_string(),
            r.first_doses.to_string(),
            r.second_doses.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a schedule file into daily first and second doses, summed over groups
/// and over every location unless `location` is given.
pub fn read_schedule<R: Read>(
    reader: R,
    path: &str,
    first: NaiveDate,
    location: Option<&str>,
) -> Result<DoseSchedule> {
    let mut daily: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    for (line, rec) in records(reader, path, &SCHEDULE_HEADER)? {
        let date = parse_date(path, line, &rec[0])?;
        let day = day_between(first, date)
            .ok_or_else(|| schema(path, line, format!("{date} precedes day 0 ({first})")))?;
        if rec[2].parse::<usize>().map_or(true, |g| g == 0) {
            return Err(schema(path, line, format!("group `{}` is not a positive integer", &rec[2])));
        }
        let d1 = parse_count(path, line, "first_doses", &rec[3])?;
        let d2 = parse_count(path, line, "second_doses", &rec[4])?;
        if location.is_some_and(|l| l != &rec[1]) {
            continue;
        }
        let slot = daily.entry(day).or_default();
        slot[0] += d1;
        slot[1] += d2;
    }
    let (Some((&start, _)), Some((&end, _))) = (daily.first_key_value(), daily.last_key_value()) else {
        return Ok(DoseSchedule::None);
    };
    Ok(DoseSchedule::from_fn(start, end - start + 1, 2, |d, i| {
        daily.get(&d).map_or(0.0, |x| x[i])
    }))
}

pub fn load_schedule(path: &Path, first: NaiveDate, location: Option<&str>) -> Result<DoseSchedule> {
    read_schedule(File::open(path)?, &path.display().to_string(), first, location)
}

/// One row per budget.
pub fn write_comparison<W: Write>(reports: &[ComparisonReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER)?;
    for r in reports {
        w.write_record([
            r.doses.to_string(),
            fmt(r.random.infections),
            fmt(r.approach.infections),
            fmt(r.r_saving),
            fmt(r.a_saving),
            fmt(r.advantage),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Daily quantity plotted for each arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    Infections,
    Detected,
    Deaths,
    Immunized,
}

impl Series {
    pub const ALL: [Series; 4] = [Series::Infections, Series::Detected, Series::Deaths, Series::Immunized];

    pub fn name(self) -> &'static str {
        match self {
            Series::Infections => "infections",
            Series::Detected => "detected",
            Series::Deaths => "deaths",
            Series::Immunized => "immunized",
        }
    }

    fn pick(self, d: &DayTotals) -> f64 {
        match self {
            Series::Infections => d.infections,
            Series::Detected => d.detected,
            Series::Deaths => d.deaths,
            Series::Immunized => d.immunized_percent,
        }
    }
}

/// `date,day,baseline,random,approach` rows of one daily quantity.
pub fn write_series<W: Write>(report: &ComparisonReport, series: Series, first: NaiveDate, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "day", "baseline", "random", "approach"])?;
    let arms = [&report.baseline.daily, &report.random.daily, &report.approach.daily];
    for (k, base) in report.baseline.daily.iter().enumerate() {
        let mut row = vec![date_of(first, base.day).to_string(), base.day.to_string()];
        for arm in arms {
            row.push(arm.get(k).map_or_else(String::new, |d| fmt(series.pick(d))));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.3}")
}
