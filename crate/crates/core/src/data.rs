//! Censored observations, sampling schemes and CSV ingestion.
//!
//! Every censored datum is reduced to an information interval `(lower, upper]`
//! on `[0, ∞)`. Exact observations are the degenerate interval `[x, x]`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Exact,
    RightCensored,
    LeftCensored,
    Interval,
}

impl ObservationKind {
    pub fn csv_tag(self) -> &'static str {
        match self {
            ObservationKind::Exact => "exact",
            ObservationKind::RightCensored => "right",
            ObservationKind::LeftCensored => "left",
            ObservationKind::Interval => "interval",
        }
    }
}

impl fmt::Display for ObservationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.csv_tag())
    }
}

/// One censored datum. Construct through the kind-specific constructors,
/// which enforce the interval invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    kind: ObservationKind,
    lower: f64,
    upper: f64,
}

impl Observation {
    pub fn exact(x: f64) -> Result<Self> {
        check_time(x)?;
        Ok(Self {
            kind: ObservationKind::Exact,
            lower: x,
            upper: x,
        })
    }

    /// `X > c`.
    pub fn right(c: f64) -> Result<Self> {
        check_time(c)?;
        Ok(Self {
            kind: ObservationKind::RightCensored,
            lower: c,
            upper: f64::INFINITY,
        })
    }

    /// `X <= c`, i.e. `X ∈ (0, c]`.
    pub fn left(c: f64) -> Result<Self> {
        check_time(c)?;
        if c <= 0.0 {
            return Err(Error::InvalidObservation(format!(
                "left-censoring point must be positive, got {c}"
            )));
        }
        Ok(Self {
            kind: ObservationKind::LeftCensored,
            lower: 0.0,
            upper: c,
        })
    }

    /// `X ∈ (lower, upper]`. An infinite upper bound is accepted and yields
    /// the equivalent right-censored observation.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        check_time(lower)?;
        if upper.is_nan() || upper < 0.0 {
            return Err(Error::InvalidObservation(format!(
                "invalid upper bound {upper}"
            )));
        }
        if lower >= upper {
            return Err(Error::InvalidObservation(format!(
                "interval lower {lower} must be below upper {upper}"
            )));
        }
        if upper.is_infinite() {
            return Self::right(lower);
        }
        Ok(Self {
            kind: ObservationKind::Interval,
            lower,
            upper,
        })
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_exact(&self) -> bool {
        self.kind == ObservationKind::Exact
    }

    /// The information set `(lower, upper]` (degenerate for exact data).
    pub fn to_interval(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Whether the value `t` is consistent with this observation.
    pub fn contains(&self, t: f64) -> bool {
        if self.is_exact() {
            t == self.lower
        } else {
            self.lower < t && t <= self.upper
        }
    }
}

fn check_time(v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidObservation(format!("non-finite time {v}")));
    }
    if v < 0.0 {
        return Err(Error::NegativeTime { row: 0, value: v });
    }
    Ok(())
}

/// Observation-generating mechanism of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleScheme {
    Complete,
    RightCensored,
    DoublyCensored,
    IntervalCase1,
    IntervalCase2,
    PartlyIntervalCase1,
    PartlyIntervalGeneral,
}

impl SampleScheme {
    pub const ALL: [SampleScheme; 7] = [
        SampleScheme::Complete,
        SampleScheme::RightCensored,
        SampleScheme::DoublyCensored,
        SampleScheme::IntervalCase1,
        SampleScheme::IntervalCase2,
        SampleScheme::PartlyIntervalCase1,
        SampleScheme::PartlyIntervalGeneral,
    ];

    pub fn admits(self, kind: ObservationKind) -> bool {
        use ObservationKind::*;
        match self {
            SampleScheme::Complete => kind == Exact,
            SampleScheme::RightCensored => matches!(kind, Exact | RightCensored),
            SampleScheme::DoublyCensored => matches!(kind, Exact | RightCensored | LeftCensored),
            SampleScheme::IntervalCase1 => matches!(kind, RightCensored | LeftCensored),
            SampleScheme::IntervalCase2 => matches!(kind, Interval | RightCensored | LeftCensored),
            SampleScheme::PartlyIntervalCase1 => {
                matches!(kind, Exact | RightCensored | LeftCensored)
            }
            // (0, C1] is the first examination window, so left-censored rows
            // are the same information as an interval starting at 0.
            SampleScheme::PartlyIntervalGeneral => true,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            SampleScheme::Complete => "complete",
            SampleScheme::RightCensored => "right",
            SampleScheme::DoublyCensored => "doubly",
            SampleScheme::IntervalCase1 => "case1",
            SampleScheme::IntervalCase2 => "case2",
            SampleScheme::PartlyIntervalCase1 => "partly1",
            SampleScheme::PartlyIntervalGeneral => "partly",
        }
    }

    /// Schemes for which the NPMLE is known to converge weakly at rate √n.
    pub fn has_weak_convergence(self) -> bool {
        !matches!(self, SampleScheme::IntervalCase1 | SampleScheme::IntervalCase2)
    }
}

impl fmt::Display for SampleScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SampleScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let scheme = match s.trim().to_ascii_lowercase().as_str() {
            "complete" | "none" | "exact" => SampleScheme::Complete,
            "right" | "right-censored" => SampleScheme::RightCensored,
            "doubly" | "double" | "doubly-censored" => SampleScheme::DoublyCensored,
            "case1" | "current-status" | "interval-case1" => SampleScheme::IntervalCase1,
            "case2" | "interval-case2" => SampleScheme::IntervalCase2,
            "partly1" | "partly-case1" => SampleScheme::PartlyIntervalCase1,
            "partly" | "partly-general" => SampleScheme::PartlyIntervalGeneral,
            other => return Err(Error::Param(format!("unknown scheme `{other}`"))),
        };
        Ok(scheme)
    }
}

/// The two observed samples: X from `F0`, Y from `G0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleData {
    sample_x: Vec<Observation>,
    sample_y: Vec<Observation>,
    scheme_x: SampleScheme,
    scheme_y: SampleScheme,
}

impl TwoSampleData {
    pub fn new(
        sample_x: Vec<Observation>,
        scheme_x: SampleScheme,
        sample_y: Vec<Observation>,
        scheme_y: SampleScheme,
    ) -> Result<Self> {
        if sample_x.is_empty() || sample_y.is_empty() {
            return Err(Error::EmptySample);
        }
        check_scheme(&sample_x, scheme_x)?;
        check_scheme(&sample_y, scheme_y)?;
        Ok(Self {
            sample_x,
            sample_y,
            scheme_x,
            scheme_y,
        })
    }

    pub fn sample_x(&self) -> &[Observation] {
        &self.sample_x
    }

    pub fn sample_y(&self) -> &[Observation] {
        &self.sample_y
    }

    pub fn scheme_x(&self) -> SampleScheme {
        self.scheme_x
    }

    pub fn scheme_y(&self) -> SampleScheme {
        self.scheme_y
    }

    pub fn n0(&self) -> usize {
        self.sample_x.len()
    }

    pub fn n1(&self) -> usize {
        self.sample_y.len()
    }

    pub fn n(&self) -> usize {
        self.n0() + self.n1()
    }
}

pub fn check_scheme(sample: &[Observation], scheme: SampleScheme) -> Result<()> {
    for (i, obs) in sample.iter().enumerate() {
        if !scheme.admits(obs.kind()) {
            return Err(Error::SchemeViolation {
                row: i + 1,
                kind: obs.kind().to_string(),
                scheme: scheme.to_string(),
            });
        }
    }
    Ok(())
}

fn parse_number(row: usize, field: Option<&str>, what: &str) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::Parse {
        row,
        message: format!("missing {what}"),
    })?;
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("cannot parse {what} `{raw}`"),
    })
}

fn parse_observation(row: usize, fields: &[&str]) -> Result<Observation> {
    let kind = fields.first().map(|s| s.trim().to_ascii_lowercase());
    let a = parse_number(row, fields.get(1).copied(), "value");
    let attach_row = |e: Error| match e {
        Error::NegativeTime { value, .. } => Error::NegativeTime { row, value },
        Error::InvalidObservation(message) => Error::Parse { row, message },
        other => other,
    };
    let obs = match kind.as_deref() {
        Some("exact") => Observation::exact(a?),
        Some("right") => Observation::right(a?),
        Some("left") => Observation::left(a?),
        Some("interval") => {
            let lo = a?;
            let hi_field = fields.get(2).map(|s| s.trim());
            let hi = match hi_field {
                Some(s) if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") => {
                    f64::INFINITY
                }
                _ => parse_number(row, hi_field, "upper bound")?,
            };
            if lo < 0.0 {
                return Err(Error::NegativeTime { row, value: lo });
            }
            Observation::interval(lo, hi)
        }
        Some(other) => {
            return Err(Error::Parse {
                row,
                message: format!("unknown observation kind `{other}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                row,
                message: "empty row".into(),
            })
        }
    };
    obs.map_err(attach_row)
}

fn is_header(fields: &[&str]) -> bool {
    matches!(
        fields.first().map(|s| s.trim().to_ascii_lowercase()).as_deref(),
        Some("kind") | Some("sample")
    )
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
}

/// Rows as `(row number, fields)`, header and blank rows skipped.
fn read_rows<R: Read>(reader: R) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (i, record) in csv_reader(reader).records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let fields: Vec<String> = record
            .iter()
            .map(str::to_string)
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let borrowed: Vec<&str> = fields.iter().map(String::as_str).collect();
        if row == 1 && is_header(&borrowed) {
            continue;
        }
        rows.push((row, fields));
    }
    Ok(rows)
}

/// Parse a single-sample CSV stream and validate every row against `scheme`.
pub fn read_observations<R: Read>(reader: R, scheme: SampleScheme) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for (row, fields) in read_rows(reader)? {
        let borrowed: Vec<&str> = fields.iter().map(String::as_str).collect();
        let obs = parse_observation(row, &borrowed)?;
        if !scheme.admits(obs.kind()) {
            return Err(Error::SchemeViolation {
                row,
                kind: obs.kind().to_string(),
                scheme: scheme.to_string(),
            });
        }
        out.push(obs);
    }
    Ok(out)
}

pub fn ingest_csv<P: AsRef<Path>>(path: P, scheme: SampleScheme) -> Result<Vec<Observation>> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_observations(file, scheme)
}

/// Parse a combined CSV whose leading column is the sample label `x` or `y`.
pub fn read_two_sample<R: Read>(
    reader: R,
    scheme_x: SampleScheme,
    scheme_y: SampleScheme,
) -> Result<TwoSampleData> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, fields) in read_rows(reader)? {
        let borrowed: Vec<&str> = fields.iter().map(String::as_str).collect();
        let (label, rest) = borrowed.split_first().ok_or(Error::Parse {
            row,
            message: "empty row".into(),
        })?;
        let obs = parse_observation(row, rest)?;
        let (target, scheme) = match label.to_ascii_lowercase().as_str() {
            "x" => (&mut xs, scheme_x),
            "y" => (&mut ys, scheme_y),
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("sample label must be x or y, got `{other}`"),
                })
            }
        };
        if !scheme.admits(obs.kind()) {
            return Err(Error::SchemeViolation {
                row,
                kind: obs.kind().to_string(),
                scheme: scheme.to_string(),
            });
        }
        target.push(obs);
    }
    TwoSampleData::new(xs, scheme_x, ys, scheme_y)
}

pub fn ingest_two_sample_csv<P: AsRef<Path>>(
    path: P,
    scheme_x: SampleScheme,
    scheme_y: SampleScheme,
) -> Result<TwoSampleData> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_two_sample(file, scheme_x, scheme_y)
}

fn observation_fields(obs: &Observation) -> Vec<String> {
    let mut fields = vec![obs.kind().csv_tag().to_string()];
    match obs.kind() {
        ObservationKind::Exact | ObservationKind::RightCensored => {
            fields.push(obs.lower().to_string())
        }
        ObservationKind::LeftCensored => fields.push(obs.upper().to_string()),
        ObservationKind::Interval => {
            fields.push(obs.lower().to_string());
            fields.push(obs.upper().to_string());
        }
    }
    fields
}

/// Write observations in the single-sample layout (no header).
pub fn write_observations<W: Write>(writer: W, sample: &[Observation]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    for obs in sample {
        w.write_record(observation_fields(obs))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<P: AsRef<Path>>(path: P, sample: &[Observation]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_observations(file, sample)
}

/// Write both samples in the combined layout with a leading `sample` column.
pub fn write_two_sample<W: Write>(writer: W, data: &TwoSampleData) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    for (label, sample) in [("x", data.sample_x()), ("y", data.sample_y())] {
        for obs in sample {
            let mut fields = vec![label.to_string()];
            fields.extend(observation_fields(obs));
            w.write_record(fields).map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
