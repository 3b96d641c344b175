use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::KlMethod;
use crate::error::{Error, Result};

/// Column order of the CSV report.
pub const CSV_HEADER: [&str; 7] = [
    "algorithm",
    "init",
    "wall_time_s",
    "params",
    "kl_nats",
    "kl_method",
    "notes",
];

/// Prefix of the `notes` field of a row whose run failed.
pub const ERROR_PREFIX: &str = "error: ";

/// One `(algorithm, init)` run. `wall_time_s` is kept out of the JSON
/// document so that reports of repeated runs compare byte for byte; it is
/// written to a timing sidecar instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub algorithm: String,
    pub init: String,
    #[serde(skip)]
    pub wall_time_s: f64,
    pub params: serde_json::Value,
    #[serde(with = "kl_repr")]
    pub kl_nats: Option<f64>,
    pub kl_method: Option<KlMethod>,
    pub notes: String,
}

impl Row {
    pub fn failed(algorithm: &str, init: &str, wall_time_s: f64, err: &Error) -> Self {
        Row {
            algorithm: algorithm.into(),
            init: init.into(),
            wall_time_s,
            params: serde_json::Value::Null,
            kl_nats: None,
            kl_method: None,
            notes: format!("{ERROR_PREFIX}{err}"),
        }
    }

    pub fn is_error(&self) -> bool {
        self.notes.starts_with(ERROR_PREFIX)
    }
}

/// `+∞` is written as the string `"inf"`.
mod kl_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if *x == f64::INFINITY => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => super::parse_kl(&t).map_err(serde::de::Error::custom),
        }
    }
}

fn format_kl(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) => x.to_string(),
    }
}

fn parse_kl(text: &str) -> std::result::Result<Option<f64>, String> {
    match text {
        "" => Ok(None),
        "inf" => Ok(Some(f64::INFINITY)),
        t => t
            .parse()
            .map(Some)
            .map_err(|e| format!("bad KL value `{t}`: {e}")),
    }
}

fn parse_method(text: &str) -> Result<Option<KlMethod>> {
    Ok(match text {
        "" => None,
        "closed-form" => Some(KlMethod::ClosedForm),
        "quadrature" => Some(KlMethod::Quadrature),
        "discrete" => Some(KlMethod::Discrete),
        other => return Err(Error::Config(format!("unknown KL method `{other}`"))),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(Row::is_error)
    }

    pub fn find(&self, algorithm: &str, init: &str) -> Option<&Row> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.init == init)
    }

    pub fn by_algorithm<'a>(&'a self, algorithm: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.algorithm == algorithm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Timing {
    algorithm: String,
    init: String,
    wall_time_s: f64,
}

/// `results/report.json` → `results/report.timing.json`.
pub fn timing_sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.timing.json"))
}

/// Writes the report. JSON output also writes the timing sidecar.
pub fn emit_report(report: &Report, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Csv => write_csv(report, path),
        ReportFormat::Json => {
            write_json(path, report)?;
            let timings: Vec<Timing> = report
                .rows
                .iter()
                .map(|r| Timing {
                    algorithm: r.algorithm.clone(),
                    init: r.init.clone(),
                    wall_time_s: r.wall_time_s,
                })
                .collect();
            write_json(&timing_sidecar_path(path), &timings)
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f).map_err(|e| Error::io(path, e))
}

fn write_csv(report: &Report, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(CSV_HEADER)
        .map_err(|e| Error::csv(path, e))?;
    for r in &report.rows {
        w.write_record([
            r.algorithm.clone(),
            r.init.clone(),
            r.wall_time_s.to_string(),
            serde_json::to_string(&r.params)?,
            format_kl(r.kl_nats),
            r.kl_method
                .map(|m| m.as_str().to_string())
                .unwrap_or_default(),
            r.notes.clone(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a report written by [`emit_report`]. For JSON the timing sidecar is
/// merged back when present.
pub fn parse_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<Report> {
    let path = path.as_ref();
    match format {
        ReportFormat::Csv => read_csv(path),
        ReportFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut report: Report = serde_json::from_str(&text)?;
            let sidecar = timing_sidecar_path(path);
            if sidecar.exists() {
                let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
                let timings: Vec<Timing> = serde_json::from_str(&text)?;
                if timings.len() != report.rows.len() {
                    return Err(Error::Config(format!(
                        "{} has {} rows, report has {}",
                        sidecar.display(),
                        timings.len(),
                        report.rows.len()
                    )));
                }
                for (row, t) in report.rows.iter_mut().zip(timings) {
                    if row.algorithm != t.algorithm || row.init != t.init {
                        return Err(Error::Config(format!(
                            "timing row ({}, {}) does not match report row ({}, {})",
                            t.algorithm, t.init, row.algorithm, row.init
                        )));
                    }
                    row.wall_time_s = t.wall_time_s;
                }
            }
            Ok(report)
        }
    }
}

fn read_csv(path: &Path) -> Result<Report> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidDataset(format!(
            "{}: expected header {}",
            path.display(),
            CSV_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let wall_time_s = rec[2].parse().map_err(|e| {
            Error::InvalidDataset(format!("{}: wall time `{}`: {e}", path.display(), &rec[2]))
        })?;
        rows.push(Row {
            algorithm: rec[0].to_string(),
            init: rec[1].to_string(),
            wall_time_s,
            params: serde_json::from_str(&rec[3])?,
            kl_nats: parse_kl(&rec[4]).map_err(Error::InvalidDataset)?,
            kl_method: parse_method(&rec[5])?,
            notes: rec[6].to_string(),
        });
    }
    Ok(Report { rows })
}
