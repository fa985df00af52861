use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Datelike, Days, NaiveDate};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
const MAX_LISTED_GAPS: usize = 20;

/// A daily count series with calendar dates; stream day 1 is `dates[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub dates: Vec<NaiveDate>,
    pub counts: Vec<f64>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn first_date(&self) -> NaiveDate {
        self.dates[0]
    }
}

/// Calendar date of window day `day`, where day 1 falls on `first`.
pub fn date_of(first: NaiveDate, day: i64) -> NaiveDate {
    let offset = day - 1;
    if offset >= 0 {
        first + Days::new(offset as u64)
    } else {
        first - Days::new(offset.unsigned_abs())
    }
}

/// Monday = 0.
pub fn weekday_index(date: NaiveDate) -> u8 {
    date.weekday().num_days_from_monday() as u8
}

/// Weekday of day 0 when day 1 falls on `first`, as expected by the weekday delay models.
pub fn origin_weekday(first: NaiveDate) -> u8 {
    (weekday_index(first) + 6) % 7
}

pub const WEEKDAY_NAMES: [&str; 7] = [
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];

/// Reads a `date,count` CSV with contiguous ISO-8601 dates.
pub fn read_series(path: &Path) -> CliResult<Series> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    parse_series(&bytes).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_series(bytes: &[u8]) -> CliResult<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("unreadable header: {e}")))?
        .clone();
    if header.len() != 2 || &header[0] != "date" || &header[1] != "count" {
        return Err(CliError::Data(format!(
            "line 1: expected header `date,count`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut counts = Vec::new();
    let mut missing = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Data(format!("line {line}: malformed row: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(CliError::Data(format!(
                "line {line}: expected 2 fields, found {}",
                record.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| CliError::Data(format!("line {line}: invalid date `{}`: {e}", &record[0])))?;
        let count: f64 = record[1]
            .parse()
            .map_err(|_| CliError::Data(format!("line {line}: invalid count `{}`", &record[1])))?;
        if !count.is_finite() || count < 0.0 {
            return Err(CliError::Data(format!(
                "line {line}: count must be finite and >= 0, found {count}"
            )));
        }
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(CliError::Data(format!(
                    "line {line}: date {date} does not follow {prev}; rows must be in increasing date order"
                )));
            }
            let mut d = prev.succ_opt().expect("date in range");
            while d < date {
                missing.push(d);
                d = d.succ_opt().expect("date in range");
            }
        }
        dates.push(date);
        counts.push(count);
    }
    if dates.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    if !missing.is_empty() {
        let listed: Vec<String> = missing.iter().take(MAX_LISTED_GAPS).map(|d| d.to_string()).collect();
        let more = missing.len().saturating_sub(MAX_LISTED_GAPS);
        let tail = if more > 0 {
            format!(" and {more} more")
        } else {
            String::new()
        };
        return Err(CliError::Data(format!(
            "series is not contiguous; missing dates: {}{tail}",
            listed.join(", ")
        )));
    }
    Ok(Series { dates, counts })
}

/// Shortest round-trip decimal form; `NA` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NA".into()
    }
}

/// Quantile column names, `q0.025` style.
pub fn quantile_headers(probs: &[f64]) -> Vec<String> {
    probs.iter().map(|p| format!("q{p}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written last into every output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_unix_seconds: f64,
    pub elapsed_seconds: f64,
}

/// An output directory being filled by one command.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
    files: Vec<String>,
    started: Instant,
    started_unix: f64,
}

impl OutputDir {
    /// Creates the directory and removes any manifest of an earlier run, so an
    /// interrupted run leaves no manifest behind.
    pub fn create(path: &Path) -> CliResult<Self> {
        fs::create_dir_all(path).map_err(|e| CliError::io(format!("cannot create {}", path.display()), e))?;
        let manifest = path.join(MANIFEST);
        if manifest.exists() {
            fs::remove_file(&manifest)
                .map_err(|e| CliError::io(format!("cannot remove stale {}", manifest.display()), e))?;
        }
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Ok(OutputDir {
            path: path.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
            started_unix,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let target = self.path.join(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(format!("cannot create {}", parent.display()), e))?;
        }
        fs::write(&target, bytes).map_err(|e| CliError::io(format!("cannot write {}", target.display()), e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
        let bytes = csv_bytes(header, rows)?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Numerical(format!("cannot serialize {name}: {e}")))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Writes the manifest through a temporary file and an atomic rename.
    pub fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        threads: usize,
        inputs: Vec<InputDigest>,
    ) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            threads,
            inputs,
            outputs: self.files.clone(),
            started_unix_seconds: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let tmp = self.path.join(format!(".{MANIFEST}.tmp"));
        let target = self.path.join(MANIFEST);
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| CliError::Numerical(format!("cannot serialize manifest: {e}")))?;
        bytes.push(b'\n');
        {
            let mut f =
                fs::File::create(&tmp).map_err(|e| CliError::io(format!("cannot write {}", tmp.display()), e))?;
            f.write_all(&bytes)
                .and_then(|_| f.sync_all())
                .map_err(|e| CliError::io(format!("cannot write {}", tmp.display()), e))?;
        }
        fs::rename(&tmp, &target)
            .map_err(|e| CliError::io(format!("cannot move manifest into {}", target.display()), e))?;
        Ok(manifest)
    }
}

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::io("csv encoding", std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::io("csv encoding", std::io::Error::other(e.to_string())))
}

/// Layout of `samples.bin`, all fields little-endian:
///
/// | field | type |
/// |---|---|
/// | magic `RMCS` | 4 bytes |
/// | version (1) | u32 |
/// | T, K_m, K_w, n_draws | u64 each |
/// | L draws, row-major `n_draws × (T + K_m − 1)` | f64 |
/// | I draws, row-major `n_draws × (T + K_m + K_w − 1)` | i64 |
pub const SAMPLES_MAGIC: [u8; 4] = *b"RMCS";
pub const SAMPLES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub t: u64,
    pub k_m: u64,
    pub k_w: u64,
    pub log_r: Vec<Vec<f64>>,
    pub infections: Vec<Vec<i64>>,
}

pub fn encode_samples(t: usize, k_m: usize, k_w: usize, log_r: &[Vec<f64>], infections: &[Vec<u64>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&SAMPLES_MAGIC);
    out.extend_from_slice(&SAMPLES_VERSION.to_le_bytes());
    for v in [t, k_m, k_w, log_r.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for row in log_r {
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for row in infections {
        for &x in row {
            out.extend_from_slice(&(x as i64).to_le_bytes());
        }
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> CliResult<SampleFile> {
    let bad = |what: &str| CliError::Data(format!("samples file: {what}"));
    if bytes.len() < 40 || bytes[..4] != SAMPLES_MAGIC {
        return Err(bad("missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SAMPLES_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
    let (t, k_m, k_w, n) = (word(0), word(1), word(2), word(3));
    let n_l = (t + k_m).saturating_sub(1) as usize;
    let n_i = n_l + k_w as usize;
    let expected = 40 + 8 * (n as usize) * (n_l + n_i);
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut pos = 40;
    let mut next = || {
        let b: [u8; 8] = bytes[pos..pos + 8].try_into().expect("8 bytes");
        pos += 8;
        b
    };
    let log_r = (0..n)
        .map(|_| (0..n_l).map(|_| f64::from_le_bytes(next())).collect())
        .collect();
    let infections = (0..n)
        .map(|_| (0..n_i).map(|_| i64::from_le_bytes(next())).collect())
        .collect();
    Ok(SampleFile {
        t,
        k_m,
        k_w,
        log_r,
        infections,
    })
}
