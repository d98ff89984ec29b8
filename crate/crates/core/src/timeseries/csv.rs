//! `timestamp,watts,occupancy` files: integer Unix seconds, decimal watts,
//! occupancy in {0,1}, LF line endings.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::LoadProfile;
use crate::error::{Error, Result};

const HEADER: &str = "timestamp,watts,occupancy";

/// Reads a profile; the household id is the file stem.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<LoadProfile> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(File::open(path)?, id)
}

pub fn read_csv(reader: impl Read, household_id: impl Into<String>) -> Result<LoadProfile> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines();
    match lines.next() {
        Some(line) => {
            let line = line?;
            if line.trim_end_matches('\r') != HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{HEADER}`, found `{line}`"),
                });
            }
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    }

    let mut stamps: Vec<i64> = Vec::new();
    let mut readings = Vec::new();
    let mut occupancy = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut fields = line.split(',');
        let (Some(ts), Some(w), Some(occ), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(parse_err(format!("expected 3 fields in `{line}`")));
        };
        let ts: i64 = ts
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp `{ts}`")))?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad watts `{w}`")))?;
        let occ = match occ.trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("occupancy must be 0 or 1, got `{other}`"))),
        };
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Domain(format!(
                "line {line_no}: watts must be finite and non-negative, got {w}"
            )));
        }
        stamps.push(ts);
        readings.push(w);
        occupancy.push(occ);
    }

    let period = match stamps.as_slice() {
        [a, b, ..] => b - a,
        _ => 1,
    };
    if period <= 0 || period > i64::from(u32::MAX) {
        return Err(Error::Format(format!("non-increasing timestamps (step {period})")));
    }
    if let Some(k) = stamps.windows(2).position(|p| p[1] - p[0] != period) {
        return Err(Error::Format(format!(
            "non-uniform timestamp spacing at line {} (expected step {period})",
            k + 3
        )));
    }
    LoadProfile::new(household_id, period as u32, readings, occupancy)
}

pub fn write_csv(profile: &LoadProfile, start_ts: i64, writer: impl Write) -> Result<()> {
    let mut out = BufWriter::new(writer);
    writeln!(out, "{HEADER}")?;
    write_rows(profile, start_ts, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Rows only, no header; used to lay several households end to end.
pub(crate) fn write_rows(profile: &LoadProfile, start_ts: i64, out: &mut impl Write) -> Result<()> {
    let step = i64::from(profile.sampling_period_s());
    for (i, (w, o)) in profile.readings().iter().zip(profile.occupancy()).enumerate() {
        writeln!(out, "{},{},{}", start_ts + i as i64 * step, w, u8::from(*o))?;
    }
    Ok(())
}

pub fn export_csv(profile: &LoadProfile, start_ts: i64, path: impl AsRef<Path>) -> Result<()> {
    write_csv(profile, start_ts, File::create(path)?)
}

/// Writes several profiles back to back under one header with contiguous
/// timestamps, so the file still reads as a single uniform series.
pub fn export_csv_many(profiles: &[LoadProfile], start_ts: i64, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HEADER}")?;
    let mut ts = start_ts;
    for p in profiles {
        write_rows(p, ts, &mut out)?;
        ts += p.len() as i64 * i64::from(p.sampling_period_s());
    }
    out.flush()?;
    Ok(())
}
