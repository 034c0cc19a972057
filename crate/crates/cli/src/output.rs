use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::{Format, SCHEMA_VERSION};
use crate::error::CliError;

/// Six significant digits for human-readable reports.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes `body` as one JSON object tagged with the schema version.
pub fn write_json<W: Write, T: Serialize>(out: W, command: &str, body: &T) -> Result<(), CliError> {
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        body,
    };
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &envelope).map_err(|e| CliError::Config(format!("JSON encoding: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes `body` as a pretty-printed JSON object, unwrapped.
pub fn write_json_object<W: Write, T: Serialize>(mut out: W, body: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut out, body).map_err(|e| CliError::Config(format!("JSON encoding: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes serializable rows as CSV with a header row.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Config(format!("CSV encoding: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes rows as CSV or as a JSON object holding them under `rows`.
pub fn write_rows<W: Write, T: Serialize>(out: W, format: Format, command: &str, rows: &[T]) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Rows<'a, T> {
        rows: &'a [T],
    }
    match format {
        Format::Csv => write_csv(out, rows),
        Format::Json => write_json(out, command, &Rows { rows }),
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(4718.592), "4718.59");
        assert_eq!(sig6(0.7675), "0.767500");
        assert_eq!(sig6(0.536743258397), "0.536743");
        assert_eq!(sig6(6278.343424), "6278.34");
        assert_eq!(sig6(123456789.0), "123456789");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(-2.5), "-2.50000");
    }

    #[test]
    fn rows_round_trip_through_csv() {
        #[derive(Serialize)]
        struct Row {
            alpha: f64,
            rs: f64,
        }
        let mut buf = Vec::new();
        write_rows(&mut buf, Format::Csv, "sweep", &[Row { alpha: 0.1, rs: 0.7010567 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "alpha,rs\n0.1,0.7010567\n");
    }

    #[test]
    fn json_carries_schema_version() {
        let mut buf = Vec::new();
        write_rows(&mut buf, Format::Json, "sweep", &[1.0f64]).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["command"], "sweep");
        assert_eq!(v["rows"][0], 1.0);
    }
}
