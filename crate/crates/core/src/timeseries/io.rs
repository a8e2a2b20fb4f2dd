//! JSON Lines dataset files: one `{"id", "freq", "start"?, "target"}` object
//! per line, numbers written in plain decimal notation.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::TimeSeries;
use crate::error::{Error, Result};

/// Shortest round-tripping decimal form; never uses exponent notation.
pub fn fmt_number(v: f64) -> String {
    let s = format!("{v}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        // integers keep a fractional part so readers see a float
        s + ".0"
    }
}

pub fn series_to_line(ts: &TimeSeries) -> String {
    let mut line = String::with_capacity(16 * ts.values.len() + 64);
    line.push_str("{\"id\":");
    line.push_str(&serde_json::to_string(&ts.id).expect("string serialises"));
    line.push_str(",\"freq\":");
    line.push_str(&serde_json::to_string(&ts.freq_tag).expect("string serialises"));
    if let Some(start) = &ts.start {
        line.push_str(",\"start\":");
        line.push_str(&serde_json::to_string(start).expect("string serialises"));
    }
    line.push_str(",\"target\":[");
    for (i, v) in ts.values.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{}", fmt_number(*v));
    }
    line.push_str("]}");
    line
}

pub fn write_jsonl(path: &Path, series: &[TimeSeries]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ts in series {
        ts.validate()?;
        writeln!(w, "{}", series_to_line(ts)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TimeSeries>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ts: TimeSeries = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        ts.validate().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(ts);
    }
    Ok(out)
}
