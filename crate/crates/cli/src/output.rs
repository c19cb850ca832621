//! CSV emission: two comment lines (resolved config, optional timestamp),
//! then a header row and the data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::CliError;

/// Reals with 17 significant digits; `inf`/`-inf` for infinities and an empty
/// field for NaN (missing).
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_owned() } else { "-inf".to_owned() }
    } else {
        format!("{x:.16e}")
    }
}

/// Short form used in file names, e.g. `0.7`.
pub fn fmt_tag(x: f64) -> String {
    format!("{x}")
}

pub struct Emitter {
    pub out_dir: PathBuf,
    pub header: String,
    pub timestamp: bool,
}

impl Emitter {
    pub fn new<T: Serialize>(out_dir: &Path, command: &str, resolved: &T, timestamp: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        let json = serde_json::json!({ "command": command, "config": resolved });
        Ok(Self {
            out_dir: out_dir.to_owned(),
            header: json.to_string(),
            timestamp,
        })
    }

    pub fn write(&self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        let io = |e: std::io::Error| CliError::io(&path, e);
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(w, "# config: {}", self.header).map_err(io)?;
        if self.timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            writeln!(w, "# generated_unix: {secs}").map_err(io)?;
        }
        let mut csv = csv::Writer::from_writer(w);
        let to_io = |e: csv::Error| CliError::io(&path, e.into());
        csv.write_record(columns).map_err(to_io)?;
        for row in rows {
            csv.write_record(row).map_err(to_io)?;
        }
        csv.flush().map_err(io)?;
        Ok(path)
    }
}
