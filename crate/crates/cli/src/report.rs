//! Output plumbing shared by the subcommands: machine-readable JSONL
//! files that open with a resolved-config record, and small formatting
//! helpers for the human tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::Failure;

/// Line-delimited JSON writer. Every file starts with a `config` record
/// carrying the software version and the fully resolved options, so a
/// result file is self-describing.
pub struct Jsonl {
    w: BufWriter<File>,
}

impl Jsonl {
    pub fn create(path: &Path, command: &str, config: &impl Serialize) -> Result<Self, Failure> {
        let mut out = Jsonl {
            w: BufWriter::new(File::create(path)?),
        };
        out.record(&serde_json::json!({
            "record": "config",
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
        }))?;
        Ok(out)
    }

    pub fn record(&mut self, value: &impl Serialize) -> Result<(), Failure> {
        let line = serde_json::to_string(value)
            .map_err(|e| Failure::Usage(format!("serialize: {e}")))?;
        writeln!(self.w, "{line}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        self.w.flush()?;
        Ok(())
    }
}

/// `value` to 4 decimals, or a dash when absent.
pub fn opt4(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:>10.4}"),
        None => format!("{:>10}", "-"),
    }
}

/// A percentile interval to 4 decimals, or a dash.
pub fn opt_interval(v: Option<(f64, f64)>) -> String {
    match v {
        Some((lo, hi)) => format!("[{lo:>8.4}, {hi:>8.4}]"),
        None => format!("{:>20}", "-"),
    }
}
