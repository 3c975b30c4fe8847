//! JSON-lines log sink for `--log`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{LevelFilter, Log, Metadata, Record};
use serde_json::json;

use crate::error::{Error, Result};

/// Writes one JSON object per record: `ts`, `level`, `target`, `message`.
pub struct JsonLinesLogger {
    out: Mutex<BufWriter<File>>,
    level: LevelFilter,
}

impl JsonLinesLogger {
    pub fn create(path: &Path, level: LevelFilter) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonLinesLogger {
            out: Mutex::new(BufWriter::new(file)),
            level,
        })
    }
}

impl Log for JsonLinesLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let line = json!({
            "ts": ts,
            "level": record.level().as_str(),
            "target": record.target(),
            "message": record.args().to_string(),
        });
        if let Ok(mut out) = self.out.lock() {
            let _ = writeln!(out, "{line}");
        }
    }

    fn flush(&self) {
        if let Ok(mut out) = self.out.lock() {
            let _ = out.flush();
        }
    }
}

/// Installs the JSON sink when `path` is given, `env_logger` otherwise.
/// A logger installed earlier in the process is left in place.
pub fn init(path: Option<&Path>, level: LevelFilter) -> Result<()> {
    match path {
        Some(p) => {
            let logger = JsonLinesLogger::create(p, level)?;
            if log::set_boxed_logger(Box::new(logger)).is_ok() {
                log::set_max_level(level);
            }
        }
        None => {
            let _ = env_logger::Builder::new()
                .filter_level(level)
                .parse_default_env()
                .try_init();
        }
    }
    Ok(())
}
