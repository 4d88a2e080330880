//! CSV writers. Numbers use 17 significant digits; missing values are
//! empty cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use deepfosls::netcore::checkpoint::format_f64;
use deepfosls::optim::LogRecord;

pub const LOG_HEADER: &str = "iter,loss,lr,l2_error,triple_error";
pub const TIMING_HEADER: &str = "iter,elapsed_s";

fn opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

pub struct LogWriter {
    log: BufWriter<File>,
    timing: BufWriter<File>,
}

impl LogWriter {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        let mut log = BufWriter::new(File::create(dir.join("train_log.csv"))?);
        let mut timing = BufWriter::new(File::create(dir.join("timing.csv"))?);
        writeln!(log, "{LOG_HEADER}")?;
        writeln!(timing, "{TIMING_HEADER}")?;
        Ok(Self { log, timing })
    }

    pub fn row(&mut self, r: &LogRecord) -> std::io::Result<()> {
        writeln!(
            self.log,
            "{},{},{},{},{}",
            r.iter,
            format_f64(r.loss),
            format_f64(r.lr),
            opt(r.l2_error),
            opt(r.triple_error)
        )?;
        writeln!(self.timing, "{},{:.3}", r.iter, r.elapsed_s)
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.log.flush()?;
        self.timing.flush()
    }
}

/// Write `rows` under `header`, each value with 17 significant digits.
pub fn write_table(path: &Path, header: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| format_f64(x)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}
