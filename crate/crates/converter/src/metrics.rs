//! Per-epoch metrics CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use converter_core::train::EpochMetrics;

use crate::error::{CliError, CliResult};

pub struct MetricsCsv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsCsv {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut m = MetricsCsv {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        m.line(EpochMetrics::CSV_HEADER)?;
        Ok(m)
    }

    fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| CliError::io(&self.path, e))
    }

    pub fn row(&mut self, m: &EpochMetrics) -> CliResult<()> {
        self.line(&m.csv_row())
    }
}
