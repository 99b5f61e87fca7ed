//! CSV sink for diagnostics rows.

use crate::diagnostics::DiagnosticsReport;
use std::io::Write;

/// Writes the header before the first row. Floats carry 17 significant digits.
pub struct DiagnosticsWriter<W: Write> {
    inner: csv::Writer<W>,
    header_written: bool,
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(sink: W) -> Self {
        Self { inner: csv::WriterBuilder::new().has_headers(false).from_writer(sink), header_written: false }
    }

    pub fn write_row(&mut self, report: &DiagnosticsReport) -> csv::Result<()> {
        if !self.header_written {
            self.inner.write_record(DiagnosticsReport::COLUMNS)?;
            self.header_written = true;
        }
        self.inner.write_record(format_row(report))?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, String> {
        self.inner.into_inner().map_err(|e| e.to_string())
    }
}

/// Row cells in column order; `picard_iters` is written as an integer.
pub fn format_row(report: &DiagnosticsReport) -> Vec<String> {
    report
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if DiagnosticsReport::COLUMNS[i] == "picard_iters" {
                report.picard_iters.to_string()
            } else {
                format!("{v:.16e}")
            }
        })
        .collect()
}
