//! Metrics rows and their CSV serializations.
//!
//! Reals are written with 17 significant digits so parsing the file back
//! recovers the exact f64; fixed formatting also makes output files byte
//! stable under a fixed seed.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-round metrics emitted by the experiment runner.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub policy: String,
    pub tau: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub upload_bytes_cum: u64,
    pub download_bytes_cum: u64,
    pub broadcast_nnz: usize,
    pub mean_mask_jaccard: f64,
}

pub const CSV_HEADER: &str = "round,policy,tau,train_loss,test_accuracy,upload_bytes_cum,download_bytes_cum,broadcast_nnz,mean_mask_jaccard";

/// One point of a compression-rate sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub compression_rate: f64,
    pub policy: String,
    pub final_test_accuracy: f64,
    pub total_upload_bytes: u64,
    pub total_download_bytes: u64,
}

pub const PLOT_HEADER: &str =
    "compression_rate,policy,final_test_accuracy,total_upload_bytes,total_download_bytes,total_bytes";

/// 17-significant-digit scientific notation; round-trips through `parse`.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metrics rows to write".into()));
    }
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            r.policy,
            format_real(r.tau),
            format_real(r.train_loss),
            format_real(r.test_accuracy),
            r.upload_bytes_cum,
            r.download_bytes_cum,
            r.broadcast_nnz,
            format_real(r.mean_mask_jaccard),
        )?;
    }
    Ok(())
}

pub fn emit_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_plot_data<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no sweep rows to write".into()));
    }
    writeln!(out, "{PLOT_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            format_real(r.compression_rate),
            r.policy,
            format_real(r.final_test_accuracy),
            r.total_upload_bytes,
            r.total_download_bytes,
            r.total_upload_bytes + r.total_download_bytes,
        )?;
    }
    Ok(())
}

pub fn emit_plot_data(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_plot_data(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
