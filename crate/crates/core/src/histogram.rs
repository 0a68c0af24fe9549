//! Uniform-bin histograms and their CSV serialization.
//!
//! The CSV format is `bin_center_ps,count` with uniform bin width; the same
//! writer serves both Δ histograms (centers in picoseconds) and detection-rate
//! histograms (centers in hertz).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HistogramError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Count `values` into uniform bins of `bin_width` covering `[range.0, range.1)`.
/// Returns the histogram and the number of values dropped as out of range.
pub fn build_histogram(
    values: &[f64],
    bin_width: f64,
    range: (f64, f64),
) -> Result<(Histogram, usize), HistogramError> {
    let (lo, hi) = range;
    if !(bin_width > 0.0) || !(hi > lo) {
        return Err(HistogramError::InvalidRange(format!(
            "bin width {bin_width} and range [{lo}, {hi}) must be positive and nonempty"
        )));
    }
    let n = ((hi - lo) / bin_width).ceil() as usize;
    let bin_centers: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * bin_width).collect();
    let mut counts = vec![0.0; n];
    let mut dropped = 0usize;
    for &v in values {
        if v < lo || v >= hi {
            dropped += 1;
            continue;
        }
        let idx = ((v - lo) / bin_width) as usize;
        if idx >= n {
            dropped += 1;
            continue;
        }
        counts[idx] += 1.0;
    }
    Ok((Histogram { bin_width, bin_centers, counts }, dropped))
}

pub fn write_csv(hist: &Histogram, path: &std::path::Path) -> Result<(), HistogramError> {
    let mut out = String::from("bin_center_ps,count\n");
    for (c, n) in hist.bin_centers.iter().zip(&hist.counts) {
        out.push_str(&format!("{c},{n}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_csv(path: &std::path::Path) -> Result<Histogram, HistogramError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "bin_center_ps,count")) => {}
        _ => return Err(HistogramError::Format { line: 1, reason: "expected header `bin_center_ps,count`".into() }),
    }
    let mut bin_centers = Vec::new();
    let mut counts = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (a, b) = line.split_once(',').ok_or_else(|| HistogramError::Format {
            line: lineno,
            reason: "expected two comma-separated fields".into(),
        })?;
        let c: f64 = a.trim().parse().map_err(|e| HistogramError::Format { line: lineno, reason: format!("bad bin center: {e}") })?;
        let n: f64 = b.trim().parse().map_err(|e| HistogramError::Format { line: lineno, reason: format!("bad count: {e}") })?;
        if n < 0.0 {
            return Err(HistogramError::Format { line: lineno, reason: "negative count".into() });
        }
        bin_centers.push(c);
        counts.push(n);
    }
    if bin_centers.len() < 2 {
        return Err(HistogramError::Format { line: 0, reason: "need at least two bins".into() });
    }
    let w = bin_centers[1] - bin_centers[0];
    for (i, pair) in bin_centers.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - w).abs() > 1e-6 * w.abs().max(1.0) {
            return Err(HistogramError::Format { line: i + 3, reason: "bins are not uniform".into() });
        }
    }
    if w <= 0.0 {
        return Err(HistogramError::Format { line: 2, reason: "bin centers must be increasing".into() });
    }
    Ok(Histogram { bin_width: w, bin_centers, counts })
}
