//! Analysis report serialization.
//!
//! The report is a single JSON document carrying the fitted response, the
//! per-frame table, the selection and rate-fit summaries, and the config
//! digest of the run that produced it. `generated_at` is the only
//! nondeterministic field and must be excluded from byte-level comparisons;
//! histograms are emitted as separate CSV files, not embedded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisResult;
use crate::link_budget::PassSummary;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read or write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    /// Unix seconds at generation; the only nondeterministic field.
    pub generated_at: u64,
    pub config_digest: String,
    pub pass_id: String,
    /// Kept-frame link summary, the input to scenario projection.
    pub summary: PassSummary,
    pub analysis: AnalysisResult,
}

impl Report {
    pub fn new(analysis: AnalysisResult, config_digest: String, pass_id: String, eta_rx: f64) -> Report {
        let summary = PassSummary {
            rate_cps: analysis.arts.kept_rate_mean_cps,
            snr: analysis.arts.kept_snr_mean,
            mu_sat: analysis.mu_sat_mean,
            eta_rx,
        };
        Report {
            generated_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config_digest,
            pass_id,
            summary,
            analysis,
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), ReportError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ReportError::Format(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Report, ReportError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ReportError::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{ArtsSummary, FrameStats};
    use crate::detector_response::{DetectorResponse, FitResult};
    use crate::histogram::Histogram;

    fn sample_report() -> Report {
        let params = DetectorResponse::new(60.0, 0.0, 0.0, 200.0, 1.0).unwrap();
        let analysis = AnalysisResult {
            response_fit: FitResult {
                params,
                fwhm_ps: 209.2,
                residual_norm: 1.0,
                converged: true,
                iterations: 12,
            },
            filter_center_ps: 0.0,
            capture_fraction: 0.74,
            delta_histogram: Histogram::default(),
            frames: vec![FrameStats {
                frame_index: 0,
                frame_start_s: 0.0,
                frame_length_s: 0.2,
                in_window_counts: 50,
                outside_counts: 96,
                background_estimate: 4.0,
                signal_counts: 46.0,
                signal_rate_cps: 230.0,
                snr: 11.5,
                mu_sat: 16.0,
                kept_by_arts: true,
            }],
            arts: ArtsSummary {
                kept: 1,
                discarded: 0,
                discard_fraction: 0.0,
                kept_rate_mean_cps: 230.0,
                kept_snr_mean: 11.5,
            },
            rate_fit: None,
            mu_sat_mean: 16.0,
            total_tags: 146,
        };
        Report::new(analysis, "deadbeef".into(), "pass-1".into(), 0.13)
    }

    #[test]
    fn round_trip_preserves_everything_but_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let r = sample_report();
        r.write(&path).unwrap();
        let r2 = Report::read(&path).unwrap();
        assert_eq!(r2.config_digest, "deadbeef");
        assert_eq!(r2.pass_id, "pass-1");
        assert_eq!(r2.summary.rate_cps, 230.0);
        assert_eq!(r2.summary.eta_rx, 0.13);
        assert_eq!(r2.analysis.frames.len(), 1);
        assert_eq!(r2.analysis.frames[0].in_window_counts, 50);
    }

    #[test]
    fn report_json_is_deterministic_apart_from_generated_at() {
        let a = serde_json::to_value(sample_report()).unwrap();
        let b = serde_json::to_value(sample_report()).unwrap();
        let strip = |mut v: serde_json::Value| {
            v.as_object_mut().unwrap().remove("generated_at");
            v
        };
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn histograms_are_not_embedded() {
        let v = serde_json::to_value(sample_report()).unwrap();
        assert!(v["analysis"].get("delta_histogram").is_none());
    }
}
