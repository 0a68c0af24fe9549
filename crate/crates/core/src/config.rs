//! JSON run configuration.
//!
//! One archivable file with sections `pass`, `schedule`, `budget`, `fading`,
//! `detector`, `sim`, and `analysis`; unknown keys are rejected and every
//! omitted field takes the documented default. The raw file bytes are hashed
//! (SHA-256) so streams and reports can carry a provenance digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::AnalysisOptions;
use crate::detector_response::DetectorResponse;
use crate::link_budget::{AtmosphereModel, BudgetParams, FadingModel};
use crate::pass_model::{read_profile_csv, PassModel, PulseSchedule};
use crate::timetag_sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pass: PassSection,
    #[serde(default)]
    pub pass_id: String,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub budget: Option<BudgetSection>,
    #[serde(default)]
    pub fading: Option<FadingSection>,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PassSection {
    AnalyticFlyby {
        r_min_m: f64,
        v_tangential_m_s: f64,
        t_closest_s: f64,
    },
    /// Range profile CSV (`t_s,range_m`), path relative to the config file.
    Profile { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "d_rep_rate")]
    pub rep_rate_hz: f64,
    #[serde(default = "d_slot_length")]
    pub slot_length_s: f64,
    #[serde(default = "d_tx_window")]
    pub tx_window_s: (f64, f64),
    #[serde(default = "d_rx_window")]
    pub rx_window_s: (f64, f64),
    #[serde(default = "d_pass_duration")]
    pub pass_duration_s: f64,
}

fn d_rep_rate() -> f64 {
    1e8
}
fn d_slot_length() -> f64 {
    0.1
}
fn d_tx_window() -> (f64, f64) {
    (0.0, 0.040)
}
fn d_rx_window() -> (f64, f64) {
    (0.050, 0.090)
}
fn d_pass_duration() -> f64 {
    100.0
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            rep_rate_hz: d_rep_rate(),
            slot_length_s: d_slot_length(),
            tx_window_s: d_tx_window(),
            rx_window_s: d_rx_window(),
            pass_duration_s: d_pass_duration(),
        }
    }
}

impl ScheduleSection {
    pub fn to_schedule(&self) -> PulseSchedule {
        PulseSchedule {
            rep_rate_hz: self.rep_rate_hz,
            slot_length_s: self.slot_length_s,
            tx_window_s: self.tx_window_s,
            rx_window_s: self.rx_window_s,
            pass_duration_s: self.pass_duration_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default = "d_sigma_cross")]
    pub sigma_cross_section_m2: f64,
    #[serde(default = "d_a_ccr")]
    pub a_ccr_m2: f64,
    #[serde(default = "d_rho_ccr")]
    pub rho_ccr: f64,
    #[serde(default = "d_n_eff")]
    pub n_eff: f64,
    #[serde(default = "d_a_tel")]
    pub a_tel_m2: f64,
    #[serde(default = "d_eta_rx")]
    pub eta_rx: f64,
    #[serde(default = "d_eta_det")]
    pub eta_det: f64,
    #[serde(default)]
    pub atmosphere: AtmosphereSection,
}

fn d_sigma_cross() -> f64 {
    15e6
}
fn d_a_ccr() -> f64 {
    11.4e-4
}
fn d_rho_ccr() -> f64 {
    0.89
}
fn d_n_eff() -> f64 {
    9.88
}
fn d_a_tel() -> f64 {
    std::f64::consts::PI * 0.75 * 0.75
}
fn d_eta_rx() -> f64 {
    0.13
}
fn d_eta_det() -> f64 {
    0.5
}

impl Default for BudgetSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty budget section deserializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum AtmosphereSection {
    Fixed {
        #[serde(default = "d_t_zenith")]
        t_zenith: f64,
    },
    ZenithScaled {
        #[serde(default = "d_t_zenith")]
        t_zenith: f64,
        zenith_angle_deg: f64,
    },
}

fn d_t_zenith() -> f64 {
    0.7
}

impl Default for AtmosphereSection {
    fn default() -> Self {
        AtmosphereSection::Fixed { t_zenith: d_t_zenith() }
    }
}

impl BudgetSection {
    pub fn to_params(&self) -> BudgetParams<f64> {
        BudgetParams {
            sigma_cross_section_m2: self.sigma_cross_section_m2,
            a_ccr_m2: self.a_ccr_m2,
            rho_ccr: self.rho_ccr,
            n_eff: self.n_eff,
            a_tel_m2: self.a_tel_m2,
            eta_rx: self.eta_rx,
            eta_det: self.eta_det,
            atmosphere: match self.atmosphere {
                AtmosphereSection::Fixed { t_zenith } => AtmosphereModel::Fixed { t_zenith },
                AtmosphereSection::ZenithScaled { t_zenith, zenith_angle_deg } => {
                    AtmosphereModel::ZenithScaled {
                        t_zenith,
                        zenith_angle_rad: zenith_angle_deg.to_radians(),
                    }
                }
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSection {
    pub ln_sigma: f64,
    #[serde(default)]
    pub ln_mu: f64,
    #[serde(default = "d_corr_time")]
    pub correlation_time_s: f64,
    #[serde(default = "d_true")]
    pub enabled: bool,
}

fn d_corr_time() -> f64 {
    0.01
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default = "d_sigma_ps")]
    pub sigma_ps: f64,
    #[serde(default)]
    pub t0_ps: f64,
    #[serde(default)]
    pub t1_ps: f64,
    #[serde(default = "d_tau_ps")]
    pub tau_ps: f64,
    #[serde(default = "d_amp")]
    pub amplitude: f64,
}

fn d_sigma_ps() -> f64 {
    60.0
}
fn d_tau_ps() -> f64 {
    200.0
}
fn d_amp() -> f64 {
    1.0
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            sigma_ps: d_sigma_ps(),
            t0_ps: 0.0,
            t1_ps: 0.0,
            tau_ps: d_tau_ps(),
            amplitude: d_amp(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "d_mu_sat")]
    pub mu_sat: f64,
    #[serde(default = "d_dark_rate")]
    pub dark_rate_hz: f64,
    #[serde(default)]
    pub sky_rate_hz: f64,
    #[serde(default)]
    pub sky_scaled_by_efficiency: bool,
    #[serde(default)]
    pub satellite_spread_fwhm_ps: f64,
    #[serde(default = "d_source_fwhm")]
    pub source_pulse_fwhm_ps: f64,
    #[serde(default = "d_tdc")]
    pub tdc_resolution_ps: i64,
    #[serde(default)]
    pub seed: u64,
}

fn d_mu_sat() -> f64 {
    16.0
}
fn d_dark_rate() -> f64 {
    400.0
}
fn d_source_fwhm() -> f64 {
    55.0
}
fn d_tdc() -> i64 {
    1
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            mu_sat: d_mu_sat(),
            dark_rate_hz: d_dark_rate(),
            sky_rate_hz: 0.0,
            sky_scaled_by_efficiency: false,
            satellite_spread_fwhm_ps: 0.0,
            source_pulse_fwhm_ps: d_source_fwhm(),
            tdc_resolution_ps: d_tdc(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "d_frame_ms")]
    pub frame_ms: f64,
    /// Full temporal-filter width, ps (the half-width is filter_ps/2).
    #[serde(default = "d_filter_ps")]
    pub filter_ps: f64,
    #[serde(default = "d_bin_ps")]
    pub bin_ps: f64,
    #[serde(default = "d_rate_bin_hz")]
    pub rate_bin_hz: f64,
    #[serde(default = "d_arts_threshold")]
    pub arts_threshold: f64,
    #[serde(default = "d_halfspan_ps")]
    pub halfspan_ps: f64,
    #[serde(default = "d_snr_floor")]
    pub snr_floor: f64,
    #[serde(default = "d_min_frames")]
    pub min_frames_for_fit: usize,
}

fn d_frame_ms() -> f64 {
    200.0
}
fn d_filter_ps() -> f64 {
    400.0
}
fn d_bin_ps() -> f64 {
    20.0
}
fn d_rate_bin_hz() -> f64 {
    25.0
}
fn d_arts_threshold() -> f64 {
    1.0
}
fn d_halfspan_ps() -> f64 {
    5_000.0
}
fn d_snr_floor() -> f64 {
    0.5
}
fn d_min_frames() -> usize {
    30
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            frame_ms: d_frame_ms(),
            filter_ps: d_filter_ps(),
            bin_ps: d_bin_ps(),
            rate_bin_hz: d_rate_bin_hz(),
            arts_threshold: d_arts_threshold(),
            halfspan_ps: d_halfspan_ps(),
            snr_floor: d_snr_floor(),
            min_frames_for_fit: d_min_frames(),
        }
    }
}

impl AnalysisSection {
    pub fn to_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            bin_width_ps: self.bin_ps,
            delta_halfspan_ps: self.halfspan_ps,
            filter_halfwidth_ps: self.filter_ps / 2.0,
            frame_length_s: self.frame_ms / 1e3,
            snr_floor: self.snr_floor,
            rate_bin_cps: self.rate_bin_hz,
            snr_keep_threshold: self.arts_threshold,
            min_frames_for_fit: self.min_frames_for_fit,
        }
    }
}

/// A parsed config plus the SHA-256 digest of the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub digest: String,
    /// Directory the config file lives in; profile paths resolve against it.
    pub base_dir: std::path::PathBuf,
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig, ConfigError> {
    let bytes = std::fs::read(path)?;
    let config = parse_config(&bytes)?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let base_dir = path.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();
    Ok(LoadedConfig { config, digest, base_dir })
}

/// Parse a config document, reporting errors with a JSON-pointer-style path
/// to the offending field.
pub fn parse_config(bytes: &[u8]) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: format!("/{}", e.path().to_string().replace('.', "/")),
        message: e.inner().to_string(),
    })
}

impl LoadedConfig {
    pub fn pass_model(&self) -> Result<PassModel<f64>, ConfigError> {
        match &self.config.pass {
            PassSection::AnalyticFlyby { r_min_m, v_tangential_m_s, t_closest_s } => {
                PassModel::analytic_flyby(*r_min_m, *v_tangential_m_s, *t_closest_s)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            PassSection::Profile { path } => {
                let full = self.base_dir.join(path);
                read_profile_csv(&full).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    pub fn budget_params(&self) -> BudgetParams<f64> {
        self.config.budget.clone().unwrap_or_default().to_params()
    }

    pub fn sim_config(&self, seed_override: Option<u64>) -> Result<SimConfig, ConfigError> {
        let c = &self.config;
        let fading = match &c.fading {
            Some(f) if f.enabled => Some(
                FadingModel::new(f.ln_mu, f.ln_sigma)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            _ => None,
        };
        let detector = DetectorResponse::new(
            c.detector.sigma_ps,
            c.detector.t0_ps,
            c.detector.t1_ps,
            c.detector.tau_ps,
            c.detector.amplitude,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cfg = SimConfig {
            pass: self.pass_model()?,
            schedule: c.schedule.to_schedule(),
            budget: self.budget_params(),
            fading,
            fading_correlation_time_s: c
                .fading
                .as_ref()
                .map(|f| f.correlation_time_s)
                .unwrap_or_else(d_corr_time),
            detector,
            satellite_spread_fwhm_ps: c.sim.satellite_spread_fwhm_ps,
            source_pulse_fwhm_ps: c.sim.source_pulse_fwhm_ps,
            mu_sat: c.sim.mu_sat,
            dark_rate_hz: c.sim.dark_rate_hz,
            sky_rate_hz: c.sim.sky_rate_hz,
            sky_scaled_by_efficiency: c.sim.sky_scaled_by_efficiency,
            tdc_resolution_ps: c.sim.tdc_resolution_ps,
            seed: seed_override.unwrap_or(c.sim.seed),
            pass_id: c.pass_id.clone(),
            config_digest: self.digest.clone(),
        };
        Ok(cfg)
    }
}
