//! Synthetic detection time-tag streams for a configured pass.
//!
//! Signal photons are generated per fading correlation window by Poisson
//! superposition: the per-pulse detection means within a window are equal to
//! within ~1e-6, so one Poisson draw for the window total followed by uniform
//! assignment to the rx-landing pulses is equivalent to per-pulse draws and
//! keeps a 4×10⁹-pulse pass tractable. Each detection is smeared by the
//! detector response and the configured Gaussian source/satellite spreads,
//! then quantized to the TDC resolution. Slots draw independent random
//! substreams from (seed, slot index), so the output is deterministic and
//! slots can be simulated in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link_budget::{BudgetParams, FadingModel};
use crate::pass_model::{ArrivalGenerator, PassError, PassModel, PulseSchedule};
use crate::detector_response::DetectorResponse;
use crate::{FWHM_PER_SIGMA, PS_PER_S};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
}

impl From<PassError> for SimError {
    fn from(e: PassError) -> Self {
        SimError::ConfigInvalid(e.to_string())
    }
}

/// Malformed tag or profile file.
#[derive(Debug, Error)]
#[error("line {line}: {reason}")]
pub struct FormatError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum TagIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Signal,
    Marker,
}

impl Channel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Signal => "signal",
            Channel::Marker => "marker",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        match s {
            "signal" => Some(Channel::Signal),
            "marker" => Some(Channel::Marker),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeTag {
    pub time_ps: i64,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamMeta {
    pub config_digest: String,
    pub pass_id: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeTagStream {
    pub tags: Vec<TimeTag>,
    pub meta: StreamMeta,
}

/// Full simulation configuration (domain types, not the JSON schema — see
/// [`crate::config`] for the file format).
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub pass: PassModel<f64>,
    pub schedule: PulseSchedule,
    pub budget: BudgetParams<f64>,
    /// Channel fading; `None` disables fading entirely.
    pub fading: Option<FadingModel<f64>>,
    pub fading_correlation_time_s: f64,
    /// Simulation-truth detector response (times in ps).
    pub detector: DetectorResponse<f64>,
    /// Extra Gaussian spread from the satellite shape, FWHM in ps (0 for a
    /// cannonball-type target).
    pub satellite_spread_fwhm_ps: f64,
    /// Source pulse duration, FWHM in ps.
    pub source_pulse_fwhm_ps: f64,
    pub mu_sat: f64,
    pub dark_rate_hz: f64,
    pub sky_rate_hz: f64,
    /// Scale the sky rate by η_rx·η_det.
    pub sky_scaled_by_efficiency: bool,
    pub tdc_resolution_ps: i64,
    pub seed: u64,
    pub pass_id: String,
    pub config_digest: String,
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ConfigInvalid(m.into()));
        if self.mu_sat < 0.0 || self.dark_rate_hz < 0.0 || self.sky_rate_hz < 0.0 {
            return bad("rates must be nonnegative");
        }
        if self.satellite_spread_fwhm_ps < 0.0 || self.source_pulse_fwhm_ps < 0.0 {
            return bad("spread FWHM values must be nonnegative");
        }
        if self.tdc_resolution_ps < 1 {
            return bad("tdc_resolution_ps must be >= 1");
        }
        if !(self.fading_correlation_time_s > 0.0) {
            return bad("fading correlation time must be positive");
        }
        self.schedule.validate().map_err(SimError::from)?;
        self.budget.validate().map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        Ok(())
    }
}

fn poisson_draw<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive finite mean");
    p.sample(rng) as u64
}

/// Fading factor per correlation window of the emission time, deterministic
/// in (seed, window index) and independent of the per-slot substreams.
fn fading_factors(cfg: &SimConfig) -> Vec<f64> {
    let n = (cfg.schedule.pass_duration_s / cfg.fading_correlation_time_s).ceil() as usize + 2;
    match &cfg.fading {
        None => vec![1.0; n],
        Some(f) => (0..n)
            .map(|w| {
                let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
                rng.set_stream(1 << 63 | w as u64);
                f.sample_transmissivity_factor(&mut rng)
            })
            .collect(),
    }
}

struct Gating {
    slot_ps: i64,
    rx0_ps: i64,
    rx1_ps: i64,
    duration_ps: i64,
    tdc_ps: i64,
}

impl Gating {
    fn quantize_and_gate(&self, t_ps: f64) -> Option<i64> {
        let q = self.tdc_ps as f64;
        let t = (t_ps / q).round_ties_even() as i64 * self.tdc_ps;
        if t < 0 || t >= self.duration_ps {
            return None;
        }
        let rel = t.rem_euclid(self.slot_ps);
        if rel < self.rx0_ps || rel >= self.rx1_ps {
            return None;
        }
        Some(t)
    }
}

/// Contiguous pulse-index ranges within `[n0, n1)` whose expected arrivals
/// land inside an rx window.
fn rx_landing_subranges(
    gen: &ArrivalGenerator,
    n0: u64,
    n1: u64,
    gating: &Gating,
) -> Result<Vec<(u64, u64)>, PassError> {
    if n1 <= n0 {
        return Ok(Vec::new());
    }
    let first = gen.arrival_ps(n0)?;
    let last = gen.arrival_ps(n1 - 1)?;
    let mut out = Vec::new();
    let mut k = first / gating.slot_ps;
    while k * gating.slot_ps <= last {
        let lo_edge = k * gating.slot_ps + gating.rx0_ps;
        let hi_edge = k * gating.slot_ps + gating.rx1_ps;
        let ia = partition_arrivals(gen, n0, n1, lo_edge)?;
        let ib = partition_arrivals(gen, n0, n1, hi_edge)?;
        if ib > ia {
            out.push((ia, ib));
        }
        k += 1;
    }
    Ok(out)
}

/// First index in `[n0, n1)` with arrival time >= `t_ps`.
fn partition_arrivals(gen: &ArrivalGenerator, n0: u64, n1: u64, t_ps: i64) -> Result<u64, PassError> {
    let mut lo = n0;
    let mut hi = n1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if gen.arrival_ps(mid)? < t_ps {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

pub fn simulate(cfg: &SimConfig) -> Result<TimeTagStream, SimError> {
    cfg.validate()?;
    let gen = ArrivalGenerator::new(&cfg.pass, &cfg.schedule)?;
    let sched = &cfg.schedule;
    let slot_ps = (sched.slot_length_s * PS_PER_S).round() as i64;
    let gating = Gating {
        slot_ps,
        rx0_ps: (sched.rx_window_s.0 * PS_PER_S).round() as i64,
        rx1_ps: (sched.rx_window_s.1 * PS_PER_S).round() as i64,
        duration_ps: (sched.pass_duration_s * PS_PER_S).round() as i64,
        tdc_ps: cfg.tdc_resolution_ps,
    };
    let fades = fading_factors(cfg);
    let pulses_per_slot = sched.pulses_per_slot();
    let sigma_source = cfg.source_pulse_fwhm_ps / FWHM_PER_SIGMA;
    let sigma_spread = cfg.satellite_spread_fwhm_ps / FWHM_PER_SIGMA;
    let bg_rate = cfg.dark_rate_hz
        + if cfg.sky_scaled_by_efficiency {
            cfg.sky_rate_hz * cfg.budget.eta_rx * cfg.budget.eta_det
        } else {
            cfg.sky_rate_hz
        };
    let rx_len_s = sched.rx_window_s.1 - sched.rx_window_s.0;

    let per_slot: Result<Vec<Vec<TimeTag>>, SimError> = (0..sched.slots())
        .into_par_iter()
        .map(|slot| {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(slot + 1);
            let mut tags = Vec::new();
            let normal = Normal::new(0.0, 1.0).unwrap();

            if cfg.mu_sat > 0.0 && pulses_per_slot > 0 {
                let tx_start_abs = slot as f64 * sched.slot_length_s + sched.tx_window_s.0;
                let corr = cfg.fading_correlation_time_s;
                let w_first = (tx_start_abs / corr).floor() as i64;
                let t_last = tx_start_abs + (pulses_per_slot - 1) as f64 / sched.rep_rate_hz;
                let w_last = (t_last / corr).floor() as i64;
                for w in w_first..=w_last {
                    let j_of = |t: f64| -> u64 {
                        let j = ((t - tx_start_abs) * sched.rep_rate_hz).ceil();
                        j.max(0.0).min(pulses_per_slot as f64) as u64
                    };
                    let jlo = j_of(w as f64 * corr);
                    let jhi = j_of((w + 1) as f64 * corr);
                    if jhi <= jlo {
                        continue;
                    }
                    let fade = fades.get(w.max(0) as usize).copied().unwrap_or(1.0);
                    let n0 = slot * pulses_per_slot + jlo;
                    let n1 = slot * pulses_per_slot + jhi;
                    for (a, b) in rx_landing_subranges(&gen, n0, n1, &gating)? {
                        let t_mid = gen.emit_time_s((a + b - 1) / 2);
                        let mu_rec = cfg.budget.mu_received(cfg.pass.range(t_mid)?, cfg.mu_sat);
                        let mean = (b - a) as f64 * mu_rec * fade;
                        for _ in 0..poisson_draw(&mut rng, mean) {
                            let n = rng.random_range(a..b);
                            let (emit_slot, rel_ps) = gen.arrival_rel_ps(n)?;
                            let mut delta = cfg.detector.sample(&mut rng) - cfg.detector.t0_ps;
                            if sigma_source > 0.0 {
                                delta += sigma_source * normal.sample(&mut rng);
                            }
                            if sigma_spread > 0.0 {
                                delta += sigma_spread * normal.sample(&mut rng);
                            }
                            let t = emit_slot as f64 * slot_ps as f64 + rel_ps + delta;
                            if let Some(t_ps) = gating.quantize_and_gate(t) {
                                tags.push(TimeTag { time_ps: t_ps, channel: Channel::Signal });
                            }
                        }
                    }
                }
            }

            // Background: homogeneous Poisson restricted to the rx window.
            let n_bg = poisson_draw(&mut rng, bg_rate * rx_len_s);
            let base = slot as i64 * slot_ps;
            for _ in 0..n_bg {
                let u: f64 = rng.random();
                let t = base as f64 + gating.rx0_ps as f64 + u * (gating.rx1_ps - gating.rx0_ps) as f64;
                if let Some(t_ps) = gating.quantize_and_gate(t) {
                    tags.push(TimeTag { time_ps: t_ps, channel: Channel::Signal });
                }
            }
            Ok(tags)
        })
        .collect();

    let mut tags: Vec<TimeTag> = per_slot?.into_iter().flatten().collect();
    tags.sort();
    Ok(TimeTagStream {
        tags,
        meta: StreamMeta {
            config_digest: cfg.config_digest.clone(),
            pass_id: cfg.pass_id.clone(),
            duration_s: sched.pass_duration_s,
        },
    })
}

/// Write a stream as CSV (`time_ps,channel`, LF line endings) plus a
/// `<path>.meta.json` sidecar.
pub fn write_tags(stream: &TimeTagStream, path: &std::path::Path) -> Result<(), TagIoError> {
    let mut out = String::with_capacity(stream.tags.len() * 16 + 16);
    out.push_str("time_ps,channel\n");
    for tag in &stream.tags {
        out.push_str(&format!("{},{}\n", tag.time_ps, tag.channel.as_str()));
    }
    std::fs::write(path, out)?;
    let meta = serde_json::to_string_pretty(&stream.meta).expect("meta serializes");
    std::fs::write(meta_path(path), meta + "\n")?;
    Ok(())
}

fn meta_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

pub fn read_tags(path: &std::path::Path) -> Result<TimeTagStream, TagIoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "time_ps,channel")) => {}
        _ => return Err(FormatError { line: 1, reason: "expected header `time_ps,channel`".into() }.into()),
    }
    let mut tags: Vec<TimeTag> = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (a, b) = line
            .split_once(',')
            .ok_or(FormatError { line: lineno, reason: "expected two comma-separated fields".into() })?;
        let time_ps: i64 = a
            .parse()
            .map_err(|e| FormatError { line: lineno, reason: format!("bad time_ps: {e}") })?;
        let channel = Channel::parse(b)
            .ok_or(FormatError { line: lineno, reason: format!("unknown channel `{b}`") })?;
        if let Some(prev) = tags.last() {
            if time_ps < prev.time_ps {
                return Err(FormatError { line: lineno, reason: "tags not sorted by time".into() }.into());
            }
        }
        tags.push(TimeTag { time_ps, channel });
    }
    let meta = match std::fs::read_to_string(meta_path(path)) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| FormatError { line: 0, reason: format!("bad meta sidecar: {e}") })?,
        Err(_) => StreamMeta::default(),
    };
    Ok(TimeTagStream { tags, meta })
}
