//! Offline analysis of a detection time-tag stream.
//!
//! The pipeline matches each tag to the nearest expected arrival, histograms
//! the differences, fits the detector response model to recover the system
//! jitter, applies a fixed temporal filter around the fitted mode, and then
//! reduces the pass to per-frame statistics: background-corrected signal
//! rate, signal-to-noise ratio, adaptive frame selection, a lognormal fit of
//! the kept-rate distribution, and per-frame satellite photon numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector_response::{fit_response, FitError, FitResult};
use crate::histogram::{build_histogram, Histogram};
use crate::link_budget::BudgetParams;
use crate::lm::{self, LmOptions};
use crate::pass_model::{ArrivalGenerator, ExpectedArrival, PassError, PassModel, PulseSchedule};
use crate::timetag_sim::TimeTagStream;
use crate::PS_PER_S;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("EmptyInput: no tags or no expected arrivals to match")]
    EmptyInput,
    #[error("pass model error: {0}")]
    Pass(#[from] PassError),
    #[error("response fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("too few frames for the rate fit: have {have}, need {need}")]
    TooFewFrames { have: usize, need: usize },
    #[error("degenerate analysis input: {0}")]
    Degenerate(String),
}

/// Time difference between a measured tag and its nearest expected arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delta {
    pub tag_time_ps: i64,
    pub delta_ps: i64,
    pub pulse_index: u64,
}

/// Matched tag/arrival differences, all within ± the window halfspan.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSet {
    pub deltas: Vec<Delta>,
    /// Half the pulse period by default; deltas beyond it are impossible for
    /// nearest matching and are dropped defensively.
    pub window_halfspan_ps: f64,
}

/// Match each tag to the nearest arrival of a sorted slice (ties go to the
/// earlier arrival) with a single forward scan, linear in both inputs.
pub fn compute_deltas(
    tag_times_ps: &[i64],
    arrivals: &[ExpectedArrival],
    window_halfspan_ps: f64,
) -> Result<DeltaSet, AnalysisError> {
    if tag_times_ps.is_empty() || arrivals.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut deltas = Vec::with_capacity(tag_times_ps.len());
    let mut i = 0usize;
    for &t in tag_times_ps {
        while i + 1 < arrivals.len()
            && (arrivals[i + 1].t_ref_ps - t).abs() < (arrivals[i].t_ref_ps - t).abs()
        {
            i += 1;
        }
        push_delta(&mut deltas, t, &arrivals[i], window_halfspan_ps);
    }
    Ok(DeltaSet { deltas, window_halfspan_ps })
}

/// Generator-backed variant of [`compute_deltas`]; matches tags against the
/// lazy arrival sequence by binary search instead of materializing it.
pub fn compute_deltas_gen(
    tag_times_ps: &[i64],
    gen: &ArrivalGenerator,
    window_halfspan_ps: f64,
) -> Result<DeltaSet, AnalysisError> {
    if tag_times_ps.is_empty() || gen.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut deltas = Vec::with_capacity(tag_times_ps.len());
    for &t in tag_times_ps {
        let a = gen.nearest(t)?;
        push_delta(&mut deltas, t, &a, window_halfspan_ps);
    }
    Ok(DeltaSet { deltas, window_halfspan_ps })
}

fn push_delta(out: &mut Vec<Delta>, t: i64, arrival: &ExpectedArrival, halfspan: f64) {
    let delta_ps = t - arrival.t_ref_ps;
    if (delta_ps as f64).abs() <= halfspan {
        out.push(Delta { tag_time_ps: t, delta_ps, pulse_index: arrival.pulse_index });
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Bin width of the delta histogram, ps.
    pub bin_width_ps: f64,
    /// Matching window halfspan; deltas outside it are dropped.
    pub delta_halfspan_ps: f64,
    /// Temporal filter half-width around the fitted mode, ps.
    pub filter_halfwidth_ps: f64,
    pub frame_length_s: f64,
    /// Floor applied to the background estimate in the SNR denominator.
    pub snr_floor: f64,
    /// Bin width of the kept-rate histogram, counts/s.
    pub rate_bin_cps: f64,
    /// Frames with SNR below this are discarded by the adaptive selection.
    pub snr_keep_threshold: f64,
    /// Minimum kept frames required for the lognormal rate fit.
    pub min_frames_for_fit: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            bin_width_ps: 20.0,
            delta_halfspan_ps: 5_000.0,
            filter_halfwidth_ps: 200.0,
            frame_length_s: 0.2,
            snr_floor: 0.5,
            rate_bin_cps: 25.0,
            snr_keep_threshold: 1.0,
            min_frames_for_fit: 30,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::Degenerate(m.into()));
        if !(self.bin_width_ps > 0.0 && self.delta_halfspan_ps > 0.0) {
            return bad("bin width and halfspan must be positive");
        }
        if !(self.filter_halfwidth_ps > 0.0 && self.filter_halfwidth_ps < self.delta_halfspan_ps) {
            return bad("filter halfwidth must be positive and smaller than the halfspan");
        }
        if !(self.frame_length_s > 0.0) {
            return bad("frame length must be positive");
        }
        if !(self.snr_floor > 0.0 && self.rate_bin_cps > 0.0) {
            return bad("snr floor and rate bin width must be positive");
        }
        Ok(())
    }
}

/// Per-frame counting statistics after the temporal filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame_index: usize,
    pub frame_start_s: f64,
    pub frame_length_s: f64,
    /// Tags with |Δ − center| ≤ filter halfwidth.
    pub in_window_counts: u64,
    /// Tags inside the halfspan but outside the filter.
    pub outside_counts: u64,
    /// Background expected inside the filter, scaled from the outside counts.
    pub background_estimate: f64,
    /// `in_window − background`, signed; kept as a diagnostic.
    pub signal_counts: f64,
    /// Background-corrected signal rate per wall-clock second, floored at 0.
    pub signal_rate_cps: f64,
    pub snr: f64,
    /// Per-frame satellite photon number; filled by [`estimate_mu_sat`].
    pub mu_sat: f64,
    pub kept_by_arts: bool,
}

/// Split deltas into fixed frames and compute filtered counting statistics.
///
/// The background inside the filter is estimated from the counts outside it:
/// the sideband `halfwidth < |Δ − center| ≤ halfspan` is assumed flat, so the
/// expected in-filter background is `outside × 2·halfwidth / (2·halfspan −
/// 2·halfwidth)`.
pub fn frame_statistics(
    deltas: &DeltaSet,
    center_ps: f64,
    duration_s: f64,
    opts: &AnalysisOptions,
) -> Result<Vec<FrameStats>, AnalysisError> {
    opts.validate()?;
    if !(duration_s > 0.0) {
        return Err(AnalysisError::Degenerate("duration must be positive".into()));
    }
    let n_frames = (duration_s / opts.frame_length_s).ceil() as usize;
    if n_frames == 0 {
        return Err(AnalysisError::Degenerate("no frames in duration".into()));
    }
    let halfspan = deltas.window_halfspan_ps.min(opts.delta_halfspan_ps);
    if opts.filter_halfwidth_ps >= halfspan {
        return Err(AnalysisError::Degenerate("filter halfwidth must be smaller than the matching halfspan".into()));
    }
    let frame_ps = opts.frame_length_s * PS_PER_S;
    let mut in_window = vec![0u64; n_frames];
    let mut outside = vec![0u64; n_frames];
    for d in &deltas.deltas {
        let f = (d.tag_time_ps as f64 / frame_ps) as usize;
        if f >= n_frames {
            continue;
        }
        let dev = (d.delta_ps as f64 - center_ps).abs();
        if dev <= opts.filter_halfwidth_ps {
            in_window[f] += 1;
        } else if dev <= halfspan {
            outside[f] += 1;
        }
    }
    let bg_scale = 2.0 * opts.filter_halfwidth_ps / (2.0 * halfspan - 2.0 * opts.filter_halfwidth_ps);
    Ok((0..n_frames)
        .map(|f| {
            let background = outside[f] as f64 * bg_scale;
            let signal = in_window[f] as f64 - background;
            FrameStats {
                frame_index: f,
                frame_start_s: f as f64 * opts.frame_length_s,
                frame_length_s: opts.frame_length_s,
                in_window_counts: in_window[f],
                outside_counts: outside[f],
                background_estimate: background,
                signal_counts: signal,
                signal_rate_cps: signal.max(0.0) / opts.frame_length_s,
                snr: signal / background.max(opts.snr_floor),
                mu_sat: 0.0,
                kept_by_arts: false,
            }
        })
        .collect())
}

/// Adaptive real-time selection summary: frames below the SNR threshold are
/// discarded. A fully-discarded pass is reported, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtsSummary {
    pub kept: usize,
    pub discarded: usize,
    pub discard_fraction: f64,
    pub kept_rate_mean_cps: f64,
    pub kept_snr_mean: f64,
}

/// Mark frames below the SNR threshold as discarded and summarize the rest.
pub fn arts_select(frames: &mut [FrameStats], snr_threshold: f64) -> ArtsSummary {
    for f in frames.iter_mut() {
        f.kept_by_arts = f.snr >= snr_threshold;
    }
    let kept: Vec<&FrameStats> = frames.iter().filter(|f| f.kept_by_arts).collect();
    let n = kept.len();
    ArtsSummary {
        kept: n,
        discarded: frames.len() - n,
        discard_fraction: if frames.is_empty() {
            0.0
        } else {
            (frames.len() - n) as f64 / frames.len() as f64
        },
        kept_rate_mean_cps: mean(kept.iter().map(|f| f.signal_rate_cps)),
        kept_snr_mean: mean(kept.iter().map(|f| f.snr)),
    }
}

/// Abramowitz–Stegun 7.1.26 erf approximation, |error| < 1.5e-7.
fn standard_normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let (z, sign) = if z < 0.0 { (-z, -1.0) } else { (z, 1.0) };
    let t = 1.0 / (1.0 + 0.327_591_1 * z);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = sign * (1.0 - poly * (-z * z).exp());
    0.5 * (1.0 + erf)
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Lognormal fit of the per-frame rate distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LognormalRateFit {
    /// Least-squares fit of the scaled lognormal density to the rate histogram.
    pub ln_mu: f64,
    pub ln_sigma: f64,
    pub amplitude: f64,
    /// Closed-form maximum-likelihood estimates from the log rates, as a
    /// cross-check on the histogram fit.
    pub mle_ln_mu: f64,
    pub mle_ln_sigma: f64,
    pub scintillation_index: f64,
    /// Zero/negative-rate frames excluded from the fit.
    pub excluded_frames: usize,
    /// Kept for CSV emission; reports carry histograms as separate files.
    #[serde(skip)]
    pub histogram: Histogram,
}

/// Histogram the positive frame rates and fit a scaled lognormal density by
/// least squares, cross-checked against the closed-form MLE.
pub fn fit_rate_lognormal(
    rates_cps: &[f64],
    opts: &AnalysisOptions,
) -> Result<LognormalRateFit, AnalysisError> {
    opts.validate()?;
    let rates: Vec<f64> = rates_cps.iter().copied().filter(|&r| r > 0.0).collect();
    let excluded = rates_cps.len() - rates.len();
    if rates.len() < opts.min_frames_for_fit {
        return Err(AnalysisError::TooFewFrames {
            have: rates.len(),
            need: opts.min_frames_for_fit,
        });
    }
    let logs: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    let mle_mu = mean(logs.iter().copied());
    let mle_var = logs.iter().map(|l| (l - mle_mu) * (l - mle_mu)).sum::<f64>() / logs.len() as f64;
    let mle_sigma = mle_var.sqrt();
    if !(mle_sigma > 0.0) {
        return Err(AnalysisError::Degenerate("frame rates have zero spread".into()));
    }

    let hi = rates.iter().copied().fold(0.0f64, f64::max) + opts.rate_bin_cps;
    let (mut hist, _) = build_histogram(&rates, opts.rate_bin_cps, (0.0, hi))
        .map_err(|e| AnalysisError::Degenerate(e.to_string()))?;
    // Frames whose background-corrected counts came out nonpositive were
    // clamped to rate zero. They belong at the bottom of the distribution, so
    // the least squares counts them in the lowest bin; the MLE cross-check
    // has to leave them out (log of zero).
    if let Some(first) = hist.counts.first_mut() {
        *first += excluded as f64;
    }

    let centers = hist.bin_centers.clone();
    let counts = hist.counts.clone();
    let half = hist.bin_width / 2.0;
    let n = centers.len();
    let total = (rates.len() + excluded) as f64 * opts.rate_bin_cps;
    // The density varies strongly across the lowest bins, so the model value
    // per bin is the bin-averaged density (CDF difference over the width),
    // not the center value — otherwise the fitted width is biased low.
    let residuals = move |p: &[f64], out: &mut Vec<f64>| {
        out.clear();
        let (mu, sigma) = (p[0], p[1].exp());
        let amp = p[2].exp();
        let cdf = |x: f64| {
            if x <= 0.0 {
                0.0
            } else {
                standard_normal_cdf((x.ln() - mu) / sigma)
            }
        };
        for i in 0..n {
            let mass = cdf(centers[i] + half) - cdf(centers[i] - half);
            out.push(amp * mass / (2.0 * half) - counts[i]);
        }
    };
    let p0 = [mle_mu, mle_sigma.ln(), total.ln()];
    let sol = lm::minimize(&residuals, &p0, n, &LmOptions::default())
        .map_err(|e| AnalysisError::Degenerate(format!("lognormal rate fit failed: {e}")))?;
    let ln_sigma = sol.params[1].exp();
    Ok(LognormalRateFit {
        ln_mu: sol.params[0],
        ln_sigma,
        amplitude: sol.params[2].exp(),
        mle_ln_mu: mle_mu,
        mle_ln_sigma: mle_sigma,
        scintillation_index: (ln_sigma * ln_sigma).exp_m1(),
        excluded_frames: excluded,
        histogram: hist,
    })
}

/// Fill each frame's `mu_sat` and return the mean over all frames.
///
/// Per frame, the received photon number per pulse is the background-corrected
/// in-filter count divided by the number of expected arrivals inside rx
/// windows during the frame, corrected for the fraction of the fitted
/// response the temporal filter captures; the satellite-side number then
/// inverts the radar equation at the frame midpoint's range. Fading is
/// unit-mean, so the average over frames estimates the configured value.
pub fn estimate_mu_sat(
    frames: &mut [FrameStats],
    gen: &ArrivalGenerator,
    budget: &BudgetParams<f64>,
    capture_fraction: f64,
) -> Result<f64, AnalysisError> {
    if frames.is_empty() {
        return Err(AnalysisError::Degenerate("no frames".into()));
    }
    if !(capture_fraction > 0.0 && capture_fraction <= 1.0) {
        return Err(AnalysisError::Degenerate("capture fraction must be in (0, 1]".into()));
    }
    let pass = gen.pass();
    let mut sum = 0.0;
    for f in frames.iter_mut() {
        let lo = (f.frame_start_s * PS_PER_S).round() as i64;
        let hi = ((f.frame_start_s + f.frame_length_s) * PS_PER_S).round() as i64;
        let pulses = gen.count_rx_arrivals_in(lo, hi)?;
        if pulses == 0 || f.signal_rate_cps <= 0.0 {
            f.mu_sat = 0.0;
            continue;
        }
        let mu_rec = f.signal_rate_cps * f.frame_length_s / pulses as f64 / capture_fraction;
        let t_mid = f.frame_start_s + 0.5 * f.frame_length_s;
        let range = pass.range(t_mid)?;
        f.mu_sat = budget
            .mu_sat_estimate(range, mu_rec)
            .map_err(|e| AnalysisError::Degenerate(e.to_string()))?;
        sum += f.mu_sat;
    }
    Ok(sum / frames.len() as f64)
}

/// Effective capture fraction of the temporal filter, estimated from the
/// matched deltas themselves.
///
/// `estimate_mu_sat` divides the per-frame background-corrected in-filter
/// count by this value, so it must describe the estimator, not the model:
/// the fraction of the *actual* signal mass the filter captures, reduced by
/// the signal tail that leaks into the scaled outside-counts background
/// estimate. Both are measured on the pedestal-subtracted delta set; the
/// pedestal is taken per bin-width slice further than 1500 ps from the
/// filter center, where the response has fully decayed. Returns `None` when
/// the data carry no usable signal excess.
pub fn effective_capture_fraction(
    deltas_ps: &[f64],
    center_ps: f64,
    opts: &AnalysisOptions,
) -> Option<f64> {
    let hw = opts.filter_halfwidth_ps;
    let span = opts.delta_halfspan_ps;
    if !(hw > 0.0 && span > hw) {
        return None;
    }
    let n_total = deltas_ps.len() as f64;
    let mut n_in = 0.0f64;
    let mut n_far = 0.0f64;
    for &d in deltas_ps {
        let off = (d - center_ps).abs();
        if off <= hw {
            n_in += 1.0;
        }
        if off > 1500.0 {
            n_far += 1.0;
        }
    }
    // Width (in ps) of the far region that lies inside the full span.
    let far_width =
        (center_ps - 1500.0 - (-span)).max(0.0) + (span - (center_ps + 1500.0)).max(0.0);
    if far_width <= 0.0 {
        return None;
    }
    let density = n_far / far_width; // background counts per ps
    let s_total = n_total - density * 2.0 * span;
    let s_in = n_in - density * 2.0 * hw;
    if !(s_total > 0.0) {
        return None;
    }
    let s_out = s_total - s_in;
    let w = (2.0 * hw) / (2.0 * span - 2.0 * hw);
    let c = (s_in - w * s_out) / s_total;
    if c.is_finite() && c > 0.0 && c <= 1.0 {
        Some(c)
    } else {
        None
    }
}

/// Isolate the response peak for fitting: subtract the flat accidental
/// pedestal and crop to the peak neighborhood.
///
/// The response model has no constant term, so fitting it to the full-span
/// delta histogram would smear the peak into the background floor. The
/// pedestal is the mean count of bins more than 1500 ps from the mode (where
/// the response has decayed below one count in practice); the fit then sees
/// only bins within 1000 ps of the mode, background-subtracted and clamped
/// at zero.
pub fn pedestal_corrected_peak(hist: &Histogram) -> Histogram {
    let mode_idx = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mode = hist.bin_centers.get(mode_idx).copied().unwrap_or(0.0);
    let far: Vec<f64> = hist
        .bin_centers
        .iter()
        .zip(&hist.counts)
        .filter(|(c, _)| (**c - mode).abs() > 1500.0)
        .map(|(_, n)| *n)
        .collect();
    let pedestal = if far.is_empty() { 0.0 } else { far.iter().sum::<f64>() / far.len() as f64 };
    let mut centers = Vec::new();
    let mut counts = Vec::new();
    for (c, n) in hist.bin_centers.iter().zip(&hist.counts) {
        if (c - mode).abs() <= 1000.0 {
            centers.push(*c);
            counts.push((n - pedestal).max(0.0));
        }
    }
    Histogram { bin_width: hist.bin_width, bin_centers: centers, counts }
}

/// Full analysis result for one stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub response_fit: FitResult,
    /// Center of the temporal filter: the fitted response mode, ps.
    pub filter_center_ps: f64,
    /// Effective signal fraction the temporal filter captures (empirical
    /// where measurable, otherwise from the fitted response).
    pub capture_fraction: f64,
    /// Kept for CSV emission; reports carry histograms as separate files.
    #[serde(skip)]
    pub delta_histogram: Histogram,
    pub frames: Vec<FrameStats>,
    pub arts: ArtsSummary,
    pub rate_fit: Option<LognormalRateFit>,
    pub mu_sat_mean: f64,
    pub total_tags: usize,
}

/// Run the full pipeline: deltas → response fit → temporal filter → frames →
/// adaptive selection → lognormal rate fit → link estimate.
///
/// The lognormal fit is `None` (not an error) when too few frames survive
/// selection.
pub fn analyze_stream(
    stream: &TimeTagStream,
    pass: &PassModel<f64>,
    sched: &PulseSchedule,
    budget: &BudgetParams<f64>,
    opts: &AnalysisOptions,
) -> Result<AnalysisResult, AnalysisError> {
    opts.validate()?;
    sched.validate()?;
    let gen = ArrivalGenerator::new(pass, sched)?;
    let tag_times: Vec<i64> = stream.tags.iter().map(|t| t.time_ps).collect();
    let deltas = compute_deltas_gen(&tag_times, &gen, opts.delta_halfspan_ps)?;

    let values: Vec<f64> = deltas.deltas.iter().map(|d| d.delta_ps as f64).collect();
    let (hist, _) = build_histogram(
        &values,
        opts.bin_width_ps,
        (-opts.delta_halfspan_ps, opts.delta_halfspan_ps),
    )
    .map_err(|e| AnalysisError::Degenerate(e.to_string()))?;
    let peak_hist = pedestal_corrected_peak(&hist);
    let response_fit = fit_response(&peak_hist, None)?;
    let center = response_fit.params.mode_time();
    let capture = effective_capture_fraction(&values, center, opts)
        .unwrap_or_else(|| response_fit.params.capture_fraction(opts.filter_halfwidth_ps));

    let duration = stream.meta.duration_s.max(sched.pass_duration_s);
    let mut frames = frame_statistics(&deltas, center, duration, opts)?;
    let arts = arts_select(&mut frames, opts.snr_keep_threshold);
    // The rate distribution is fitted over every frame with a positive rate,
    // not only the frames that survive selection: thresholding on SNR would
    // truncate the low-rate tail and bias the fitted width low.
    let frame_rates: Vec<f64> = frames.iter().map(|f| f.signal_rate_cps).collect();
    let rate_fit = match fit_rate_lognormal(&frame_rates, opts) {
        Ok(f) => Some(f),
        Err(AnalysisError::TooFewFrames { .. }) => None,
        Err(e) => return Err(e),
    };
    let mu_sat_mean = estimate_mu_sat(&mut frames, &gen, budget, capture)?;
    Ok(AnalysisResult {
        response_fit,
        filter_center_ps: center,
        capture_fraction: capture,
        delta_histogram: hist,
        frames,
        arts,
        rate_fit,
        mu_sat_mean,
        total_tags: stream.tags.len(),
    })
}
