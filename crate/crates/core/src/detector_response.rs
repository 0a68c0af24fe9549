//! Detector temporal response: a Gaussian peak followed by an exponential
//! decay, continuous at the crossover.
//!
//! ```text
//! f(t) = A·exp(−(t−t0)²/(2σ²))   for t ≤ t1
//!        B·exp(−(t−t1)/τ)        for t > t1,   B = A·exp(−(t1−t0)²/(2σ²))
//! ```
//!
//! The crossover value `B` is always derived from the other parameters, never
//! fitted, so continuity at `t1` holds to machine precision by construction.
//! The same model both smears simulated detections and fits measured Δ
//! histograms.

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histogram::Histogram;
use crate::lm::{self, LmOptions};

#[derive(Debug, Error)]
pub enum ResponseError {
    #[error("invalid response parameters: {0}")]
    InvalidParams(String),
    #[error("no half-maximum crossing found")]
    NoCrossing,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("histogram has fewer than 10 nonzero bins")]
    DegenerateHistogram,
    #[error("fit diverged: {0}")]
    FitDiverged(String),
}

/// Parameters of the detector response. Times in picoseconds, amplitude in
/// arbitrary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorResponse<F: Float> {
    pub sigma_ps: F,
    pub t0_ps: F,
    pub t1_ps: F,
    pub tau_ps: F,
    pub amplitude: F,
}

impl<F: Float> DetectorResponse<F> {
    pub fn new(sigma_ps: F, t0_ps: F, t1_ps: F, tau_ps: F, amplitude: F) -> Result<Self, ResponseError> {
        if sigma_ps <= F::zero() || tau_ps <= F::zero() || amplitude <= F::zero() {
            return Err(ResponseError::InvalidParams("sigma, tau and amplitude must be positive".into()));
        }
        Ok(DetectorResponse { sigma_ps, t0_ps, t1_ps, tau_ps, amplitude })
    }

    /// Fit sanity bound `t1 ≥ t0 − 5σ`; enforced on fitted parameter sets.
    pub fn satisfies_fit_bound(&self) -> bool {
        self.t1_ps >= self.t0_ps - F::from(5.0).unwrap() * self.sigma_ps
    }

    /// Crossover value `B = A·exp(−(t1−t0)²/(2σ²))`.
    pub fn crossover_value(&self) -> F {
        let two = F::from(2.0).unwrap();
        let d = self.t1_ps - self.t0_ps;
        self.amplitude * (-(d * d) / (two * self.sigma_ps * self.sigma_ps)).exp()
    }

    /// Response value at `t`. The boundary point `t = t1` belongs to the
    /// Gaussian branch.
    pub fn eval(&self, t_ps: F) -> F {
        let two = F::from(2.0).unwrap();
        if t_ps <= self.t1_ps {
            let d = t_ps - self.t0_ps;
            self.amplitude * (-(d * d) / (two * self.sigma_ps * self.sigma_ps)).exp()
        } else {
            self.crossover_value() * (-(t_ps - self.t1_ps) / self.tau_ps).exp()
        }
    }

    /// Location of the maximum: `t0` when the Gaussian peak is reached before
    /// the crossover, `t1` otherwise.
    pub fn mode_time(&self) -> F {
        if self.t1_ps >= self.t0_ps {
            self.t0_ps
        } else {
            self.t1_ps
        }
    }

    pub fn peak_value(&self) -> F {
        self.eval(self.mode_time())
    }

    /// Numeric full width at half maximum, bisected to 0.1 ps.
    pub fn fwhm(&self) -> Result<F, ResponseError> {
        let half = self.peak_value() / F::from(2.0).unwrap();
        let tol = F::from(0.1).unwrap();
        let peak_t = self.mode_time();

        // Rising half-point: always on the Gaussian branch, left of the peak.
        let mut a = peak_t - self.sigma_ps;
        let mut grow = self.sigma_ps;
        let mut found = false;
        for _ in 0..200 {
            if self.eval(a) < half {
                found = true;
                break;
            }
            grow = grow + grow;
            a = peak_t - grow;
        }
        if !found {
            return Err(ResponseError::NoCrossing);
        }
        let rising = bisect(|t| self.eval(t), a, peak_t, half, tol, true);

        // Falling half-point: exponential branch when the crossover value is
        // still above the half level, otherwise between the peak and t1.
        let falling = if self.t1_ps <= peak_t || self.crossover_value() >= half {
            let mut b = self.t1_ps.max(peak_t) + self.tau_ps;
            let mut grow = self.tau_ps;
            let mut found = false;
            for _ in 0..200 {
                if self.eval(b) < half {
                    found = true;
                    break;
                }
                grow = grow + grow;
                b = self.t1_ps.max(peak_t) + grow;
            }
            if !found {
                return Err(ResponseError::NoCrossing);
            }
            bisect(|t| self.eval(t), self.t1_ps.max(peak_t), b, half, tol, false)
        } else {
            bisect(|t| self.eval(t), peak_t, self.t1_ps, half, tol, false)
        };
        Ok(falling - rising)
    }
}

fn bisect<F: Float>(f: impl Fn(F) -> F, mut lo: F, mut hi: F, level: F, tol: F, rising: bool) -> F {
    let two = F::from(2.0).unwrap();
    while hi - lo > tol {
        let mid = (lo + hi) / two;
        let above = f(mid) >= level;
        if above == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo + hi) / two
}

/// Standard normal CDF (Abramowitz–Stegun 7.1.26 erf, |err| < 1.5e-7).
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

impl DetectorResponse<f64> {
    /// Integral of the Gaussian branch, `A·σ·√(2π)·Φ((t1−t0)/σ)`.
    pub fn gaussian_weight(&self) -> f64 {
        self.amplitude
            * self.sigma_ps
            * (2.0 * std::f64::consts::PI).sqrt()
            * normal_cdf((self.t1_ps - self.t0_ps) / self.sigma_ps)
    }

    /// Integral of the exponential tail, `B·τ`.
    pub fn tail_weight(&self) -> f64 {
        self.crossover_value() * self.tau_ps
    }

    pub fn total_integral(&self) -> f64 {
        self.gaussian_weight() + self.tail_weight()
    }

    /// Integral of `f` over `[lo, hi]`.
    pub fn integral_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut total = 0.0;
        if lo < self.t1_ps {
            let a = (lo - self.t0_ps) / self.sigma_ps;
            let b = (hi.min(self.t1_ps) - self.t0_ps) / self.sigma_ps;
            total += self.amplitude
                * self.sigma_ps
                * (2.0 * std::f64::consts::PI).sqrt()
                * (normal_cdf(b) - normal_cdf(a));
        }
        if hi > self.t1_ps {
            let a = (lo.max(self.t1_ps) - self.t1_ps) / self.tau_ps;
            let b = (hi - self.t1_ps) / self.tau_ps;
            total += self.crossover_value() * self.tau_ps * ((-a).exp() - (-b).exp());
        }
        total
    }

    /// Fraction of the response mass within ±`halfwidth_ps` of the mode.
    pub fn capture_fraction(&self, halfwidth_ps: f64) -> f64 {
        let m = self.mode_time();
        self.integral_between(m - halfwidth_ps, m + halfwidth_ps) / self.total_integral()
    }

    /// Draw from the density proportional to `f`: the branch is chosen with
    /// probability proportional to its integral, the truncated Gaussian is
    /// sampled by rejection and the tail by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = self.gaussian_weight();
        let w = g / (g + self.tail_weight());
        if rng.random::<f64>() < w {
            for _ in 0..100_000 {
                let z: f64 = StandardNormal.sample(rng);
                let x = self.t0_ps + self.sigma_ps * z;
                if x <= self.t1_ps {
                    return x;
                }
            }
            // Unreachable unless the branch weight is vanishingly small.
            self.t1_ps
        } else {
            let u: f64 = rng.random::<f64>();
            self.t1_ps - self.tau_ps * (1.0 - u).ln()
        }
    }
}

/// Result of fitting the response model to a histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DetectorResponse<f64>,
    pub fwhm_ps: f64,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Weighted least-squares fit of the response model to a binned histogram.
///
/// Weights are `1/max(count, 1)` (Gaussian approximation of Poisson counts).
/// The free parameters are `(σ, t0, t1, τ, A)` with `B` always derived;
/// positivity of `σ, τ, A` is enforced by fitting their logarithms. The fit
/// works in coordinates centered on the mode bin, which makes it exactly
/// shift-equivariant.
pub fn fit_response(hist: &Histogram, init: Option<&DetectorResponse<f64>>) -> Result<FitResult, FitError> {
    let nonzero = hist.counts.iter().filter(|&&c| c > 0.0).count();
    if nonzero < 10 {
        return Err(FitError::DegenerateHistogram);
    }

    let mode_idx = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let shift = hist.bin_centers[mode_idx];

    let p0 = match init {
        Some(r) => [
            r.sigma_ps.ln(),
            r.t0_ps - shift,
            r.t1_ps - shift,
            r.tau_ps.ln(),
            r.amplitude.ln(),
        ],
        None => {
            let amp = hist.counts[mode_idx];
            let fwhm = empirical_fwhm(hist, mode_idx).max(2.0 * hist.bin_width);
            let sigma = fwhm / (2.0 * 1.177);
            [sigma.ln(), 0.0, 0.0, sigma.ln(), amp.ln()]
        }
    };

    let centers: Vec<f64> = hist.bin_centers.iter().map(|c| c - shift).collect();
    let counts = hist.counts.clone();
    let weights: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();
    let n = centers.len();

    let residuals = move |p: &[f64], out: &mut Vec<f64>| {
        out.clear();
        let r = DetectorResponse {
            sigma_ps: p[0].exp(),
            t0_ps: p[1],
            t1_ps: p[2],
            tau_ps: p[3].exp(),
            amplitude: p[4].exp(),
        };
        for i in 0..n {
            out.push((r.eval(centers[i]) - counts[i]) * weights[i]);
        }
    };

    // The crossover time has a vanishing model gradient on the manifold
    // t1 − t0 = σ²/τ, which can trap the solver between the initial guess
    // and the optimum. Start from several crossover offsets and keep the
    // lowest-cost solution.
    let opts = LmOptions::default();
    let sigma0 = p0[0].exp();
    let mut sol: Option<lm::LmSolution> = None;
    for t1_offset in [0.0, sigma0, 2.5 * sigma0] {
        let mut start = p0;
        start[2] = p0[2] + t1_offset;
        if let Ok(s) = lm::minimize(&residuals, &start, n, &opts) {
            if sol.as_ref().is_none_or(|best| s.cost < best.cost) {
                sol = Some(s);
            }
        }
    }
    let sol = sol.ok_or_else(|| FitError::FitDiverged("no start converged".into()))?;

    let params = DetectorResponse {
        sigma_ps: sol.params[0].exp(),
        t0_ps: sol.params[1] + shift,
        t1_ps: sol.params[2] + shift,
        tau_ps: sol.params[3].exp(),
        amplitude: sol.params[4].exp(),
    };
    let fwhm_ps = params
        .fwhm()
        .map_err(|e| FitError::FitDiverged(format!("fitted parameters have no FWHM: {e}")))?;
    Ok(FitResult {
        params,
        fwhm_ps,
        residual_norm: sol.cost.sqrt(),
        converged: true,
        iterations: sol.iterations,
    })
}

fn empirical_fwhm(hist: &Histogram, mode_idx: usize) -> f64 {
    let half = hist.counts[mode_idx] / 2.0;
    let mut left = hist.bin_centers[0];
    for i in (0..mode_idx).rev() {
        if hist.counts[i] < half {
            // linear interpolation between bins i and i+1
            let frac = (half - hist.counts[i]) / (hist.counts[i + 1] - hist.counts[i]);
            left = hist.bin_centers[i] + frac * hist.bin_width;
            break;
        }
    }
    let mut right = *hist.bin_centers.last().unwrap();
    for i in mode_idx + 1..hist.counts.len() {
        if hist.counts[i] < half {
            let frac = (hist.counts[i - 1] - half) / (hist.counts[i - 1] - hist.counts[i]);
            right = hist.bin_centers[i - 1] + frac * hist.bin_width;
            break;
        }
    }
    right - left
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::build_histogram;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn lageos_like() -> DetectorResponse<f64> {
        DetectorResponse::new(60.0, 0.0, 0.0, 200.0, 1.0).unwrap()
    }

    #[test]
    fn eval_at_gaussian_peak() {
        let r = DetectorResponse::new(60.0, 0.0, 100.0, 200.0, 2.5).unwrap();
        assert_eq!(r.eval(0.0), 2.5);
    }

    #[test]
    fn continuity_at_crossover() {
        let r = DetectorResponse::new(60.0, 0.0, 80.0, 200.0, 1.0).unwrap();
        let b = r.crossover_value();
        assert_relative_eq!(r.eval(80.0), b, max_relative = 1e-15);
        // one-sided limits approach b; the slope is O(1e-2)/ps on both sides,
        // so at eps = 1e-9 ps the deviation must stay below 1e-10
        let eps = 1e-9;
        assert!((r.eval(80.0 - eps) - b).abs() < 1e-10 * r.amplitude);
        assert!((r.eval(80.0 + eps) - b).abs() < 1e-10 * r.amplitude);
    }

    #[test]
    fn eval_on_exponential_branch_half_level() {
        // τ·ln2 = 138.6 ps past the crossover halves the value
        let r = lageos_like();
        assert_abs_diff_eq!(r.eval(138.6), 0.5, epsilon = 1e-3);
    }

    #[test]
    fn fwhm_pure_gaussian_limit() {
        let r = DetectorResponse::new(60.0, 0.0, 1e9, 200.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.fwhm().unwrap(), 2.0 * (2.0f64.ln() * 2.0).sqrt() * 60.0, epsilon = 0.2);
        assert_abs_diff_eq!(r.fwhm().unwrap(), 141.3, epsilon = 0.2);
    }

    #[test]
    fn fwhm_gaussian_plus_tail() {
        // analytic: 1.177σ + τ·ln2 = 70.6 + 138.6
        assert_abs_diff_eq!(lageos_like().fwhm().unwrap(), 209.2, epsilon = 0.3);
    }

    #[test]
    fn fwhm_monotone_in_tau() {
        let mut prev = 0.0;
        for tau in [50.0, 100.0, 200.0, 400.0, 800.0] {
            let r = DetectorResponse::new(60.0, 0.0, 0.0, tau, 1.0).unwrap();
            let w = r.fwhm().unwrap();
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn sample_mean_matches_quadrature() {
        let r = lageos_like();
        // Simpson quadrature of t·f(t)/∫f over a wide support
        let (lo, hi) = (-8.0 * r.sigma_ps, r.t1_ps + 40.0 * r.tau_ps);
        let n = 40_000;
        let h = (hi - lo) / n as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=n {
            let t = lo + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            num += w * t * r.eval(t);
            den += w * r.eval(t);
        }
        let expect_mean = num / den;

        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n_samp = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n_samp {
            let x = r.sample(&mut rng);
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n_samp as f64;
        let sd = (sum2 / n_samp as f64 - mean * mean).sqrt();
        let se = sd / (n_samp as f64).sqrt();
        assert!((mean - expect_mean).abs() < 3.0 * se, "mean {mean} expect {expect_mean} se {se}");
    }

    #[test]
    fn sample_pure_exponential_limit_ks() {
        // t1 far below t0: the Gaussian branch carries no mass
        let r = DetectorResponse::new(60.0, 0.0, -6000.0, 200.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 20_000usize;
        let mut xs: Vec<f64> = (0..n).map(|_| (r.sample(&mut rng) - r.t1_ps) / r.tau_ps).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let cdf = 1.0 - (-x).exp();
            d = d.max((cdf - i as f64 / n as f64).abs());
            d = d.max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        // KS critical value at alpha = 0.01
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn fit_recovers_exact_histogram() {
        let truth = DetectorResponse::new(60.0, 10.0, 40.0, 200.0, 950.0).unwrap();
        // fine bins: on a coarse grid the crossover time is weakly identified
        let centers: Vec<f64> = (-200..400).map(|i| i as f64 * 5.0).collect();
        let hist = Histogram {
            bin_width: 5.0,
            counts: centers.iter().map(|&c| truth.eval(c)).collect(),
            bin_centers: centers,
        };
        let fit = fit_response(&hist, None).unwrap();
        assert!(fit.converged);
        // the damping schedule terminates on relative cost change, so the
        // recovery is near-exact rather than machine-exact
        assert_relative_eq!(fit.params.sigma_ps, truth.sigma_ps, max_relative = 2e-3);
        assert_relative_eq!(fit.params.tau_ps, truth.tau_ps, max_relative = 2e-3);
        assert_relative_eq!(fit.params.amplitude, truth.amplitude, max_relative = 2e-3);
        assert_abs_diff_eq!(fit.params.t0_ps, truth.t0_ps, epsilon = 0.5);
        assert_abs_diff_eq!(fit.params.t1_ps, truth.t1_ps, epsilon = 0.5);
    }

    #[test]
    fn fit_is_shift_equivariant() {
        let truth = lageos_like();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..200_000).map(|_| truth.sample(&mut rng)).collect();
        let (h0, _) = build_histogram(&samples, 20.0, (-1000.0, 3000.0)).unwrap();
        let h1 = Histogram {
            bin_width: h0.bin_width,
            bin_centers: h0.bin_centers.iter().map(|c| c + 5000.0).collect(),
            counts: h0.counts.clone(),
        };
        let f0 = fit_response(&h0, None).unwrap();
        let f1 = fit_response(&h1, None).unwrap();
        assert_relative_eq!(f0.params.sigma_ps, f1.params.sigma_ps, max_relative = 1e-9);
        assert_relative_eq!(f0.params.tau_ps, f1.params.tau_ps, max_relative = 1e-9);
        assert_relative_eq!(f0.params.amplitude, f1.params.amplitude, max_relative = 1e-9);
        assert_abs_diff_eq!(f1.params.t0_ps - f0.params.t0_ps, 5000.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f1.params.t1_ps - f0.params.t1_ps, 5000.0, epsilon = 1e-6);
    }

    #[test]
    fn sample_fit_closed_loop() {
        let truth = lageos_like();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let samples: Vec<f64> = (0..1_000_000).map(|_| truth.sample(&mut rng)).collect();
        let (hist, dropped) = build_histogram(&samples, 20.0, (-2000.0, 6000.0)).unwrap();
        assert_eq!(dropped, 0);
        let fit = fit_response(&hist, None).unwrap();
        assert_relative_eq!(fit.params.sigma_ps, 60.0, max_relative = 0.05);
        assert_relative_eq!(fit.params.tau_ps, 200.0, max_relative = 0.05);
    }

    #[test]
    fn fit_rejects_degenerate_histogram() {
        let hist = Histogram {
            bin_width: 20.0,
            bin_centers: (0..20).map(|i| i as f64 * 20.0).collect(),
            counts: (0..20).map(|i| if i == 5 { 100.0 } else { 0.0 }).collect(),
        };
        assert!(matches!(fit_response(&hist, None), Err(FitError::DegenerateHistogram)));
    }
}
