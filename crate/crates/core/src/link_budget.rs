//! Retroreflector downlink budget, atmospheric transmittance, lognormal
//! fading and the upgrade-scenario projector.
//!
//! The downlink chain is `μ_rec = μ_sat · T_diff · T_A · η_rx · η_det`, with
//! the diffraction transmittance `T_diff = A_tel/(Ω R²)` in the top-hat
//! far-field approximation and the retroreflector solid angle
//! `Ω = 4π·A_CCR·ρ·N_eff/Σ`. Atmospheric turbulence enters as a unit-mean
//! lognormal transmissivity multiplier.

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("transmittance chain underflowed to zero")]
    DivisionDegenerate,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Atmospheric transmittance model. The fixed mode returns the zenith value
/// as-is; the zenith-scaled mode applies a Beer–Lambert airmass exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AtmosphereModel<F: Float> {
    Fixed { t_zenith: F },
    ZenithScaled { t_zenith: F, zenith_angle_rad: F },
}

impl<F: Float> AtmosphereModel<F> {
    pub fn validate(&self) -> Result<(), BudgetError> {
        let (t, angle) = match self {
            AtmosphereModel::Fixed { t_zenith } => (*t_zenith, F::zero()),
            AtmosphereModel::ZenithScaled { t_zenith, zenith_angle_rad } => (*t_zenith, *zenith_angle_rad),
        };
        if t <= F::zero() || t > F::one() {
            return Err(BudgetError::InvalidParams("T_zenith must be in (0, 1]".into()));
        }
        if angle < F::zero() || angle.to_f64().unwrap_or(f64::NAN) >= 85f64.to_radians() {
            return Err(BudgetError::InvalidParams("zenith angle must be in [0°, 85°)".into()));
        }
        Ok(())
    }

    pub fn transmittance(&self) -> F {
        match self {
            AtmosphereModel::Fixed { t_zenith } => *t_zenith,
            AtmosphereModel::ZenithScaled { t_zenith, zenith_angle_rad } => {
                t_zenith.powf(F::one() / zenith_angle_rad.cos())
            }
        }
    }
}

/// Downlink budget constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams<F: Float> {
    /// Retroreflector array cross-section Σ, m².
    pub sigma_cross_section_m2: F,
    /// Single corner-cube reflective area, m².
    pub a_ccr_m2: F,
    /// Corner-cube reflectance at normal incidence.
    pub rho_ccr: F,
    /// Effective number of corner cubes averaged over orientations.
    pub n_eff: F,
    /// Receiving telescope area, m².
    pub a_tel_m2: F,
    /// Transmission of the receiving apparatus.
    pub eta_rx: F,
    /// Detector efficiency.
    pub eta_det: F,
    pub atmosphere: AtmosphereModel<F>,
}

impl Default for BudgetParams<f64> {
    fn default() -> Self {
        BudgetParams {
            sigma_cross_section_m2: 15e6,
            a_ccr_m2: 11.4e-4,
            rho_ccr: 0.89,
            n_eff: 9.88,
            a_tel_m2: std::f64::consts::PI * 0.75 * 0.75,
            eta_rx: 0.13,
            eta_det: 0.5,
            atmosphere: AtmosphereModel::Fixed { t_zenith: 0.7 },
        }
    }
}

/// Diffraction transmittance, flagged when the geometric formula had to be
/// clamped to unity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmittance<F> {
    pub value: F,
    pub clamped: bool,
}

impl<F: Float> BudgetParams<F> {
    pub fn validate(&self) -> Result<(), BudgetError> {
        let pos = [
            self.sigma_cross_section_m2,
            self.a_ccr_m2,
            self.rho_ccr,
            self.n_eff,
            self.a_tel_m2,
        ];
        if pos.iter().any(|&v| v <= F::zero()) {
            return Err(BudgetError::InvalidParams("all budget fields must be positive".into()));
        }
        for eta in [self.eta_rx, self.eta_det] {
            if eta <= F::zero() || eta > F::one() {
                return Err(BudgetError::InvalidParams("efficiencies must be in (0, 1]".into()));
            }
        }
        self.atmosphere.validate()
    }

    /// Far-field solid angle `Ω = 4π·A_CCR·ρ·N_eff/Σ`, steradians.
    pub fn solid_angle_sr(&self) -> F {
        let four_pi = F::from(4.0 * std::f64::consts::PI).unwrap();
        four_pi * self.a_ccr_m2 * self.rho_ccr * self.n_eff / self.sigma_cross_section_m2
    }

    /// Equivalent full-angle aperture `2·sqrt(Ω/π)`, radians.
    pub fn equivalent_aperture_rad(&self) -> F {
        let pi = F::from(std::f64::consts::PI).unwrap();
        let two = F::from(2.0).unwrap();
        two * (self.solid_angle_sr() / pi).sqrt()
    }

    /// `T_diff = A_tel/(Ω R²)`, clamped to 1 where the top-hat geometry would
    /// exceed unity.
    pub fn diffraction_transmittance(&self, range_m: F) -> Transmittance<F> {
        let raw = self.a_tel_m2 / (self.solid_angle_sr() * range_m * range_m);
        if raw > F::one() {
            Transmittance { value: F::one(), clamped: true }
        } else {
            Transmittance { value: raw, clamped: false }
        }
    }

    fn chain(&self, range_m: F) -> F {
        self.diffraction_transmittance(range_m).value
            * self.atmosphere.transmittance()
            * self.eta_rx
            * self.eta_det
    }

    /// Mean photons per pulse at the detector for `mu_sat` photons per pulse
    /// leaving the satellite.
    pub fn mu_received(&self, range_m: F, mu_sat: F) -> F {
        mu_sat * self.chain(range_m)
    }

    /// Mean photons per pulse at the satellite inferred from `mu_rec`.
    pub fn mu_sat_estimate(&self, range_m: F, mu_rec: F) -> Result<F, BudgetError> {
        let chain = self.chain(range_m);
        if chain <= F::zero() {
            return Err(BudgetError::DivisionDegenerate);
        }
        Ok(mu_rec / chain)
    }
}

/// Lognormal fading of the channel transmissivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingModel<F: Float> {
    pub ln_mu: F,
    pub ln_sigma: F,
}

impl<F: Float> FadingModel<F> {
    pub fn new(ln_mu: F, ln_sigma: F) -> Result<Self, BudgetError> {
        if ln_sigma <= F::zero() {
            return Err(BudgetError::InvalidParams("ln_sigma must be positive".into()));
        }
        Ok(FadingModel { ln_mu, ln_sigma })
    }

    /// Lognormal density `1/(xσ√2π)·exp(−(ln x − μ)²/(2σ²))`.
    pub fn pdf(&self, x: F) -> Result<F, BudgetError> {
        if x <= F::zero() {
            return Err(BudgetError::DomainError("lognormal support is x > 0".into()));
        }
        let two = F::from(2.0).unwrap();
        let sqrt_2pi = F::from((2.0 * std::f64::consts::PI).sqrt()).unwrap();
        let z = x.ln() - self.ln_mu;
        Ok((-(z * z) / (two * self.ln_sigma * self.ln_sigma)).exp() / (x * self.ln_sigma * sqrt_2pi))
    }

    /// Scintillation index `exp(σ²) − 1`.
    pub fn scintillation_index(&self) -> F {
        (self.ln_sigma * self.ln_sigma).exp() - F::one()
    }

    /// Mean of the lognormal, `exp(μ + σ²/2)`.
    pub fn mean(&self) -> F {
        let two = F::from(2.0).unwrap();
        (self.ln_mu + self.ln_sigma * self.ln_sigma / two).exp()
    }
}

impl FadingModel<f64> {
    /// Draw a unit-mean transmissivity multiplier: `L/E[L]` for
    /// `L ~ LN(μ, σ)`. The normalization leaves the budgeted mean link
    /// unchanged, so the scale parameter μ has no effect here.
    pub fn sample_transmissivity_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.ln_sigma * z - self.ln_sigma * self.ln_sigma / 2.0).exp()
    }
}

/// Measured baseline for scenario projection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PassSummary {
    pub rate_cps: f64,
    pub snr: f64,
    pub mu_sat: f64,
    pub eta_rx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundMode {
    /// Background dominated by dark counts: independent of η_rx.
    DarkDominated,
    /// Background scales with η_rx (sky photons through the receiver).
    ScalesWithEtaRx,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScenarioChanges {
    pub diffraction_gain_db: f64,
    pub eta_rx_new: f64,
    pub mu_sat_new: f64,
    pub background_mode: BackgroundMode,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProjectedLink {
    pub rate_cps: f64,
    pub snr: f64,
}

/// Project a measured link onto an improvement scenario.
///
/// `rate' = rate · (μ'/μ) · 10^(gain/10) · (η'/η)`. The SNR scales with the
/// rate when the background is dark-dominated; when the background follows
/// η_rx, the η factor cancels out of the SNR.
pub fn project_scenario(base: &PassSummary, changes: &ScenarioChanges) -> Result<ProjectedLink, BudgetError> {
    if base.rate_cps <= 0.0 || base.snr <= 0.0 || base.mu_sat <= 0.0 || base.eta_rx <= 0.0 {
        return Err(BudgetError::InvalidScenario("base summary must be positive".into()));
    }
    if changes.mu_sat_new <= 0.0 || changes.eta_rx_new <= 0.0 {
        return Err(BudgetError::InvalidScenario("scenario μ_sat and η_rx must be positive".into()));
    }
    let gain = 10f64.powf(changes.diffraction_gain_db / 10.0);
    let eta_ratio = changes.eta_rx_new / base.eta_rx;
    let factor = (changes.mu_sat_new / base.mu_sat) * gain * eta_ratio;
    let rate = base.rate_cps * factor;
    let snr = match changes.background_mode {
        BackgroundMode::DarkDominated => base.snr * factor,
        BackgroundMode::ScalesWithEtaRx => base.snr * factor / eta_ratio,
    };
    Ok(ProjectedLink { rate_cps: rate, snr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn solid_angle_paper_constants() {
        let p = BudgetParams::default();
        assert_relative_eq!(p.solid_angle_sr(), 8.40e-9, max_relative = 2e-3);
        // equivalent full-angle aperture ≈ 103 µrad
        assert_abs_diff_eq!(p.equivalent_aperture_rad() * 1e6, 103.0, epsilon = 1.0);
        let doubled = BudgetParams { n_eff: 2.0 * p.n_eff, ..p };
        assert_relative_eq!(doubled.solid_angle_sr(), 2.0 * p.solid_angle_sr(), max_relative = 1e-15);
    }

    #[test]
    fn diffraction_loss_55_db_at_8200_km() {
        let p = BudgetParams::default();
        let t = p.diffraction_transmittance(8.2e6);
        assert!(!t.clamped);
        assert_relative_eq!(t.value, 3.13e-6, max_relative = 0.01);
        assert_abs_diff_eq!(10.0 * t.value.log10(), -55.0, epsilon = 0.1);
        // inverse-square
        let t2 = p.diffraction_transmittance(2.0 * 8.2e6);
        assert_relative_eq!(t2.value, t.value / 4.0, max_relative = 1e-12);
        // unclamped identity T·Ω·R² = A_tel
        assert_relative_eq!(t.value * p.solid_angle_sr() * 8.2e6 * 8.2e6, p.a_tel_m2, max_relative = 1e-12);
    }

    #[test]
    fn diffraction_clamps_at_tiny_range() {
        let p = BudgetParams::default();
        let t = p.diffraction_transmittance(1.0);
        assert_eq!(t.value, 1.0);
        assert!(t.clamped);
    }

    #[test]
    fn mu_received_direct_arithmetic() {
        let p = BudgetParams::default();
        assert_eq!(p.mu_received(8.2e6, 0.0), 0.0);
        // 16·3.13e-6·0.7·0.13·0.5 = 2.28e-6
        assert_relative_eq!(p.mu_received(8.2e6, 16.0), 2.28e-6, max_relative = 0.01);
        // round trip
        let mu = p.mu_received(8.2e6, 16.0);
        assert_relative_eq!(p.mu_sat_estimate(8.2e6, mu).unwrap(), 16.0, max_relative = 1e-12);
        // linearity
        assert_relative_eq!(
            p.mu_sat_estimate(8.2e6, 2.0 * mu).unwrap(),
            32.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn mu_received_monotone_in_efficiencies() {
        let p = BudgetParams::default();
        let base = p.mu_received(8.2e6, 16.0);
        for f in [0.9, 0.5, 0.1] {
            let q = BudgetParams { eta_rx: p.eta_rx * f, ..p };
            assert_relative_eq!(q.mu_received(8.2e6, 16.0), base * f, max_relative = 1e-12);
        }
    }

    #[test]
    fn zenith_scaled_atmosphere() {
        let a = AtmosphereModel::ZenithScaled { t_zenith: 0.7f64, zenith_angle_rad: 60f64.to_radians() };
        a.validate().unwrap();
        assert_relative_eq!(a.transmittance(), 0.7f64.powf(2.0), max_relative = 1e-12);
        let bad = AtmosphereModel::ZenithScaled { t_zenith: 0.7f64, zenith_angle_rad: 89f64.to_radians() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lognormal_pdf_median_and_normalization() {
        let f = FadingModel::new(4.7f64, 1.4).unwrap();
        let median = 4.7f64.exp();
        assert_relative_eq!(
            f.pdf(median).unwrap(),
            1.0 / (median * 1.4 * (2.0 * std::f64::consts::PI).sqrt()),
            max_relative = 1e-12
        );
        assert!(f.pdf(0.0).is_err());
        // quadrature of the pdf in log space: x = e^u, ∫pdf·e^u du
        let n = 200_000;
        let (ulo, uhi) = (4.7 - 12.0 * 1.4, 4.7 + 12.0 * 1.4);
        let h = (uhi - ulo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let u = ulo + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * f.pdf(u.exp()).unwrap() * u.exp();
        }
        total *= h / 3.0;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn scintillation_index_values() {
        let f = FadingModel::new(4.7f64, 1.4).unwrap();
        assert_abs_diff_eq!(f.scintillation_index(), 6.10, epsilon = 0.01);
        let tiny = FadingModel::new(0.0f64, 1e-9).unwrap();
        assert_abs_diff_eq!(tiny.scintillation_index(), 0.0, epsilon = 1e-12);
        // SI independent of ln_mu
        let g = FadingModel::new(-3.0f64, 1.4).unwrap();
        assert_eq!(f.scintillation_index(), g.scintillation_index());
    }

    #[test]
    fn transmissivity_factor_unit_mean_and_si() {
        let f = FadingModel::new(4.7f64, 1.4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = f.sample_transmissivity_factor(&mut rng);
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 0.01);
        let var = sum2 / n as f64 - mean * mean;
        let si = var / (mean * mean);
        assert_relative_eq!(si, f.scintillation_index(), max_relative = 0.10);

        let calm = FadingModel::new(0.0f64, 1e-12).unwrap();
        assert_abs_diff_eq!(calm.sample_transmissivity_factor(&mut rng), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn scenario_paper_projection() {
        let base = PassSummary { rate_cps: 210.0, snr: 7.0, mu_sat: 16.0, eta_rx: 0.13 };
        let changes = ScenarioChanges {
            diffraction_gain_db: 20.0,
            eta_rx_new: 1.0,
            mu_sat_new: 1.0,
            background_mode: BackgroundMode::DarkDominated,
        };
        let out = project_scenario(&base, &changes).unwrap();
        assert_relative_eq!(out.rate_cps, 10_096.0, max_relative = 0.005);
        assert_relative_eq!(out.snr, 336.5, max_relative = 0.005);
    }

    #[test]
    fn scenario_identity_and_single_factor() {
        let base = PassSummary { rate_cps: 210.0, snr: 7.0, mu_sat: 16.0, eta_rx: 0.13 };
        let id = ScenarioChanges {
            diffraction_gain_db: 0.0,
            eta_rx_new: 0.13,
            mu_sat_new: 16.0,
            background_mode: BackgroundMode::DarkDominated,
        };
        let out = project_scenario(&base, &id).unwrap();
        assert_relative_eq!(out.rate_cps, 210.0, max_relative = 1e-12);
        assert_relative_eq!(out.snr, 7.0, max_relative = 1e-12);

        let g10 = ScenarioChanges { diffraction_gain_db: 10.0, ..id };
        let out = project_scenario(&base, &g10).unwrap();
        assert_relative_eq!(out.rate_cps, 2100.0, max_relative = 1e-12);
        assert_relative_eq!(out.snr, 70.0, max_relative = 1e-12);

        let bad = ScenarioChanges { mu_sat_new: -1.0, ..id };
        assert!(project_scenario(&base, &bad).is_err());
    }

    #[test]
    fn eta_scaled_background_cancels_eta_in_snr() {
        let base = PassSummary { rate_cps: 100.0, snr: 5.0, mu_sat: 16.0, eta_rx: 0.13 };
        let changes = ScenarioChanges {
            diffraction_gain_db: 0.0,
            eta_rx_new: 0.26,
            mu_sat_new: 16.0,
            background_mode: BackgroundMode::ScalesWithEtaRx,
        };
        let out = project_scenario(&base, &changes).unwrap();
        assert_relative_eq!(out.rate_cps, 200.0, max_relative = 1e-12);
        assert_relative_eq!(out.snr, 5.0, max_relative = 1e-12);
    }
}
