//! Satellite pass geometry and expected photon arrival times.
//!
//! A pass is a 1-D range profile `R(t)`: either a straight-line constant-speed
//! flyby in closed form, or a cubic interpolant through externally supplied
//! `(t, R)` samples. Round-trip times solve the light-time equation by
//! fixed-point iteration, and [`ArrivalGenerator`] turns a pass plus a shutter
//! schedule into the (lazily evaluated) train of expected arrival times in
//! integer picoseconds.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{PS_PER_S, SPEED_OF_LIGHT};

#[derive(Debug, Error, PartialEq)]
pub enum PassError {
    #[error("time {t} s outside pass interval [{lo}, {hi}] s")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("invalid pass profile: {0}")]
    InvalidProfile(String),
}

/// Range profile of a satellite pass.
#[derive(Debug, Clone)]
pub enum PassModel<F: Float> {
    /// Straight-line flyby: `R(t) = sqrt(R_min² + v_t²·(t − t_ca)²)`.
    AnalyticFlyby {
        r_min_m: F,
        v_tangential_m_s: F,
        t_closest_s: F,
    },
    /// Cubic (not-a-knot) interpolant through `(t, R)` samples.
    SampledProfile(CubicProfile<F>),
}

impl<F: Float> PassModel<F> {
    pub fn analytic_flyby(r_min_m: F, v_tangential_m_s: F, t_closest_s: F) -> Result<Self, PassError> {
        if r_min_m <= F::zero() {
            return Err(PassError::InvalidProfile("R_min must be positive".into()));
        }
        Ok(PassModel::AnalyticFlyby { r_min_m, v_tangential_m_s, t_closest_s })
    }

    pub fn from_samples(samples: &[(F, F)]) -> Result<Self, PassError> {
        Ok(PassModel::SampledProfile(CubicProfile::new(samples)?))
    }

    /// Interval on which the model is defined, `None` if unbounded.
    pub fn domain(&self) -> Option<(F, F)> {
        match self {
            PassModel::AnalyticFlyby { .. } => None,
            PassModel::SampledProfile(p) => Some((p.x[0], p.x[p.x.len() - 1])),
        }
    }

    fn check_domain(&self, t: F) -> Result<(), PassError> {
        if let Some((lo, hi)) = self.domain() {
            if t < lo || t > hi {
                return Err(PassError::OutOfDomain {
                    t: t.to_f64().unwrap_or(f64::NAN),
                    lo: lo.to_f64().unwrap_or(f64::NAN),
                    hi: hi.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    /// Range `R(t)` in meters.
    pub fn range(&self, t: F) -> Result<F, PassError> {
        self.check_domain(t)?;
        Ok(match self {
            PassModel::AnalyticFlyby { r_min_m, v_tangential_m_s, t_closest_s } => {
                let dt = t - *t_closest_s;
                (*r_min_m * *r_min_m + *v_tangential_m_s * *v_tangential_m_s * dt * dt).sqrt()
            }
            PassModel::SampledProfile(p) => p.eval(t),
        })
    }

    /// Radial velocity `dR/dt` in m/s.
    pub fn radial_velocity(&self, t: F) -> Result<F, PassError> {
        self.check_domain(t)?;
        Ok(match self {
            PassModel::AnalyticFlyby { r_min_m, v_tangential_m_s, t_closest_s } => {
                let dt = t - *t_closest_s;
                let v2 = *v_tangential_m_s * *v_tangential_m_s;
                v2 * dt / (*r_min_m * *r_min_m + v2 * dt * dt).sqrt()
            }
            PassModel::SampledProfile(p) => p.deriv(t),
        })
    }

    /// Round-trip time for a pulse emitted at `t_emit`, seconds.
    ///
    /// Solves `t_bounce = t_emit + R(t_bounce)/c` with three fixed-point
    /// iterations; the contraction factor is `v_r/c ≈ 1e-5`, so the residual
    /// is far below a picosecond for MEO velocities.
    pub fn round_trip_time(&self, t_emit: F) -> Result<F, PassError> {
        let c = F::from(SPEED_OF_LIGHT).unwrap();
        let mut t_bounce = t_emit;
        for _ in 0..3 {
            t_bounce = t_emit + self.range(t_bounce)? / c;
        }
        Ok((t_bounce - t_emit) + self.range(t_bounce)? / c)
    }
}

/// Not-a-knot cubic spline through strictly increasing samples.
#[derive(Debug, Clone)]
pub struct CubicProfile<F: Float> {
    x: Vec<F>,
    y: Vec<F>,
    /// Second derivatives at the knots.
    m: Vec<F>,
}

impl<F: Float> CubicProfile<F> {
    pub fn new(samples: &[(F, F)]) -> Result<Self, PassError> {
        let n = samples.len();
        if n < 4 {
            return Err(PassError::InvalidProfile(format!(
                "need at least 4 samples, got {n}"
            )));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(PassError::InvalidProfile("sample times must be strictly increasing".into()));
            }
        }
        if samples.iter().any(|&(_, r)| r <= F::zero()) {
            return Err(PassError::InvalidProfile("range samples must be positive".into()));
        }
        let x: Vec<F> = samples.iter().map(|s| s.0).collect();
        let y: Vec<F> = samples.iter().map(|s| s.1).collect();
        let m = Self::second_derivatives(&x, &y);
        Ok(CubicProfile { x, y, m })
    }

    /// Solve for knot second derivatives with not-a-knot end conditions.
    ///
    /// The end conditions `M0 = (1+r)M1 − r M2` (r = h0/h1, and mirrored at
    /// the right end) are substituted into the first and last interior
    /// equations, keeping the system tridiagonal over `M1..M_{n-2}`.
    fn second_derivatives(x: &[F], y: &[F]) -> Vec<F> {
        let n = x.len();
        let six = F::from(6.0).unwrap();
        let three = F::from(3.0).unwrap();
        let h: Vec<F> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let d = |i: usize| (y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1];

        let k = n - 2; // unknowns M1..M_{n-2}
        let mut sub = vec![F::zero(); k];
        let mut diag = vec![F::zero(); k];
        let mut sup = vec![F::zero(); k];
        let mut rhs = vec![F::zero(); k];
        for (row, i) in (1..=n - 2).enumerate() {
            sub[row] = h[i - 1] / six;
            diag[row] = (h[i - 1] + h[i]) / three;
            sup[row] = h[i] / six;
            rhs[row] = d(i);
        }
        let r0 = h[0] / h[1];
        diag[0] = diag[0] + h[0] / six * (F::one() + r0);
        sup[0] = sup[0] - h[0] / six * r0;
        let r1 = h[n - 2] / h[n - 3];
        diag[k - 1] = diag[k - 1] + h[n - 2] / six * (F::one() + r1);
        sub[k - 1] = sub[k - 1] - h[n - 2] / six * r1;

        // Thomas algorithm.
        for i in 1..k {
            let w = sub[i] / diag[i - 1];
            diag[i] = diag[i] - w * sup[i - 1];
            rhs[i] = rhs[i] - w * rhs[i - 1];
        }
        let mut sol = vec![F::zero(); k];
        sol[k - 1] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            sol[i] = (rhs[i] - sup[i] * sol[i + 1]) / diag[i];
        }

        let mut m = vec![F::zero(); n];
        m[1..=n - 2].copy_from_slice(&sol);
        m[0] = (F::one() + r0) * m[1] - r0 * m[2];
        m[n - 1] = (F::one() + r1) * m[n - 2] - r1 * m[n - 3];
        m
    }

    fn segment(&self, t: F) -> usize {
        // Binary search for the interval containing t; t is already in domain.
        let mut lo = 0usize;
        let mut hi = self.x.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.x[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn eval(&self, t: F) -> F {
        let i = self.segment(t);
        let six = F::from(6.0).unwrap();
        let h = self.x[i + 1] - self.x[i];
        let a = self.x[i + 1] - t;
        let b = t - self.x[i];
        self.m[i] * a * a * a / (six * h)
            + self.m[i + 1] * b * b * b / (six * h)
            + (self.y[i] / h - self.m[i] * h / six) * a
            + (self.y[i + 1] / h - self.m[i + 1] * h / six) * b
    }

    pub fn deriv(&self, t: F) -> F {
        let i = self.segment(t);
        let two = F::from(2.0).unwrap();
        let six = F::from(6.0).unwrap();
        let h = self.x[i + 1] - self.x[i];
        let a = self.x[i + 1] - t;
        let b = t - self.x[i];
        -self.m[i] * a * a / (two * h)
            + self.m[i + 1] * b * b / (two * h)
            + (self.y[i + 1] - self.y[i]) / h
            - (self.m[i + 1] - self.m[i]) * h / six
    }
}

/// Shutter slot protocol: pulses transmitted in the tx window of every slot,
/// detections accepted only in the rx window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub rep_rate_hz: f64,
    pub slot_length_s: f64,
    /// (start, end) of the transmit window within a slot, seconds.
    pub tx_window_s: (f64, f64),
    /// (start, end) of the receive window within a slot, seconds.
    pub rx_window_s: (f64, f64),
    pub pass_duration_s: f64,
}

impl Default for PulseSchedule {
    fn default() -> Self {
        PulseSchedule {
            rep_rate_hz: 1e8,
            slot_length_s: 0.100,
            tx_window_s: (0.0, 0.040),
            rx_window_s: (0.050, 0.090),
            pass_duration_s: 100.0,
        }
    }
}

impl PulseSchedule {
    pub fn validate(&self) -> Result<(), PassError> {
        let bad = |m: &str| Err(PassError::InvalidProfile(m.into()));
        if !(self.rep_rate_hz > 0.0 && self.slot_length_s > 0.0 && self.pass_duration_s > 0.0) {
            return bad("rep rate, slot length and pass duration must be positive");
        }
        let (t0, t1) = self.tx_window_s;
        let (r0, r1) = self.rx_window_s;
        if !(t0 < t1 && r0 < r1) || t0 < 0.0 || r0 < 0.0 || t1 > self.slot_length_s || r1 > self.slot_length_s {
            return bad("tx/rx windows must be nonempty and inside [0, slot_length)");
        }
        if t1 > r0 && r1 > t0 {
            return bad("tx and rx windows must be disjoint");
        }
        Ok(())
    }

    /// Pulses emitted per slot: `rep_rate · tx_window_length`, rounded.
    pub fn pulses_per_slot(&self) -> u64 {
        (self.rep_rate_hz * (self.tx_window_s.1 - self.tx_window_s.0)).round() as u64
    }

    pub fn slots(&self) -> u64 {
        let x = self.pass_duration_s / self.slot_length_s;
        // tolerate float representation error for near-integer ratios
        if (x - x.round()).abs() < 1e-9 {
            x.round() as u64
        } else {
            x.floor() as u64
        }
    }

    /// Receive window open fraction of wall time.
    pub fn rx_duty(&self) -> f64 {
        (self.rx_window_s.1 - self.rx_window_s.0) / self.slot_length_s
    }
}

/// An expected arrival: pulse index over the whole pass and reference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpectedArrival {
    pub pulse_index: u64,
    pub t_ref_ps: i64,
}

/// Lazy provider of expected arrival times for every transmitted pulse.
///
/// A 100 s pass at defaults holds 4×10⁹ pulses, so arrivals are computed on
/// demand from the (slot, pulse) index rather than materialized. Arrival
/// times are strictly increasing in the pulse index.
pub struct ArrivalGenerator<'a> {
    model: &'a PassModel<f64>,
    sched: &'a PulseSchedule,
    slot_ps: i64,
}

impl<'a> ArrivalGenerator<'a> {
    pub fn new(model: &'a PassModel<f64>, sched: &'a PulseSchedule) -> Result<Self, PassError> {
        sched.validate()?;
        let slot_ps_f = sched.slot_length_s * PS_PER_S;
        if (slot_ps_f - slot_ps_f.round()).abs() > 1e-3 {
            return Err(PassError::InvalidProfile("slot length must be an integer number of picoseconds".into()));
        }
        Ok(ArrivalGenerator { model, sched, slot_ps: slot_ps_f.round() as i64 })
    }

    pub fn schedule(&self) -> &PulseSchedule {
        self.sched
    }

    pub fn pass(&self) -> &PassModel<f64> {
        self.model
    }

    pub fn len(&self) -> u64 {
        self.sched.slots() * self.sched.pulses_per_slot()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Emission time of pulse `n`, seconds from pass start.
    pub fn emit_time_s(&self, n: u64) -> f64 {
        let p = self.sched.pulses_per_slot();
        let slot = n / p;
        let j = n % p;
        slot as f64 * self.sched.slot_length_s + self.emit_rel_s(j)
    }

    fn emit_rel_s(&self, j: u64) -> f64 {
        self.sched.tx_window_s.0 + j as f64 / self.sched.rep_rate_hz
    }

    /// Arrival time of pulse `n` relative to its emission slot start, in
    /// floating-point picoseconds. Kept slot-relative so that consecutive
    /// spacings retain sub-0.1 ps precision over a long pass.
    pub fn arrival_rel_ps(&self, n: u64) -> Result<(u64, f64), PassError> {
        let p = self.sched.pulses_per_slot();
        let slot = n / p;
        let j = n % p;
        let rel = self.emit_rel_s(j);
        let t_emit = slot as f64 * self.sched.slot_length_s + rel;
        let rtt = self.model.round_trip_time(t_emit)?;
        Ok((slot, (rel + rtt) * PS_PER_S))
    }

    /// Arrival time of pulse `n` in integer picoseconds (ties to even).
    pub fn arrival_ps(&self, n: u64) -> Result<i64, PassError> {
        let (slot, rel_ps) = self.arrival_rel_ps(n)?;
        Ok(slot as i64 * self.slot_ps + rel_ps.round_ties_even() as i64)
    }

    /// Index of the arrival nearest to `t_ps`; ties go to the earlier pulse.
    pub fn nearest(&self, t_ps: i64) -> Result<ExpectedArrival, PassError> {
        let len = self.len();
        if len == 0 {
            return Err(PassError::InvalidProfile("empty schedule".into()));
        }
        // partition point: first n with arrival(n) >= t_ps
        let mut lo = 0u64;
        let mut hi = len;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.arrival_ps(mid)? < t_ps {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let cand = if lo == 0 {
            lo
        } else if lo == len {
            len - 1
        } else {
            let after = self.arrival_ps(lo)?;
            let before = self.arrival_ps(lo - 1)?;
            // tie broken toward the earlier arrival
            if (after - t_ps) < (t_ps - before) {
                lo
            } else {
                lo - 1
            }
        };
        Ok(ExpectedArrival { pulse_index: cand, t_ref_ps: self.arrival_ps(cand)? })
    }

    /// Number of arrivals with `t_ref_ps` in `[lo_ps, hi_ps)`.
    pub fn count_arrivals_in(&self, lo_ps: i64, hi_ps: i64) -> Result<u64, PassError> {
        if hi_ps <= lo_ps {
            return Ok(0);
        }
        Ok(self.first_at_or_after(hi_ps)? - self.first_at_or_after(lo_ps)?)
    }

    fn first_at_or_after(&self, t_ps: i64) -> Result<u64, PassError> {
        let len = self.len();
        let mut lo = 0u64;
        let mut hi = len;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.arrival_ps(mid)? < t_ps {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// Number of arrivals landing inside an rx window with `t_ref_ps` in
    /// `[lo_ps, hi_ps)`.
    pub fn count_rx_arrivals_in(&self, lo_ps: i64, hi_ps: i64) -> Result<u64, PassError> {
        if self.is_empty() {
            return Ok(0);
        }
        let rx0 = (self.sched.rx_window_s.0 * PS_PER_S).round() as i64;
        let rx1 = (self.sched.rx_window_s.1 * PS_PER_S).round() as i64;
        // Clamp to the span actually covered by arrivals.
        let lo_ps = lo_ps.max(self.arrival_ps(0)?);
        let hi_ps = hi_ps.min(self.arrival_ps(self.len() - 1)? + 1);
        let mut total = 0u64;
        let mut slot = (lo_ps.max(0) / self.slot_ps).max(0);
        loop {
            let base = slot * self.slot_ps;
            if base >= hi_ps {
                break;
            }
            let a = (base + rx0).max(lo_ps);
            let b = (base + rx1).min(hi_ps);
            total += self.count_arrivals_in(a, b)?;
            slot += 1;
        }
        Ok(total)
    }

    /// Materialize every expected arrival. Only sensible for short passes or
    /// coarse schedules; the full default pass holds 4×10⁹ pulses.
    pub fn materialize(&self) -> Result<Vec<ExpectedArrival>, PassError> {
        let mut out = Vec::with_capacity(self.len() as usize);
        for n in 0..self.len() {
            out.push(ExpectedArrival { pulse_index: n, t_ref_ps: self.arrival_ps(n)? });
        }
        Ok(out)
    }
}

/// All expected arrivals for a pass as a sorted list of integer picoseconds.
pub fn expected_arrivals(
    model: &PassModel<f64>,
    sched: &PulseSchedule,
) -> Result<Vec<ExpectedArrival>, PassError> {
    ArrivalGenerator::new(model, sched)?.materialize()
}

/// Read a sampled range profile from CSV with header `t_s,range_m`.
pub fn read_profile_csv(path: &std::path::Path) -> Result<PassModel<f64>, crate::timetag_sim::FormatError> {
    use crate::timetag_sim::FormatError;
    let text = std::fs::read_to_string(path).map_err(|e| FormatError {
        line: 0,
        reason: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "t_s,range_m")) => {}
        _ => return Err(FormatError { line: 1, reason: "expected header `t_s,range_m`".into() }),
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| FormatError { line: lineno, reason: "expected two comma-separated fields".into() })?;
        let t: f64 = a.trim().parse().map_err(|e| FormatError { line: lineno, reason: format!("bad t_s: {e}") })?;
        let r: f64 = b.trim().parse().map_err(|e| FormatError { line: lineno, reason: format!("bad range_m: {e}") })?;
        samples.push((t, r));
    }
    PassModel::from_samples(&samples).map_err(|e| FormatError { line: 0, reason: e.to_string() })
}
