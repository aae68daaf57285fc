//! Decentralized participation-threshold control law.
//!
//! Every device (and the coordinator, for fleet-level what-if queries)
//! evaluates the same pure functions: deadband/saturation shaping of the
//! frequency deviation, a windowed RoCoF estimate, and the threshold
//! `eta` that a packet timer must reach before the device participates in
//! frequency response.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Parameters of the local control law.
///
/// `k_p` is not stored: it is always `1 / (f_max - f_db)` and is recomputed
/// on demand so the two can never drift apart.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlParams {
    /// Deadband [Hz]; no response below this deviation.
    pub f_db: f64,
    /// Full-participation deviation [Hz].
    pub f_max: f64,
    /// Floor of the threshold; the fraction of the timer locked out of
    /// frequency response.
    pub eta_min: f64,
    /// Derivative (RoCoF) gain [s/Hz as applied to Hz/s].
    pub k_d: f64,
    /// RoCoF estimation window [s].
    pub alpha_w: f64,
    /// First-order low-pass time constant on the RoCoF estimate [s];
    /// 0 disables filtering.
    pub t_d: f64,
    /// Seconds of continuous |Δf| < f_db before an event is declared over.
    pub event_hold_s: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            f_db: 0.036,
            f_max: 0.200,
            eta_min: 0.0,
            k_d: 2.0,
            alpha_w: 0.5,
            t_d: 0.0,
            event_hold_s: 30.0,
        }
    }
}

impl ControlParams {
    /// Proportional gain, `1 / (f_max - f_db)`.
    pub fn k_p(&self) -> f64 {
        1.0 / (self.f_max - self.f_db)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_db > 0.0 && self.f_db < self.f_max) {
            return Err(Error::ConfigParse(format!(
                "require 0 < f_db < f_max, got f_db={} f_max={}",
                self.f_db, self.f_max
            )));
        }
        if !(0.0..1.0).contains(&self.eta_min) {
            return Err(Error::ConfigParse(format!(
                "eta_min must be in [0, 1), got {}",
                self.eta_min
            )));
        }
        if self.alpha_w <= 0.0 || self.t_d < 0.0 || self.k_d < 0.0 {
            return Err(Error::ConfigParse(
                "alpha_w must be > 0, t_d and k_d must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Deadband/saturation shaping of the frequency deviation.
///
/// Zero inside the deadband, `|x| - f_db` between deadband and `f_max`, and
/// clamped at `f_max - f_db` beyond (so the eta law's third branch takes
/// over consistently).
pub fn g1(delta_f: f64, p: &ControlParams) -> f64 {
    let a = delta_f.abs();
    if a <= p.f_db {
        0.0
    } else {
        (a - p.f_db).min(p.f_max - p.f_db)
    }
}

/// Threshold shaping: `min(max(-|x| + 1, eta_min), 1)`.
pub fn g2(x: f64, p: &ControlParams) -> f64 {
    (-x.abs() + 1.0).max(p.eta_min).min(1.0)
}

/// The participation threshold.
///
/// `rocof_val` is the (optionally filtered) discrete derivative of the
/// shaped deviation `g1(Δf)`, as produced by [`EffectiveSignal`].
pub fn eta(delta_f: f64, rocof_val: f64, p: &ControlParams) -> f64 {
    let a = delta_f.abs();
    if a < p.f_db {
        1.0
    } else if a <= p.f_max {
        g2(p.k_p() * g1(delta_f, p) + p.k_d * rocof_val, p)
    } else {
        p.eta_min
    }
}

/// Upper bound on the derivative gain so that `eta` never dips below
/// `eta_min` for a contingency with the given nadir deviation and maximum
/// RoCoF.
pub fn max_kd(eta_min: f64, f_nadir: f64, r_max: f64, p: &ControlParams) -> Result<f64> {
    if !(f_nadir > p.f_db && f_nadir <= p.f_max) {
        return Err(Error::NadirOutOfRange(f_nadir));
    }
    if r_max <= 0.0 {
        return Err(Error::NadirOutOfRange(f_nadir));
    }
    Ok((1.0 - (f_nadir - p.f_db) / (p.f_max - p.f_db) - eta_min) / r_max)
}

/// Ring buffer of timestamped frequency samples for the windowed RoCoF
/// estimate.
#[derive(Debug, Clone, Default)]
pub struct FreqWindow {
    samples: VecDeque<(f64, f64)>,
}

impl FreqWindow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a sample; timestamps must be non-decreasing.
    pub fn push(&mut self, time_s: f64, freq_hz: f64) {
        if let Some(&(last, _)) = self.samples.back() {
            debug_assert!(time_s >= last, "timestamps must be monotone");
        }
        self.samples.push_back((time_s, freq_hz));
    }

    /// Drop samples older than `keep_s` seconds before the newest.
    pub fn trim(&mut self, keep_s: f64) {
        let Some(&(newest, _)) = self.samples.back() else {
            return;
        };
        while let Some(&(t, _)) = self.samples.front() {
            // Keep one sample at or beyond the horizon so the window always
            // spans it once filled.
            if t < newest - keep_s
                && self.samples.get(1).is_some_and(|&(t1, _)| t1 <= newest - keep_s)
            {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn span(&self) -> f64 {
        match (self.samples.front(), self.samples.back()) {
            (Some(&(t0, _)), Some(&(t1, _))) => t1 - t0,
            _ => 0.0,
        }
    }

    /// Backward difference over `alpha_w`: `(f[k] - f[k - alpha_w/dt]) / alpha_w`.
    ///
    /// Errors until the window spans `alpha_w`; callers that poll every step
    /// treat that as zero with a logged warning.
    pub fn rocof(&self, alpha_w: f64) -> Result<f64> {
        let have = self.span();
        if have + 1e-12 < alpha_w {
            return Err(Error::InsufficientHistory {
                have,
                need: alpha_w,
            });
        }
        let &(t_new, f_new) = self.samples.back().expect("span > 0 implies non-empty");
        let target = t_new - alpha_w;
        // Oldest sample at or before the target time; samples are uniform in
        // practice so this lands exactly on the lagged sample.
        let mut old = *self.samples.front().expect("non-empty");
        for &(t, f) in self.samples.iter() {
            if t <= target + 1e-9 {
                old = (t, f);
            } else {
                break;
            }
        }
        Ok((f_new - old.1) / alpha_w)
    }
}

/// First-order low-pass with time constant `t_d`; `t_d = 0` passes through.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowPass {
    state: Option<f64>,
}

impl LowPass {
    pub fn step(&mut self, input: f64, dt: f64, t_d: f64) -> f64 {
        if t_d <= 0.0 {
            self.state = Some(input);
            return input;
        }
        let prev = self.state.unwrap_or(input);
        let a = (-dt / t_d).exp();
        let out = input + (prev - input) * a;
        self.state = Some(out);
        out
    }
}

/// Shaped-deviation pipeline shared by all devices observing one signal:
/// quantize -> g1 -> windowed difference -> low-pass.
///
/// Devices with different actuation delays read lagged values of the same
/// pipeline, so one instance serves an entire co-located fleet.
#[derive(Debug, Clone)]
pub struct EffectiveSignal {
    window: FreqWindow,
    filter: LowPass,
    params: ControlParams,
    dt: f64,
}

impl EffectiveSignal {
    pub fn new(params: ControlParams, dt: f64) -> Self {
        Self {
            window: FreqWindow::new(),
            filter: LowPass::default(),
            params,
            dt,
        }
    }

    /// Feed one quantized frequency deviation sample; returns the filtered
    /// derivative of the shaped deviation (zero while the window fills).
    pub fn step(&mut self, time_s: f64, delta_f: f64) -> f64 {
        let f_eff = g1(delta_f, &self.params);
        self.window.push(time_s, f_eff);
        self.window.trim(self.params.alpha_w + self.dt);
        let raw = self.window.rocof(self.params.alpha_w).unwrap_or(0.0);
        self.filter.step(raw, self.dt, self.params.t_d)
    }
}
