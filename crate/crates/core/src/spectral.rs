//! Offline analytics: Fourier decomposition of AGC regulation samples,
//! closed-form statistics of accepted-packet power under the minimize
//! policy, concentration-style safety factors, the probabilistic lower
//! bound on synthetic damping, and the regulation-vs-FFR revenue trade-off.

use crate::control::ControlParams;
use crate::error::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One retained harmonic of the AGC decomposition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Harmonic {
    /// Harmonic index (multiple of the fundamental).
    pub h: usize,
    /// Normalized coefficient in [-1, 1].
    pub c: f64,
    /// Phase [rad].
    pub phi: f64,
}

/// Spectral model of a regulation signal:
/// `AGC[k] ≈ A · Σ_h c_h cos(2π h f0 k dt − φ_h)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicModel {
    pub harmonics: Vec<Harmonic>,
    /// Fundamental frequency [Hz], `1 / period_s`.
    pub f0: f64,
    /// Fundamental period T [s].
    pub period_s: f64,
    /// Amplitude A [MW]; coefficients are normalized so max |c_h| = 1.
    pub amplitude_mw: f64,
    /// Power set-point the fleet tracks [MW].
    pub p_nom_mw: f64,
    /// Coordination step Δt [s].
    pub dt_s: f64,
}

impl HarmonicModel {
    pub fn n_samples_per_period(&self) -> usize {
        (self.period_s / self.dt_s).round() as usize
    }

    /// AGC deviation [MW] at sample k (periodic).
    pub fn agc_at(&self, k: usize) -> f64 {
        let t = k as f64 * self.dt_s;
        self.amplitude_mw
            * self
                .harmonics
                .iter()
                .map(|hh| hh.c * (2.0 * PI * hh.h as f64 * self.f0 * t - hh.phi).cos())
                .sum::<f64>()
    }

    /// Series of one harmonic `H_h[k] = c_h cos(2π h f0 k dt − φ_h)` scaled
    /// by A, over one fundamental period.
    pub fn harmonic_series(&self, h: usize) -> Result<Vec<f64>> {
        let hh = self
            .harmonics
            .iter()
            .find(|x| x.h == h)
            .ok_or_else(|| Error::AgcSeries(format!("harmonic {h} not in model")))?;
        let n = self.n_samples_per_period();
        Ok((0..n)
            .map(|k| {
                let t = k as f64 * self.dt_s;
                self.amplitude_mw * hh.c * (2.0 * PI * hh.h as f64 * self.f0 * t - hh.phi).cos()
            })
            .collect())
    }

    /// Full reconstruction `p_nom + AGC` over `len` samples.
    pub fn reconstruct(&self, len: usize) -> Vec<f64> {
        (0..len).map(|k| self.p_nom_mw + self.agc_at(k)).collect()
    }

    /// Reference the coordinator tracks at coordination step k [MW].
    pub fn reference_at(&self, k: usize) -> f64 {
        self.p_nom_mw + self.agc_at(k)
    }

    /// Same spectrum with phases redrawn from a seeded generator; used to
    /// span independent realizations of statistically similar samples.
    pub fn with_random_phases(&self, seed: u64) -> HarmonicModel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::SmallRng::seed_from_u64(seed);
        let mut m = self.clone();
        for h in &mut m.harmonics {
            h.phi = rng.gen_range(0.0..2.0 * PI);
        }
        m
    }
}

/// Which harmonics the decomposition keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SalienceMode {
    /// The first n harmonic indices.
    FirstN,
    /// The n largest by magnitude.
    TopN,
}

/// Decompose a uniformly sampled AGC series (at least 2 h) into its salient
/// harmonics. Returns the model and the relative reconstruction RMSE
/// (residual RMS over de-meaned signal RMS).
pub fn decompose_agc(
    samples_mw: &[f64],
    dt_s: f64,
    n: usize,
    mode: SalienceMode,
) -> Result<(HarmonicModel, f64)> {
    if samples_mw.iter().any(|v| !v.is_finite()) {
        return Err(Error::AgcSeries("series contains non-finite samples".into()));
    }
    if dt_s <= 0.0 {
        return Err(Error::AgcSeries("sample spacing must be positive".into()));
    }
    let len = samples_mw.len();
    if (len as f64) * dt_s < 7200.0 {
        return Err(Error::AgcSeries(format!(
            "need at least 2 h of samples, got {:.0} s",
            len as f64 * dt_s
        )));
    }

    let mean = samples_mw.iter().sum::<f64>() / len as f64;
    let mut buf: Vec<Complex<f64>> = samples_mw
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    // One-sided amplitudes/phases for H = c cos(2π h f0 t − φ):
    // X_h = (N/2) c e^{-iφ}.
    let half = len / 2;
    let mut amps: Vec<(usize, f64, f64)> = (1..=half)
        .map(|h| {
            let x = buf[h];
            (h, 2.0 * x.norm() / len as f64, -x.arg())
        })
        .collect();

    let selected: Vec<(usize, f64, f64)> = match mode {
        SalienceMode::FirstN => amps.iter().take(n).copied().collect(),
        SalienceMode::TopN => {
            amps.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            let mut top: Vec<_> = amps.into_iter().take(n).collect();
            top.sort_by_key(|&(h, _, _)| h);
            top
        }
    };

    let a = selected
        .iter()
        .map(|&(_, amp, _)| amp)
        .fold(0.0f64, f64::max);
    let harmonics = selected
        .iter()
        .map(|&(h, amp, phi)| Harmonic {
            h,
            c: if a > 0.0 { amp / a } else { 0.0 },
            phi,
        })
        .collect();

    let model = HarmonicModel {
        harmonics,
        f0: 1.0 / (len as f64 * dt_s),
        period_s: len as f64 * dt_s,
        amplitude_mw: a,
        p_nom_mw: mean,
        dt_s,
    };

    let recon = model.reconstruct(len);
    let mut err2 = 0.0;
    let mut sig2 = 0.0;
    for k in 0..len {
        let d = samples_mw[k] - recon[k];
        err2 += d * d;
        let s = samples_mw[k] - mean;
        sig2 += s * s;
    }
    let rmse_rel = if sig2 > 0.0 { (err2 / sig2).sqrt() } else { 0.0 };
    Ok((model, rmse_rel))
}

/// Split a harmonic series into its increasing part Y and decreasing part Z
/// by the sign of the first difference: `Y − Z = H` away from stationary
/// samples.
pub fn build_yz(series: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = series.len();
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    for k in 0..n {
        let prev = series[(k + n - 1) % n];
        let d = series[k] - prev;
        if d > 0.0 {
            y[k] = series[k];
        } else if d < 0.0 {
            z[k] = -series[k];
        }
    }
    (y, z)
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Accepted-power contribution of harmonic h at sample k under the minimize
/// policy: the new increase in the reference minus the expiring-discharge
/// cancellation plus the re-accepted expiring charge (periodic indexing).
pub fn q_plus(model: &HarmonicModel, h: usize, k: usize, n_p: usize) -> Result<f64> {
    let series = model.harmonic_series(h)?;
    let (y, z) = build_yz(&series);
    let n = series.len();
    let idx = |i: isize| -> usize {
        let m = n as isize;
        (((i % m) + m) % m) as usize
    };
    let k = k as isize;
    let np = n_p as isize;
    Ok(
        pos(y[idx(k)] - y[idx(k - 1)]) - pos(z[idx(k - np)] - z[idx(k - 1 - np)])
            + pos(y[idx(k - np)] - y[idx(k - 1 - np)]),
    )
}

/// Fleet kind for the closed-form statistics: the discontinuity count N_d
/// is 2 for bidirectional (ESS) fleets and 0 for charge-only (TCL) fleets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FleetKind {
    Tcl,
    Ess,
}

impl FleetKind {
    pub fn n_d(self) -> f64 {
        match self {
            FleetKind::Tcl => 0.0,
            FleetKind::Ess => 2.0,
        }
    }
}

/// Closed-form mean and standard deviation [MW] of the per-step accepted
/// power for a fleet tracking `p_nom + AGC` with `n_p` timer bins.
pub fn theorem1_stats(model: &HarmonicModel, kind: FleetKind, n_p: usize) -> (f64, f64) {
    let n_d = kind.n_d();
    let a = model.amplitude_mw;
    let dt = model.dt_s;
    let t = model.period_s;
    let n_u = model.p_nom_mw / n_p as f64;

    let mut mean = n_u;
    let mut var = 0.0;
    for hh in &model.harmonics {
        let h = hh.h as f64;
        let f_h = h * model.f0;
        mean += n_d * a * h * hh.c * dt / t;
        let smooth = (1.0 - (-t * t / (6.0 * h * h)).exp()) / 2.0
            * (2.0 * PI * dt * f_h * a * hh.c).powi(2);
        let disc = 2.0 * n_d * a * a * h * hh.c * hh.c * dt / t;
        var += smooth + disc;
    }
    (mean, var.sqrt())
}

/// How much is known about the accepted-power distribution when choosing a
/// safety factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knowledge {
    /// Mean and standard deviation only.
    None,
    /// Evidence of unimodality.
    Unimodal,
    /// Gaussian distribution.
    Gaussian,
}

/// Safety factor F for a violation probability rho in (0, 0.5).
pub fn safety_factor(rho: f64, knowledge: Knowledge) -> Result<f64> {
    if !(rho > 0.0 && rho < 0.5) {
        return Err(Error::RhoOutOfRange(rho));
    }
    Ok(match knowledge {
        Knowledge::None => ((1.0 - rho) / rho).sqrt(),
        Knowledge::Unimodal => ((1.0 - rho) / (std::f64::consts::E * rho)).powf(1.0 / 1.95),
        Knowledge::Gaussian => std::f64::consts::SQRT_2 * erf_inv(1.0 - 2.0 * rho),
    })
}

/// Inverse error function: rational initial guess (inverse normal CDF form)
/// refined by one Newton-type step against `erfc`; absolute error well under
/// 1e-9 on (-1, 1). No closed form exists.
pub fn erf_inv(x: f64) -> f64 {
    assert!(x > -1.0 && x < 1.0, "erf_inv domain is (-1, 1)");
    inv_norm_cdf((x + 1.0) / 2.0) / std::f64::consts::SQRT_2
}

fn inv_norm_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // One Halley refinement using erfc brings the rational guess to
    // machine-level accuracy.
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * PI).sqrt() * (x * x / 2.0).exp();
    x -= u / (1.0 + x * u / 2.0);
    x
}

/// The probabilistic lower bound on available synthetic damping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundResult {
    pub mean_q_kw: f64,
    pub std_q_kw: f64,
    /// Lower bound on per-bin power [kW], `mean − F·std`, clamped at 0.
    pub p_min_kw: f64,
    pub f: f64,
    pub rho: f64,
    pub d_min_mw_per_hz: f64,
    pub fleet_kind: FleetKind,
    /// True when `mean − F·std` went negative and was clamped: the fleet
    /// cannot guarantee damping at that confidence.
    pub clamped: bool,
}

/// Lower bound on synthetic damping for an under-frequency event with the
/// given nadir deviation (magnitude) and maximum RoCoF.
///
/// Inside the response band the bound is
/// `n_p · P_eff · (K_P + K_D R_max / (Δf_nadir − f_db))`; past `f_max`
/// everything sheds (`n_p · P_eff / (Δf_nadir − f_db)`); inside the deadband
/// the bound is zero. `P_eff` doubles for ESS fleets (toggling).
#[allow(clippy::too_many_arguments)]
pub fn damping_lower_bound(
    mean_q_mw: f64,
    std_q_mw: f64,
    f: f64,
    rho: f64,
    nadir_hz: f64,
    r_max: f64,
    p: &ControlParams,
    kind: FleetKind,
    n_p: usize,
) -> BoundResult {
    let raw = mean_q_mw - f * std_q_mw;
    let clamped = raw < 0.0;
    let p_min = raw.max(0.0);
    let p_eff = match kind {
        FleetKind::Tcl => p_min,
        FleetKind::Ess => 2.0 * p_min,
    };
    let d_min = if nadir_hz <= p.f_db {
        0.0
    } else if nadir_hz <= p.f_max {
        n_p as f64 * p_eff * (p.k_p() + p.k_d * r_max / (nadir_hz - p.f_db))
    } else {
        n_p as f64 * p_eff / (nadir_hz - p.f_db)
    };
    BoundResult {
        mean_q_kw: mean_q_mw * 1000.0,
        std_q_kw: std_q_mw * 1000.0,
        p_min_kw: p_min * 1000.0,
        f,
        rho,
        d_min_mw_per_hz: d_min,
        fleet_kind: kind,
        clamped,
    }
}

/// Inputs shared by the revenue trade-off and the beta threshold.
#[derive(Debug, Clone, Copy)]
pub struct TradeoffInputs<'a> {
    pub model: &'a HarmonicModel,
    pub n_p: usize,
    /// Safety factor.
    pub f: f64,
    /// Contingency nadir deviation [Hz] and maximum RoCoF [Hz/s].
    pub nadir_hz: f64,
    pub r_max: f64,
    pub params: &'a ControlParams,
}

impl TradeoffInputs<'_> {
    /// Spectral factor `sqrt(Σ h² c_h² (1 − e^{−T²/6h²}) / 2)`.
    fn spectral_factor(&self) -> f64 {
        let t = self.model.period_s;
        self.model
            .harmonics
            .iter()
            .map(|hh| {
                let h = hh.h as f64;
                h * h * hh.c * hh.c * (1.0 - (-t * t / (6.0 * h * h)).exp()) / 2.0
            })
            .sum::<f64>()
            .sqrt()
    }

    fn control_coeff(&self) -> f64 {
        self.params.k_p() + self.params.k_d * self.r_max / (self.nadir_hz - self.params.f_db)
    }

    /// Charge-only closed form `P_min(A) = n_u − 2Fπ Δt f0 A S` [MW].
    pub fn p_min_of_amplitude(&self, a_mw: f64) -> f64 {
        let n_u = self.model.p_nom_mw / self.n_p as f64;
        n_u - 2.0 * self.f * PI * self.model.dt_s * self.model.f0 * a_mw * self.spectral_factor()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Revenue {
    /// Normalized objective `O = A·β + D_min(A)` [MW/Hz].
    pub objective: f64,
    /// Sign of ∂O/∂A: positive when β exceeds the threshold.
    pub gradient_sign: f64,
    pub d_min_mw_per_hz: f64,
}

/// Total normalized revenue from allocating amplitude `a_mw` to regulation
/// at price ratio `beta`, plus the direction more regulation moves it.
pub fn revenue(a_mw: f64, beta: f64, inp: &TradeoffInputs) -> Revenue {
    let p_min = inp.p_min_of_amplitude(a_mw).max(0.0);
    let d_min = inp.n_p as f64 * p_min * inp.control_coeff();
    let thr = beta_threshold(inp);
    Revenue {
        objective: a_mw * beta + d_min,
        gradient_sign: (beta - thr).signum(),
        d_min_mw_per_hz: d_min,
    }
}

/// Price ratio above which a larger regulation amplitude increases total
/// revenue: `β_thr = n_p · 2Fπ Δt f0 S · (K_P + K_D R_max/(Δf_nadir − f_db))`.
pub fn beta_threshold(inp: &TradeoffInputs) -> f64 {
    inp.n_p as f64
        * 2.0
        * inp.f
        * PI
        * inp.model.dt_s
        * inp.model.f0
        * inp.spectral_factor()
        * inp.control_coeff()
}

/// Per-contingency thresholds and their probability-weighted average.
pub fn beta_threshold_weighted(
    model: &HarmonicModel,
    n_p: usize,
    f: f64,
    params: &ControlParams,
    contingencies: &[(f64, f64, f64)],
) -> Result<(Vec<f64>, f64)> {
    let wsum: f64 = contingencies.iter().map(|&(_, _, w)| w).sum();
    if (wsum - 1.0).abs() > 1e-9 || contingencies.iter().any(|&(_, _, w)| w < 0.0) {
        return Err(Error::UnnormalizedWeights(wsum));
    }
    let per: Vec<f64> = contingencies
        .iter()
        .map(|&(nadir, r_max, _)| {
            beta_threshold(&TradeoffInputs {
                model,
                n_p,
                f,
                nadir_hz: nadir,
                r_max,
                params,
            })
        })
        .collect();
    let avg = per
        .iter()
        .zip(contingencies)
        .map(|(b, &(_, _, w))| b * w)
        .sum();
    Ok((per, avg))
}

/// Accepted-power schedule under the known-reference construction: with the
/// reference known ahead of time the coordinator can lay out acceptances
/// exactly, one value per coordination step over one fundamental period.
/// Charge-only fleets accept the re-acceptance baseline plus the signed
/// reference slope; bidirectional fleets superpose the per-harmonic charge
/// streams (new increases plus re-accepted expirations). Clamped at zero:
/// acceptance cannot be negative.
pub fn schedule_series(model: &HarmonicModel, kind: FleetKind, n_p: usize) -> Vec<f64> {
    let len = model.n_samples_per_period();
    let n_u = model.p_nom_mw / n_p as f64;
    let mut q = vec![n_u; len];
    match kind {
        FleetKind::Tcl => {
            let agc: Vec<f64> = (0..len).map(|k| model.agc_at(k)).collect();
            for k in 0..len {
                q[k] += agc[k] - agc[(k + len - 1) % len];
            }
        }
        FleetKind::Ess => {
            for hh in &model.harmonics {
                let series = model.harmonic_series(hh.h).expect("harmonic from model");
                let (y, z) = build_yz(&series);
                let idx = |i: isize| -> usize {
                    let m = len as isize;
                    (((i % m) + m) % m) as usize
                };
                for k in 0..len {
                    let k = k as isize;
                    let np = n_p as isize;
                    q[idx(k)] += pos(y[idx(k)] - y[idx(k - 1)])
                        - pos(z[idx(k - np)] - z[idx(k - 1 - np)])
                        + pos(y[idx(k - np)] - y[idx(k - 1 - np)]);
                }
            }
        }
    }
    for v in &mut q {
        *v = v.max(0.0);
    }
    q
}

/// Deterministic Reg-D-like synthetic sample generator: a band-passed
/// harmonic mixture with most energy between roughly 1.5 and 8 minute
/// periods, seeded phases, and negligible content at the packet-epoch line
/// (and its neighborhood) so that packet renewal cannot phase-lock to the
/// reference. Values are normalized to unit peak amplitude coefficient.
pub fn synth_regd_model(seed: u64, p_nom_mw: f64, amplitude_mw: f64) -> HarmonicModel {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::SmallRng::seed_from_u64(seed);
    let period = 7200.0;
    let dt = 2.0;
    let mut harmonics = Vec::new();
    for h in 1..=260usize {
        let x = h as f64;
        // Log-normal band centered near a 10-minute period with a weak
        // broadband floor.
        let band = (-(x / 12.0).ln().powi(2) / 0.405).exp();
        let floor = 0.012;
        // Notch the packet-epoch resonance band (3-minute line at h = 40
        // and its alias at 80) so accepted-packet renewal stays incoherent.
        let notch = |center: f64| 1.0 - 0.95 * (-((x - center) / 2.5).powi(2)).exp();
        let jitter = rng.gen_range(0.55..1.0);
        let c = (band + floor) * notch(40.0) * notch(80.0) * jitter;
        let phi = rng.gen_range(0.0..2.0 * PI);
        harmonics.push(Harmonic { h, c, phi });
    }
    let cmax = harmonics.iter().map(|h| h.c).fold(0.0f64, f64::max);
    for h in &mut harmonics {
        h.c /= cmax;
    }
    HarmonicModel {
        harmonics,
        f0: 1.0 / period,
        period_s: period,
        amplitude_mw,
        p_nom_mw,
        dt_s: dt,
    }
}
