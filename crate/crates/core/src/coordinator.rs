//! Packet coordinator: asynchronous request acceptance against a power
//! reference (minimize-packets policy), the three binned timer histograms,
//! and real-time synthetic-damping estimates derived from them.
//!
//! Histogram convention: bin 0 holds power accepted at the current
//! coordination step; a packet in bin `b` has been running `b` steps and its
//! timer fraction is `(b + 1) / n_p`. Power expires off the last bin.
//! Bin values are kW; fleet-level aggregates are reported in MW.

use crate::control::{eta, ControlParams};
use crate::error::{Error, Result};

/// The three timer classes tracked by the coordinator. Discharge-only
/// devices (accepted in configs) map onto `EssDischarge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerClass {
    TclCharge,
    EssCharge,
    EssDischarge,
}

/// One pending packet request.
#[derive(Debug, Clone, Copy)]
pub struct PacketRequest {
    pub device: usize,
    pub class: TimerClass,
    /// Packet height [kW].
    pub p_rate_kw: f64,
}

impl PacketRequest {
    pub fn is_charge(&self) -> bool {
        !matches!(self.class, TimerClass::EssDischarge)
    }
}

/// Binned power distributions per timer class.
#[derive(Debug, Clone)]
pub struct TimerHistograms {
    pub n_p: usize,
    pub tcl_charge: Vec<f64>,
    pub ess_charge: Vec<f64>,
    /// Discharge stored as positive magnitude; sign applied at aggregation.
    pub ess_discharge: Vec<f64>,
}

/// Power expired off the last bin during one shift.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpiredPower {
    pub tcl_kw: f64,
    pub ess_charge_kw: f64,
    pub ess_discharge_kw: f64,
}

impl TimerHistograms {
    pub fn new(n_p: usize) -> Self {
        assert!(n_p >= 1, "n_p = floor(delta / dt_bin) must be >= 1");
        Self {
            n_p,
            tcl_charge: vec![0.0; n_p],
            ess_charge: vec![0.0; n_p],
            ess_discharge: vec![0.0; n_p],
        }
    }

    /// Lower-shift recurrence x[k+1] = M x[k] + B q[k]: every bin moves one
    /// slot toward expiry and the accepted power enters bin 0.
    pub fn shift_insert(&mut self, q_tcl_kw: f64, q_ess_ch_kw: f64, q_ess_dis_kw: f64) -> ExpiredPower {
        debug_assert!(q_tcl_kw >= 0.0 && q_ess_ch_kw >= 0.0 && q_ess_dis_kw >= 0.0);
        let expired = ExpiredPower {
            tcl_kw: *self.tcl_charge.last().unwrap(),
            ess_charge_kw: *self.ess_charge.last().unwrap(),
            ess_discharge_kw: *self.ess_discharge.last().unwrap(),
        };
        for h in [&mut self.tcl_charge, &mut self.ess_charge, &mut self.ess_discharge] {
            h.rotate_right(1);
        }
        self.tcl_charge[0] = q_tcl_kw;
        self.ess_charge[0] = q_ess_ch_kw;
        self.ess_discharge[0] = q_ess_dis_kw;
        expired
    }

    /// Total fleet consumption [MW]: charging minus discharging.
    pub fn aggregate_power_mw(&self) -> f64 {
        let ch: f64 = self.tcl_charge.iter().sum::<f64>() + self.ess_charge.iter().sum::<f64>();
        let dis: f64 = self.ess_discharge.iter().sum();
        (ch - dis) / 1000.0
    }

    /// Power expiring on the next shift, per class [kW].
    pub fn expiring(&self) -> ExpiredPower {
        ExpiredPower {
            tcl_kw: *self.tcl_charge.last().unwrap(),
            ess_charge_kw: *self.ess_charge.last().unwrap(),
            ess_discharge_kw: *self.ess_discharge.last().unwrap(),
        }
    }

    /// First qualifying bin index for a threshold: the oldest
    /// `ceil((1 - eta) * n_p)` bins participate.
    pub fn first_qualifying_bin(&self, eta: f64) -> usize {
        let k = ((1.0 - eta.clamp(0.0, 1.0)) * self.n_p as f64).ceil() as usize;
        self.n_p - k.min(self.n_p)
    }

    /// Load reduction available for an under-frequency event at threshold
    /// `eta` [MW]: charging-TCL power plus twice the charging-ESS power
    /// (toggling a charging ESS to discharge swings twice its rating) over
    /// the qualifying bins.
    pub fn available_power_mw(&self, eta: f64) -> f64 {
        let start = self.first_qualifying_bin(eta);
        let mut kw = 0.0;
        for b in start..self.n_p {
            kw += self.tcl_charge[b] + 2.0 * self.ess_charge[b];
        }
        kw / 1000.0
    }

    /// Injection increase available for an over-frequency event (symmetric
    /// construction on the discharge timer) [MW].
    pub fn available_power_over_mw(&self, eta: f64) -> f64 {
        let start = self.first_qualifying_bin(eta);
        let mut kw = 0.0;
        for b in start..self.n_p {
            kw += 2.0 * self.ess_discharge[b];
        }
        kw / 1000.0
    }

    /// Remove participating/opted-out power from a bin (ack correction).
    /// Bins at or past `n_p` have already expired and need no correction.
    pub fn remove(&mut self, class: TimerClass, bin: usize, kw: f64) {
        if bin >= self.n_p {
            return;
        }
        let h = match class {
            TimerClass::TclCharge => &mut self.tcl_charge,
            TimerClass::EssCharge => &mut self.ess_charge,
            TimerClass::EssDischarge => &mut self.ess_discharge,
        };
        h[bin] = (h[bin] - kw).max(0.0);
    }

    /// Insert power directly into a bin (forced opt-in packets, ESS toggle).
    pub fn insert(&mut self, class: TimerClass, bin: usize, kw: f64) {
        if bin >= self.n_p {
            return;
        }
        let h = match class {
            TimerClass::TclCharge => &mut self.tcl_charge,
            TimerClass::EssCharge => &mut self.ess_charge,
            TimerClass::EssDischarge => &mut self.ess_discharge,
        };
        h[bin] += kw;
    }
}

/// Result of one acceptance round.
#[derive(Debug, Clone, Default)]
pub struct Acceptance {
    /// Indices into the request slice, in acceptance order.
    pub accepted: Vec<usize>,
    pub q_tcl_kw: f64,
    pub q_ess_ch_kw: f64,
    pub q_ess_dis_kw: f64,
    /// Unmet deficit [MW] when requests ran out (assumption-A1 monitoring);
    /// zero when tracking was feasible this step.
    pub unmet_mw: f64,
}

/// Minimize-packets acceptance: accept the smallest set of packets whose
/// total power covers this step's deficit, never mixing charge and
/// discharge. Ties break largest-packet-first, then first-come-first-served
/// (slice order is arrival order).
pub fn accept_requests(
    requests: &[PacketRequest],
    reference_mw: f64,
    hist: &TimerHistograms,
) -> Acceptance {
    let expiring = hist.expiring();
    let projected = hist.aggregate_power_mw()
        - (expiring.tcl_kw + expiring.ess_charge_kw - expiring.ess_discharge_kw) / 1000.0;
    let deficit_kw = (reference_mw - projected) * 1000.0;

    let mut out = Acceptance::default();
    if deficit_kw.abs() < f64::EPSILON {
        return out;
    }
    let want_charge = deficit_kw > 0.0;
    let need = deficit_kw.abs();

    let mut candidates: Vec<usize> = (0..requests.len())
        .filter(|&i| requests[i].is_charge() == want_charge)
        .collect();
    // Stable sort keeps arrival order within equal packet heights.
    candidates.sort_by(|&a, &b| {
        requests[b]
            .p_rate_kw
            .partial_cmp(&requests[a].p_rate_kw)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut covered = 0.0;
    for i in candidates {
        if covered >= need {
            break;
        }
        let r = &requests[i];
        covered += r.p_rate_kw;
        match r.class {
            TimerClass::TclCharge => out.q_tcl_kw += r.p_rate_kw,
            TimerClass::EssCharge => out.q_ess_ch_kw += r.p_rate_kw,
            TimerClass::EssDischarge => out.q_ess_dis_kw += r.p_rate_kw,
        }
        out.accepted.push(i);
    }
    if covered < need {
        out.unmet_mw = (need - covered) / 1000.0;
    }
    out
}

/// A synthetic-damping what-if answer.
#[derive(Debug, Clone, Copy)]
pub struct DampingEstimate {
    pub delta_p_der_mw: f64,
    pub d_syn_mw_per_hz: f64,
    pub nadir_assumed_hz: f64,
    pub rocof_assumed_hz_per_s: f64,
    pub eta_used: f64,
    pub computed_at: u64,
}

/// Estimate the synthetic damping available for an under-frequency event
/// with the assumed nadir deviation (magnitude, Hz) and maximum RoCoF.
/// Read-only: suitable for concurrent what-if sweeps over a snapshot.
pub fn estimate_damping(
    hist: &TimerHistograms,
    nadir_hz: f64,
    r_max_hz_per_s: f64,
    p: &ControlParams,
    step: u64,
) -> Result<DampingEstimate> {
    if nadir_hz <= p.f_db {
        return Err(Error::UndefinedDamping {
            nadir: nadir_hz,
            deadband: p.f_db,
        });
    }
    let eta_used = eta(nadir_hz, r_max_hz_per_s, p);
    let delta_p = hist.available_power_mw(eta_used);
    Ok(DampingEstimate {
        delta_p_der_mw: delta_p,
        d_syn_mw_per_hz: delta_p / (nadir_hz - p.f_db),
        nadir_assumed_hz: nadir_hz,
        rocof_assumed_hz_per_s: r_max_hz_per_s,
        eta_used,
        computed_at: step,
    })
}

/// Evaluate a grid of (nadir, RoCoF) what-if points against one snapshot.
pub fn damping_sweep(
    hist: &TimerHistograms,
    points: &[(f64, f64)],
    p: &ControlParams,
    step: u64,
) -> Vec<Result<DampingEstimate>> {
    points
        .iter()
        .map(|&(nadir, rocof)| estimate_damping(hist, nadir, rocof, p, step))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn hist_from(tcl: &[f64], ess_ch: &[f64], ess_dis: &[f64]) -> TimerHistograms {
        let n_p = tcl.len();
        assert_eq!(ess_ch.len(), n_p);
        assert_eq!(ess_dis.len(), n_p);
        TimerHistograms {
            n_p,
            tcl_charge: tcl.to_vec(),
            ess_charge: ess_ch.to_vec(),
            ess_discharge: ess_dis.to_vec(),
        }
    }

    #[test]
    fn shift_inserts_at_front() {
        let mut h = TimerHistograms::new(3);
        h.shift_insert(5.0, 0.0, 0.0);
        assert_eq!(h.tcl_charge, vec![5.0, 0.0, 0.0]);
    }

    #[test]
    fn shift_expires_last_bin() {
        let mut h = hist_from(&[2.0, 3.0, 4.0], &[0.0; 3], &[0.0; 3]);
        let exp = h.shift_insert(1.0, 0.0, 0.0);
        assert_eq!(h.tcl_charge, vec![1.0, 2.0, 3.0]);
        assert_eq!(exp.tcl_kw, 4.0);
    }

    #[test]
    fn shift_telescopes_total_power() {
        let mut h = hist_from(&[2.0, 3.0, 4.0], &[1.0, 0.0, 2.0], &[0.5, 0.0, 0.0]);
        let before = h.aggregate_power_mw();
        let exp = h.shift_insert(7.0, 1.5, 0.25);
        let after = h.aggregate_power_mw();
        let q_net = (7.0 + 1.5 - 0.25) / 1000.0;
        let e_net = (exp.tcl_kw + exp.ess_charge_kw - exp.ess_discharge_kw) / 1000.0;
        assert_abs_diff_eq!(after, before + q_net - e_net, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_sign_convention() {
        // 30 + 10 - 3 = 37 kW: discharge subtracts.
        let h = hist_from(&[10.0, 20.0], &[5.0, 5.0], &[3.0, 0.0]);
        assert_abs_diff_eq!(h.aggregate_power_mw(), 0.037, epsilon = 1e-12);
        assert_eq!(TimerHistograms::new(4).aggregate_power_mw(), 0.0);
    }

    #[test]
    fn accept_zero_when_reference_matches() {
        let h = hist_from(&[10.0, 0.0], &[0.0; 2], &[0.0; 2]);
        // Projection after expiry: bin 1 (0 kW) expires, so still 10 kW.
        let reqs = vec![PacketRequest {
            device: 0,
            class: TimerClass::TclCharge,
            p_rate_kw: 4.5,
        }];
        let acc = accept_requests(&reqs, 0.010, &h);
        assert!(acc.accepted.is_empty());
        assert_eq!(acc.unmet_mw, 0.0);
    }

    #[test]
    fn accept_exactly_covers_deficit() {
        // Deficit of +9 kW with 4.5 kW charge requests pending: exactly 2.
        let h = TimerHistograms::new(2);
        let reqs: Vec<PacketRequest> = (0..5)
            .map(|d| PacketRequest {
                device: d,
                class: TimerClass::TclCharge,
                p_rate_kw: 4.5,
            })
            .collect();
        let acc = accept_requests(&reqs, 0.009, &h);
        assert_eq!(acc.accepted.len(), 2);
        assert_abs_diff_eq!(acc.q_tcl_kw, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn never_mixes_directions() {
        let h = TimerHistograms::new(2);
        let reqs = vec![
            PacketRequest {
                device: 0,
                class: TimerClass::EssDischarge,
                p_rate_kw: 4.5,
            },
            PacketRequest {
                device: 1,
                class: TimerClass::EssCharge,
                p_rate_kw: 4.5,
            },
        ];
        let acc = accept_requests(&reqs, 0.004, &h);
        assert_eq!(acc.accepted, vec![1]);
        assert_eq!(acc.q_ess_dis_kw, 0.0);

        // Negative deficit: only discharges accepted.
        let h2 = hist_from(&[9.0, 0.0], &[0.0; 2], &[0.0; 2]);
        let acc2 = accept_requests(&reqs, 0.0045, &h2);
        assert_eq!(acc2.accepted, vec![0]);
        assert_eq!(acc2.q_ess_ch_kw, 0.0);
    }

    #[test]
    fn reports_unmet_deficit() {
        let h = TimerHistograms::new(2);
        let reqs = vec![PacketRequest {
            device: 0,
            class: TimerClass::TclCharge,
            p_rate_kw: 4.5,
        }];
        let acc = accept_requests(&reqs, 0.020, &h);
        assert_eq!(acc.accepted.len(), 1);
        assert_abs_diff_eq!(acc.unmet_mw, 0.0155, epsilon = 1e-12);
    }

    #[test]
    fn acceptance_is_minimal_exhaustively() {
        // No strict subset of the accepted set covers the deficit; checked
        // for every subset on small instances with mixed packet sizes.
        let h = TimerHistograms::new(2);
        let sizes = [4.5, 3.0, 4.5, 1.5, 6.0, 3.0, 4.5, 1.5, 2.5, 6.0, 4.5, 3.0];
        let reqs: Vec<PacketRequest> = sizes
            .iter()
            .enumerate()
            .map(|(d, &s)| PacketRequest {
                device: d,
                class: TimerClass::TclCharge,
                p_rate_kw: s,
            })
            .collect();
        for need_kw in [1.0, 4.5, 7.0, 9.0, 13.7, 20.0, 31.0] {
            let acc = accept_requests(&reqs, need_kw / 1000.0, &h);
            let total: f64 = acc.accepted.iter().map(|&i| reqs[i].p_rate_kw).sum();
            assert!(total + 1e-12 >= need_kw.min(sizes.iter().sum()), "covers deficit");
            let k = acc.accepted.len();
            for mask in 0..(1u32 << k) {
                if mask.count_ones() as usize == k {
                    continue;
                }
                let sub: f64 = (0..k)
                    .filter(|b| mask & (1 << b) != 0)
                    .map(|b| reqs[acc.accepted[b]].p_rate_kw)
                    .sum();
                assert!(
                    sub < need_kw,
                    "strict subset {sub} kW also covers deficit {need_kw} kW"
                );
            }
        }
    }

    #[test]
    fn available_power_limits() {
        let n_p = 10;
        let h = hist_from(&[10.0; 10], &[4.0; 10], &[1.0; 10]);
        // eta = 1: no bins qualify.
        assert_eq!(h.available_power_mw(1.0), 0.0);
        // eta = 0: everything, ESS doubled.
        assert_abs_diff_eq!(
            h.available_power_mw(0.0),
            (10.0 * n_p as f64 + 2.0 * 4.0 * n_p as f64) / 1000.0,
            epsilon = 1e-12
        );
        // Uniform, eta = 0.5: half of P plus twice half of Q.
        assert_abs_diff_eq!(
            h.available_power_mw(0.5),
            (0.5 * 100.0 + 2.0 * 0.5 * 40.0) / 1000.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn available_power_matches_device_census_oracle() {
        // Brute-force oracle over a synthetic fleet: device in bin b has
        // timer fraction (b+1)/n_p and participates when it reaches eta.
        let n_p = 180;
        let mut tcl = vec![0.0; n_p];
        let mut ess = vec![0.0; n_p];
        for b in 0..n_p {
            tcl[b] = 4.5 * ((b * 7) % 5) as f64;
            ess[b] = 4.5 * ((b * 3) % 4) as f64;
        }
        let h = hist_from(&tcl, &ess, &vec![0.0; n_p]);
        for &eta in &[0.001, 0.13, 0.5004, 0.777, 0.999] {
            let mut kw = 0.0;
            for b in 0..n_p {
                if (b + 1) as f64 / n_p as f64 >= eta {
                    kw += tcl[b] + 2.0 * ess[b];
                }
            }
            assert_abs_diff_eq!(h.available_power_mw(eta), kw / 1000.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn estimate_damping_ratio() {
        // 100 MW sheddable at 0.136 Hz nadir with 36 mHz deadband: 1000 MW/Hz.
        let p = ControlParams {
            k_d: 0.0,
            ..Default::default()
        };
        let n_p = 100;
        // Build bins so that available at the implied eta is exactly 100 MW.
        let eta_used = eta(0.136, 0.0, &p);
        let h0 = TimerHistograms::new(n_p);
        let start = h0.first_qualifying_bin(eta_used);
        let per_bin = 100_000.0 / (n_p - start) as f64;
        let mut tcl = vec![0.0; n_p];
        for b in start..n_p {
            tcl[b] = per_bin;
        }
        let h = hist_from(&tcl, &vec![0.0; n_p], &vec![0.0; n_p]);
        let est = estimate_damping(&h, 0.136, 0.0, &p, 7).unwrap();
        assert_abs_diff_eq!(est.delta_p_der_mw, 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.d_syn_mw_per_hz, 1000.0, epsilon = 1e-6);
        assert_eq!(est.computed_at, 7);
    }

    #[test]
    fn estimate_damping_rejects_nadir_inside_deadband() {
        let p = ControlParams::default();
        let h = TimerHistograms::new(10);
        assert!(matches!(
            estimate_damping(&h, 0.02, 0.0, &p, 0),
            Err(Error::UndefinedDamping { .. })
        ));
    }

    proptest! {
        #[test]
        fn available_power_monotone_in_eta(e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, seed in 0u64..1000) {
            let n_p = 37;
            let mut tcl = vec![0.0; n_p];
            let mut ess = vec![0.0; n_p];
            let mut s = seed;
            for b in 0..n_p {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                tcl[b] = ((s >> 33) % 100) as f64;
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ess[b] = ((s >> 33) % 50) as f64;
            }
            let h = hist_from(&tcl, &ess, &vec![0.0; n_p]);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(h.available_power_mw(hi) <= h.available_power_mw(lo) + 1e-12);
        }

        #[test]
        fn shift_preserves_interior_bins(q in 0.0f64..100.0) {
            let mut h = hist_from(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4], &[0.0; 4]);
            h.shift_insert(q, 0.0, 0.0);
            prop_assert_eq!(h.tcl_charge.clone(), vec![q, 1.0, 2.0, 3.0]);
        }
    }
}
