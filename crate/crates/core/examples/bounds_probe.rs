// Scratch probe: empirical per-bin accepted power vs the closed-form lower
// bounds, across phase-randomized tracking realizations.
use pemsim::config::load_scenario;
use pemsim::engine::Engine;
use pemsim::fleet::Fleet;
use pemsim::harness::resolve_agc;
use pemsim::spectral::{safety_factor, schedule_series, theorem1_stats, FleetKind, Knowledge};
use std::path::Path;
use std::time::Instant;

fn main() {
    damping_protocol();

    let path = Path::new("crates/core/data/scenarios/bounds_tracking_twoarea.toml");
    let (sf, grid) = load_scenario(path).unwrap();
    let base = path.parent().unwrap();
    let model = resolve_agc(&sf, base).unwrap().unwrap();
    let n_p = sf.fleet.n_p();
    let p_nom = sf.fleet.nominal_power_mw();
    println!("p_nom {p_nom} MW, n_p {n_p}");

    for frac in [0.05, 0.10] {
        let mut m = model.clone();
        m.amplitude_mw = frac * p_nom;
        let (mean, std) = theorem1_stats(&m, FleetKind::Tcl, n_p);
        println!(
            "A = {:.2} MW: theorem mean {:.4} MW std {:.4} MW",
            m.amplitude_mw, mean, std
        );

        let t0 = Instant::now();
        let reps = 6;
        let mut all_q = Vec::new();
        let mut all_w = Vec::new();
        // Canonical contingency: nadir 0.1 Hz, R_max 0.1 Hz/s, K_D = 2.
        let eta_star = pemsim::control::eta(0.1, 0.1, &sf.control);
        println!("  eta* = {eta_star:.3}");
        for rep in 0..reps {
            let mut m_i = m.with_random_phases(1000 + rep);
            m_i.amplitude_mw = m.amplitude_mw;
            let fleet = Fleet::new(sf.fleet.clone(), 500 + rep).unwrap();
            let mut e = Engine::new(grid.clone(), fleet, sf.control, Some(m_i), vec![], p_nom)
                .unwrap();
            e.warm_up();
            let steps = (7200.0 / sf.fleet.dt_bin_s) as u64;
            e.run_tracking(steps, |_, q_kw, hist, _| {
                all_q.push(q_kw / 1000.0);
                let start = hist.first_qualifying_bin(eta_star);
                let m = (hist.n_p - start) as f64;
                let w: f64 = hist.tcl_charge[start..].iter().sum::<f64>() / 1000.0 / m;
                all_w.push(w);
            });
            if rep == 0 {
                println!(
                    "  tracking rmse {:.4} MW, unmet steps {}, opt-outs {} ({} device-hours)",
                    e.tracking_rmse_mw(),
                    e.fleet.opt_out_events,
                    e.fleet.opt_out_events,
                    sf.fleet.n_tcl * 2
                );
            }
        }
        // Known-reference schedule over phase-randomized realizations.
        let mut sched_all = Vec::new();
        for rep in 0..40u64 {
            let mut m_i = m.with_random_phases(9000 + rep);
            m_i.amplitude_mw = m.amplitude_mw;
            sched_all.extend(schedule_series(&m_i, FleetKind::Tcl, n_p));
        }
        let ns = sched_all.len() as f64;
        let smean = sched_all.iter().sum::<f64>() / ns;
        let sstd = (sched_all.iter().map(|q| (q - smean).powi(2)).sum::<f64>() / ns).sqrt();
        println!("  schedule mean {:.4} std {:.4} ({} samples)", smean, sstd, sched_all.len());
        for rho in [0.01f64, 0.05, 0.10] {
            for k in [Knowledge::None, Knowledge::Unimodal, Knowledge::Gaussian] {
                let f = safety_factor(rho, k).unwrap();
                let p_min = (mean - f * std).max(0.0);
                let viol = sched_all.iter().filter(|&&q| q < p_min).count() as f64 / ns;
                println!(
                    "  sched rho {:<5} {:<9} P_min {:>8.4} -> viol {:.4} {}",
                    rho, format!("{k:?}"), p_min, viol,
                    if viol <= rho { "OK" } else { "FAIL" }
                );
            }
        }
        let n = all_q.len() as f64;
        let emp_mean = all_q.iter().sum::<f64>() / n;
        let emp_std =
            (all_q.iter().map(|q| (q - emp_mean).powi(2)).sum::<f64>() / n).sqrt();
        println!(
            "  empirical mean {:.4} MW std {:.4} MW ({} samples, {:?})",
            emp_mean,
            emp_std,
            all_q.len(),
            t0.elapsed() / reps as u32
        );
        for rho in [0.01, 0.05, 0.10] {
            for k in [Knowledge::None, Knowledge::Unimodal, Knowledge::Gaussian] {
                let f = safety_factor(rho, k).unwrap();
                let p_min = (mean - f * std).max(0.0);
                let viol = all_q.iter().filter(|&&q| q < p_min).count() as f64 / n;
                let violw = all_w.iter().filter(|&&w| w < p_min).count() as f64 / n;
                println!(
                    "  rho {:<5} {:<9} P_min {:>8.4} -> bin0 viol {:.4} {} | window viol {:.4} {}",
                    rho,
                    format!("{k:?}"),
                    p_min,
                    viol,
                    if viol <= rho { "OK" } else { "FAIL" },
                    violw,
                    if violw <= rho { "OK" } else { "FAIL" }
                );
            }
        }
    }
}



fn damping_protocol() {
    use pemsim::engine::EventSpec;
    use pemsim::spectral::damping_lower_bound;
    let path = Path::new("crates/core/data/scenarios/bounds_tracking_twoarea.toml");
    let (sf, grid) = load_scenario(path).unwrap();
    let base = path.parent().unwrap();
    let model = resolve_agc(&sf, base).unwrap().unwrap();
    let p_nom = sf.fleet.nominal_power_mw();
    let n_p = sf.fleet.n_p();
    let t0 = Instant::now();
    for frac in [0.05f64, 0.10] {
        let mut viol = [0usize; 3];
        let mut clamped0 = 0;
        let reps = 30u64;
        for rep in 0..reps {
            let mut m_i = model.with_random_phases(4000 + rep);
            m_i.amplitude_mw = frac * p_nom;
            let mut fc = sf.fleet.clone();
            fc.warmup_s = fc.delta_s; // fresh-epoch construction
            let fleet = Fleet::new(fc, 300 + rep).unwrap();
            let ev = EventSpec { time_s: 2.0 + (rep % 7) as f64, bus: 1, delta_p_mw: 230.0 + 3.0 * (rep % 13) as f64 };
            let mut e = Engine::new(grid.clone(), fleet, sf.control, Some(m_i.clone()), vec![ev], p_nom).unwrap();
            e.warm_up();
            let m = e.run(40.0).unwrap();
            let (mean, std) = theorem1_stats(&m_i, FleetKind::Tcl, n_p);
            for (i, rho) in [0.01, 0.05, 0.10].iter().enumerate() {
                let f = safety_factor(*rho, Knowledge::None).unwrap();
                let b = damping_lower_bound(mean, std, f, *rho, m.nadir_hz, m.r_max_hz_per_s, &sf.control, FleetKind::Tcl, n_p);
                if m.realized_damping_mw_per_hz < b.d_min_mw_per_hz { viol[i] += 1; }
                if i == 0 && b.clamped { clamped0 += 1; }
            }
            if rep == 0 {
                let f = safety_factor(0.05, Knowledge::None).unwrap();
                let b = damping_lower_bound(mean, std, f, 0.05, m.nadir_hz, m.r_max_hz_per_s, &sf.control, FleetKind::Tcl, n_p);
                println!("A={:.2}: nadir {:.4} rmax {:.4} realized {:.1} D_min(none,0.05) {:.1} MW/Hz", m_i.amplitude_mw, m.nadir_hz, m.r_max_hz_per_s, m.realized_damping_mw_per_hz, b.d_min_mw_per_hz);
            }
        }
        println!("A frac {:.2}: violations {:?}/{} (clamped at 0.01: {}) elapsed {:?}", frac, viol, reps, clamped0, t0.elapsed());
    }
}
