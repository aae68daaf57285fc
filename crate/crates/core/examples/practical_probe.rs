// Scratch probe: delay, resolution, droop-equivalence, and estimator runs
// at paper scale.
use pemsim::config::load_scenario;
use pemsim::harness::{droop_equivalence_run, sweep, validate_estimator, DroopVariant};
use std::path::Path;
use std::time::Instant;

fn main() {
    let which: String = std::env::args().nth(1).unwrap_or_default();

    if which.is_empty() || which == "delay" {
        let path = Path::new("crates/core/data/scenarios/delay_sweep_39bus.toml");
        let (sf, grid) = load_scenario(path).unwrap();
        let t0 = Instant::now();
        let pts = sweep(&sf, &grid, path.parent().unwrap()).unwrap();
        println!("delay sweep ({:?}):", t0.elapsed());
        for p in &pts {
            println!(
                "  {:>5.0} ms: nadir {:.4} qss {:.5} shed {:.1} MW",
                p.value, p.metrics.nadir_hz, p.metrics.qss_freq_dev_hz, p.metrics.realized_delta_p_mw
            );
        }
    }

    if which.is_empty() || which == "res" {
        let path = Path::new("crates/core/data/scenarios/resolution_sweep_39bus.toml");
        let (sf, grid) = load_scenario(path).unwrap();
        let t0 = Instant::now();
        // Baseline: ideal sensing run with the same seed.
        let mut sf0 = sf.clone();
        sf0.sweep = None;
        let base_metrics =
            pemsim::harness::run_scenario(&sf0, grid.clone(), path.parent().unwrap()).unwrap();
        let pts = sweep(&sf, &grid, path.parent().unwrap()).unwrap();
        println!("resolution sweep ({:?}):", t0.elapsed());
        for p in &pts {
            let rmse = shed_rmse(&base_metrics.shed_trace, &p.metrics.shed_trace);
            let rmse20 = shed_rmse_window(&base_metrics.shed_trace, &p.metrics.shed_trace, 2.0, 22.0);
            let rmse10 = shed_rmse_window(&base_metrics.shed_trace, &p.metrics.shed_trace, 2.0, 12.0);
            println!(
                "  {:>5.0} mHz: nadir {:.4} shed {:.1} MW RMSE full {:.3} / 20s {:.3} / 10s {:.3} MW",
                p.value, p.metrics.nadir_hz, p.metrics.realized_delta_p_mw, rmse, rmse20, rmse10
            );
        }
    }

    if which.is_empty() || which == "droop" {
        let path = Path::new("crates/core/data/scenarios/droop_equivalence_39bus.toml");
        let (sf, grid) = load_scenario(path).unwrap();
        let t0 = Instant::now();
        for v in [
            DroopVariant::DroopGenerator,
            DroopVariant::FleetReplacement,
            DroopVariant::NoResponse,
        ] {
            let m = droop_equivalence_run(&grid, &sf, v, sf.fleet.bus).unwrap();
            println!("  {v:?}: nadir {:.4} qss {:.4}", m.nadir_hz, m.qss_freq_dev_hz);
        }
        println!("droop total {:?}", t0.elapsed());
    }

    if which.is_empty() || which == "est" {
        let path = Path::new("crates/core/data/scenarios/validate_estimator_39bus.toml");
        let (sf, grid) = load_scenario(path).unwrap();
        let t0 = Instant::now();
        let samples =
            validate_estimator(&sf, grid.clone(), path.parent().unwrap(), 10, (150.0, 400.0), 30)
                .unwrap();
        let worst = samples
            .iter()
            .map(|s| s.relative_error())
            .fold(0.0f64, f64::max);
        for s in &samples {
            println!("  ev {:>6.1} MW nadir {:.4} est {:.2} real {:.2} ({:.3}%)",
                s.event_mw, s.nadir_hz, s.estimated_mw_per_hz, s.realized_mw_per_hz,
                s.relative_error() * 100.0);
        }
        println!("delay-free: worst rel err {:.4}% ({:?})", worst * 100.0, t0.elapsed());

        let mut sfd = sf.clone();
        sfd.fleet.delay_min_s = 0.4;
        sfd.fleet.delay_max_s = 0.4;
        let t1 = Instant::now();
        let samples =
            validate_estimator(&sfd, grid, path.parent().unwrap(), 10, (150.0, 400.0), 30).unwrap();
        let worst = samples
            .iter()
            .map(|s| s.relative_error())
            .fold(0.0f64, f64::max);
        println!("400 ms: worst rel err {:.4}% ({:?})", worst * 100.0, t1.elapsed());
    }
}

fn shed_rmse(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let s: f64 = (0..n).map(|i| (a[i].1 - b[i].1).powi(2)).sum();
    (s / n as f64).sqrt()
}

fn shed_rmse_window(a: &[(f64, f64)], b: &[(f64, f64)], t0: f64, t1: f64) -> f64 {
    let n = a.len().min(b.len());
    let mut s = 0.0;
    let mut m = 0usize;
    for i in 0..n {
        if a[i].0 >= t0 && a[i].0 <= t1 {
            s += (a[i].1 - b[i].1).powi(2);
            m += 1;
        }
    }
    if m == 0 { 0.0 } else { (s / m as f64).sqrt() }
}
