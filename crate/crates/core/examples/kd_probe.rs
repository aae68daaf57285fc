// Scratch probe: paper-scale K_D ordering runs.
use pemsim::config::load_scenario;
use pemsim::harness::sweep;
use std::path::Path;
use std::time::Instant;

fn main() {
    for file in [
        "crates/core/data/scenarios/fig2_kd_twoarea.toml",
        "crates/core/data/scenarios/fig2_kd_39bus.toml",
    ] {
        let path = Path::new(file);
        let (sf, grid) = load_scenario(path).unwrap();
        let t0 = Instant::now();
        let pts = sweep(&sf, &grid, path.parent().unwrap()).unwrap();
        println!("{file} ({:?}):", t0.elapsed());
        for p in &pts {
            println!(
                "  k_d {:>3.1}: nadir {:.4} Hz shed {:.1} MW parts {} qss {:.4} r_max {:.4}",
                p.value,
                p.metrics.nadir_hz,
                p.metrics.realized_delta_p_mw,
                p.metrics.participation_count,
                p.metrics.qss_freq_dev_hz,
                p.metrics.r_max_hz_per_s
            );
        }
    }
}
