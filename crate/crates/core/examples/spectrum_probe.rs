// Scratch probe used while calibrating bundled data; not part of the API.
use pemsim::config::load_network;
use pemsim::spectral::*;
use std::path::Path;

fn main() {
    let model = synth_regd_model(2024, 36.0, 1.8);
    let s2: f64 = model
        .harmonics
        .iter()
        .map(|h| {
            let x = h.h as f64;
            x * x
                * h.c
                * h.c
                * (1.0 - (-model.period_s * model.period_s / (6.0 * x * x)).exp())
                / 2.0
        })
        .sum();
    println!("S = {:.1}", s2.sqrt());
    let (mean, std) = theorem1_stats(&model, FleetKind::Tcl, 90);
    println!("mean={mean:.4} MW  std={std:.4} MW (A=1.8, P_nom=36, n_p=90)");
    let samples = model.reconstruct(3600);
    for n in [53, 100] {
        let (_, rmse) = decompose_agc(&samples, 2.0, n, SalienceMode::TopN).unwrap();
        println!("top-{n} rmse {:.3}", rmse);
    }

    // 39-bus sanity: 250 MW trip at bus 30, no DER response.
    let mut g = load_network(Path::new("crates/core/data/networks/ieee39.toml")).unwrap();
    let n = g.n_buses();
    let mut dist = vec![0.0; n];
    dist[g.bus_index(30).unwrap()] = 250.0;
    let der = vec![0.0; n];
    let mut nadir: f64 = 0.0;
    let mut t_nadir = 0.0;
    let mut last = 0.0;
    for k in 0..6000 {
        g.step_in_place(&dist, &der).unwrap();
        let df = g.buses[g.bus_index(20).unwrap()].freq_dev;
        if df.abs() > nadir {
            nadir = df.abs();
            t_nadir = k as f64 * 0.01;
        }
        last = df;
    }
    println!(
        "39-bus trip: nadir {:.4} Hz at t={:.2} s, qss {:.4} Hz",
        nadir, t_nadir, last
    );

    // Two-area no-response.
    let mut g2 = load_network(Path::new("crates/core/data/networks/twoarea.toml")).unwrap();
    let mut nadir2: f64 = 0.0;
    let mut last2 = 0.0;
    for _ in 0..6000 {
        g2.step_in_place(&[250.0, 0.0], &[0.0, 0.0]).unwrap();
        let df = g2.buses[1].freq_dev;
        nadir2 = nadir2.max(df.abs());
        last2 = df;
    }
    println!("two-area trip: nadir {:.4} Hz, qss {:.4} Hz", nadir2, last2);
}
