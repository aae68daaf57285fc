//! Command-line driver: closed-loop runs, parameter sweeps, estimator
//! validation, probabilistic damping bounds, and AGC decomposition.

use clap::{Args, Parser, Subcommand};
use pemsim::config::{
    self, load_scenario, write_bound_report_csv, write_damping_sweep_csv, write_manifest,
    write_tracking_csv, write_trace_csv, BoundReportRow,
};
use pemsim::coordinator::damping_sweep;
use pemsim::harness::{self, build_engine, DroopVariant};
use pemsim::spectral::{
    beta_threshold, damping_lower_bound, safety_factor, theorem1_stats, FleetKind, Knowledge,
    SalienceMode, TradeoffInputs,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pemsim", about = "Packet-coordinated DER fleet simulator", version)]
struct Cli {
    /// Worker threads for sweeps and validation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory for CSV traces.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its traces.
    Run(ScenarioArgs),
    /// Run the scenario's parameter sweep.
    Sweep(ScenarioArgs),
    /// Compare pre-event damping estimates with realized damping over
    /// randomized contingencies.
    ValidateEstimator {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Number of randomized events.
        #[arg(long, default_value_t = 10)]
        events: usize,
        /// Smallest and largest event size [MW].
        #[arg(long, default_value_t = 150.0)]
        min_mw: f64,
        #[arg(long, default_value_t = 400.0)]
        max_mw: f64,
        /// Bus the contingency hits (default: first event bus or bus 30).
        #[arg(long)]
        event_bus: Option<usize>,
    },
    /// Probabilistic damping lower bounds from the scenario's AGC model.
    Bounds {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Regulation amplitudes [MW]; default 5% and 10% of nominal power.
        #[arg(long, value_delimiter = ',')]
        amplitudes: Vec<f64>,
        /// Violation probabilities.
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.10])]
        rho: Vec<f64>,
        /// Assumed contingency nadir deviation [Hz] and max RoCoF [Hz/s].
        #[arg(long, default_value_t = 0.1)]
        nadir: f64,
        #[arg(long, default_value_t = 0.1)]
        rocof: f64,
        /// Fleet kind for the closed forms.
        #[arg(long, default_value = "tcl")]
        kind: String,
    },
    /// Decompose an AGC CSV into its salient harmonics.
    Decompose {
        /// CSV with columns time_s,power_MW at uniform spacing.
        input: PathBuf,
        /// Harmonics to keep.
        #[arg(long, short, default_value_t = 100)]
        n: usize,
        /// "top_n" (largest magnitude) or "first_n".
        #[arg(long, default_value = "top_n")]
        mode: String,
        /// Write the harmonic table here (CSV: h,c,phi).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Droop-equivalence comparison: droop machine vs fleet vs nothing.
    DroopCompare(ScenarioArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &ScenarioArgs) -> pemsim::Result<(config::ScenarioFile, pemsim::grid::GridModel, PathBuf)> {
    let (mut sf, grid) = load_scenario(&common.scenario)?;
    if let Some(seed) = common.seed {
        sf.scenario.seed = seed;
    }
    let base = common
        .scenario
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    Ok((sf, grid, base))
}

fn out_dir(common: &ScenarioArgs, sf: &config::ScenarioFile) -> pemsim::Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| sf.scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&sf.scenario.name));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn dispatch(cmd: Command) -> pemsim::Result<()> {
    match cmd {
        Command::Run(common) => {
            let (sf, grid, base) = load(&common)?;
            let dir = out_dir(&common, &sf)?;
            let mut engine = build_engine(&sf, grid, &base)?;
            engine.record_traces = true;
            engine.record_tracking_log = true;
            engine.warm_up();
            // What-if damping sweep against the warmed-up timer state.
            let points: Vec<(f64, f64)> = (1..=20)
                .map(|i| (sf.control.f_db + 0.01 * i as f64, 0.1))
                .collect();
            let whatif: Vec<_> = damping_sweep(&engine.hist, &points, &sf.control, 0)
                .into_iter()
                .flatten()
                .map(|e| {
                    (
                        e.nadir_assumed_hz,
                        e.rocof_assumed_hz_per_s,
                        e.eta_used,
                        e.delta_p_der_mw,
                        e.d_syn_mw_per_hz,
                    )
                })
                .collect();
            write_damping_sweep_csv(&dir.join("damping_whatif.csv"), &whatif)?;
            let m = engine.run(sf.scenario.duration_s)?;
            println!(
                "nadir {:.4} Hz | R_max {:.4} Hz/s | shed {:.2} MW | realized {:.1} MW/Hz | \
                 estimated {:.1} MW/Hz | tracking RMSE {:.4} MW | qss {:.4} Hz | \
                 participations {} | opt-outs {}",
                m.nadir_hz,
                m.r_max_hz_per_s,
                m.realized_delta_p_mw,
                m.realized_damping_mw_per_hz,
                m.estimated_damping_mw_per_hz,
                m.tracking_rmse_mw,
                m.qss_freq_dev_hz,
                m.participation_count,
                m.opt_out_events
            );
            write_trace_csv(&dir.join("frequency.csv"), ["time_s", "freq_dev_Hz"], &m.freq_trace)?;
            write_trace_csv(&dir.join("shed.csv"), ["time_s", "shed_MW"], &m.shed_trace)?;
            write_tracking_csv(&dir.join("tracking.csv"), &m.tracking_log)?;
            write_manifest(
                &dir.join("manifest.txt"),
                &[
                    ("frequency.csv".into(), "time_s, frequency deviation at the fleet bus [Hz]".into()),
                    ("shed.csv".into(), "time_s, cumulative participation power change [MW]".into()),
                    ("tracking.csv".into(), "coordination step, reference [MW], aggregate [MW], accepted [kW], error [MW]".into()),
                ],
            )?;
            println!("traces -> {}", dir.display());
            Ok(())
        }
        Command::Sweep(common) => {
            let (sf, grid, base) = load(&common)?;
            let dir = out_dir(&common, &sf)?;
            let points = harness::sweep(&sf, &grid, &base)?;
            let param = sf.sweep.as_ref().map(|s| s.parameter);
            println!("sweep of {:?}", param.expect("sweep section present"));
            let mut rows = Vec::new();
            for p in &points {
                println!(
                    "  value {:>8.3}: nadir {:.4} Hz, qss {:.4} Hz, shed {:.2} MW, realized {:.1} MW/Hz",
                    p.value,
                    p.metrics.nadir_hz,
                    p.metrics.qss_freq_dev_hz,
                    p.metrics.realized_delta_p_mw,
                    p.metrics.realized_damping_mw_per_hz
                );
                rows.push((
                    p.value,
                    p.metrics.nadir_hz,
                    p.metrics.qss_freq_dev_hz,
                    p.metrics.realized_delta_p_mw,
                    p.metrics.realized_damping_mw_per_hz,
                ));
            }
            write_damping_sweep_csv(&dir.join("sweep.csv"), &rows)?;
            // Column names are generic for sweeps; document them.
            write_manifest(
                &dir.join("manifest.txt"),
                &[(
                    "sweep.csv".into(),
                    "swept value, nadir [Hz], quasi-steady deviation [Hz], shed [MW], realized damping [MW/Hz]".into(),
                )],
            )?;
            println!("table -> {}", dir.join("sweep.csv").display());
            Ok(())
        }
        Command::ValidateEstimator {
            common,
            events,
            min_mw,
            max_mw,
            event_bus,
        } => {
            let (sf, grid, base) = load(&common)?;
            let dir = out_dir(&common, &sf)?;
            let bus = event_bus
                .or_else(|| sf.events.first().map(|e| e.bus))
                .unwrap_or(30);
            let samples =
                harness::validate_estimator(&sf, grid, &base, events, (min_mw, max_mw), bus)?;
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for s in &samples {
                println!(
                    "  event {:>6.1} MW: nadir {:.4} Hz, estimated {:.1}, realized {:.1} MW/Hz ({:.2}%)",
                    s.event_mw,
                    s.nadir_hz,
                    s.estimated_mw_per_hz,
                    s.realized_mw_per_hz,
                    s.relative_error() * 100.0
                );
                worst = worst.max(s.relative_error());
                rows.push((
                    s.nadir_hz,
                    s.event_mw,
                    0.0,
                    s.estimated_mw_per_hz,
                    s.realized_mw_per_hz,
                ));
            }
            println!("worst relative error {:.3}%", worst * 100.0);
            write_damping_sweep_csv(&dir.join("estimator.csv"), &rows)?;
            Ok(())
        }
        Command::Bounds {
            common,
            amplitudes,
            rho,
            nadir,
            rocof,
            kind,
        } => {
            let (sf, grid, base) = load(&common)?;
            let _ = grid;
            let dir = out_dir(&common, &sf)?;
            let kind = match kind.as_str() {
                "tcl" => FleetKind::Tcl,
                "ess" => FleetKind::Ess,
                other => {
                    return Err(pemsim::Error::Scenario(format!(
                        "unknown fleet kind {other:?} (tcl|ess)"
                    )))
                }
            };
            let model = harness::resolve_agc(&sf, &base)?.ok_or_else(|| {
                pemsim::Error::Scenario("bounds requires an [agc] section".into())
            })?;
            let p_nom = sf.fleet.nominal_power_mw();
            let n_p = sf.fleet.n_p();
            let amps = if amplitudes.is_empty() {
                vec![0.05 * p_nom, 0.10 * p_nom]
            } else {
                amplitudes
            };
            let mut rows = Vec::new();
            for &a in &amps {
                let mut m = model.clone();
                m.amplitude_mw = a;
                let (mean, std) = theorem1_stats(&m, kind, n_p);
                for &r in &rho {
                    for knowledge in [Knowledge::None, Knowledge::Unimodal, Knowledge::Gaussian] {
                        let f = safety_factor(r, knowledge)?;
                        let b = damping_lower_bound(
                            mean, std, f, r, nadir, rocof, &sf.control, kind, n_p,
                        );
                        let thr = beta_threshold(&TradeoffInputs {
                            model: &m,
                            n_p,
                            f,
                            nadir_hz: nadir,
                            r_max: rocof,
                            params: &sf.control,
                        });
                        println!(
                            "  A {:>6.2} MW rho {:>5.3} {:<9} F {:>6.3}  P_min {:>9.3} kW  D_min {:>9.2} MW/Hz  beta_thr {:>8.3}",
                            a,
                            r,
                            format!("{knowledge:?}"),
                            f,
                            b.p_min_kw,
                            b.d_min_mw_per_hz,
                            thr
                        );
                        rows.push(BoundReportRow {
                            a_mw: a,
                            rho: r,
                            knowledge: format!("{knowledge:?}").to_lowercase(),
                            f,
                            p_min_kw: b.p_min_kw,
                            d_min_mwphz: b.d_min_mw_per_hz,
                            beta_thr: thr,
                        });
                    }
                }
            }
            write_bound_report_csv(&dir.join("bounds.csv"), &rows)?;
            println!("report -> {}", dir.join("bounds.csv").display());
            Ok(())
        }
        Command::Decompose { input, n, mode, out } => {
            let (series, dt) = config::load_agc_csv(&input)?;
            let mode = match mode.as_str() {
                "top_n" => SalienceMode::TopN,
                "first_n" => SalienceMode::FirstN,
                other => {
                    return Err(pemsim::Error::Scenario(format!(
                        "unknown mode {other:?} (top_n|first_n)"
                    )))
                }
            };
            let (model, rmse) = pemsim::spectral::decompose_agc(&series, dt, n, mode)?;
            println!(
                "{} harmonics, A = {:.4} MW, mean = {:.4} MW, relative reconstruction RMSE {:.3}%",
                model.harmonics.len(),
                model.amplitude_mw,
                model.p_nom_mw,
                rmse * 100.0
            );
            if let Some(path) = out {
                let mut text = String::from("h,c,phi\n");
                for h in &model.harmonics {
                    text.push_str(&format!("{},{:.8},{:.8}\n", h.h, h.c, h.phi));
                }
                std::fs::write(&path, text)?;
                println!("harmonics -> {}", path.display());
            }
            Ok(())
        }
        Command::DroopCompare(common) => {
            let (sf, grid, _base) = load(&common)?;
            let bus = sf.fleet.bus;
            for variant in [
                DroopVariant::DroopGenerator,
                DroopVariant::FleetReplacement,
                DroopVariant::NoResponse,
            ] {
                let m = harness::droop_equivalence_run(&grid, &sf, variant, bus)?;
                println!(
                    "  {:<18} nadir {:.4} Hz, qss {:.4} Hz",
                    format!("{variant:?}"),
                    m.nadir_hz,
                    m.qss_freq_dev_hz
                );
            }
            Ok(())
        }
    }
}

