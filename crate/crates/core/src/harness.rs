//! Experiment harness: builds engines from scenario files, runs parameter
//! sweeps with shared warm-up seeds, validates the real-time damping
//! estimator over randomized contingencies, and assembles the
//! droop-equivalence comparison.

use crate::config::{AgcSourceKind, ScenarioFile, SweepParameter};
use crate::engine::{Engine, EventSpec, RunMetrics};
use crate::error::{Error, Result};
use crate::fleet::Fleet;
use crate::grid::GridModel;
use crate::spectral::{decompose_agc, synth_regd_model, HarmonicModel, SalienceMode};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use std::path::Path;

/// Resolve the scenario's AGC section into a harmonic model.
pub fn resolve_agc(sf: &ScenarioFile, base_dir: &Path) -> Result<Option<HarmonicModel>> {
    let Some(agc) = &sf.agc else {
        return Ok(None);
    };
    let p_nom = sf.fleet.nominal_power_mw();
    let model = match agc.source {
        AgcSourceKind::Synthetic => {
            let mut m = synth_regd_model(agc.seed.unwrap_or(sf.scenario.seed), p_nom, agc.amplitude_mw);
            m.dt_s = sf.fleet.dt_bin_s;
            m
        }
        AgcSourceKind::Csv => {
            let file = agc.file.as_ref().expect("validated in parse_scenario");
            let (series, dt) = crate::config::load_agc_csv(&base_dir.join(file))?;
            let (mut m, _) = decompose_agc(&series, dt, agc.n_harmonics, SalienceMode::TopN)?;
            m.amplitude_mw = agc.amplitude_mw;
            m.p_nom_mw = p_nom;
            m.dt_s = sf.fleet.dt_bin_s;
            m
        }
    };
    Ok(Some(model))
}

/// Build a ready-to-run engine from a parsed scenario and its network.
pub fn build_engine(sf: &ScenarioFile, grid: GridModel, base_dir: &Path) -> Result<Engine> {
    let fleet = Fleet::new(sf.fleet.clone(), sf.scenario.seed)?;
    let agc = resolve_agc(sf, base_dir)?;
    let events: Vec<EventSpec> = sf.events.iter().map(|e| e.to_spec()).collect();
    let p_nom = sf.fleet.nominal_power_mw();
    Engine::new(grid, fleet, sf.control, agc, events, p_nom)
}

/// Warm up and run one scenario.
pub fn run_scenario(sf: &ScenarioFile, grid: GridModel, base_dir: &Path) -> Result<RunMetrics> {
    let mut engine = build_engine(sf, grid, base_dir)?;
    engine.record_traces = true;
    engine.record_tracking_log = true;
    engine.warm_up();
    engine.run(sf.scenario.duration_s)
}

/// One sweep point: the swept value and its run metrics.
#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: RunMetrics,
}

/// Run the scenario once per grid value of the swept parameter. The fleet
/// warm-up seed is shared across points so differences isolate the swept
/// parameter, unless the sweep requests independent seeds.
pub fn sweep(
    sf: &ScenarioFile,
    grid: &GridModel,
    base_dir: &Path,
) -> Result<Vec<SweepPoint>> {
    let spec = sf
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Scenario("scenario has no [sweep] section".into()))?;
    let points: Vec<(usize, f64)> = spec.values.iter().copied().enumerate().collect();
    points
        .into_par_iter()
        .map(|(i, value)| {
            let mut sf2 = sf.clone();
            if spec.independent_seeds {
                sf2.scenario.seed = sf.scenario.seed.wrapping_add(1 + i as u64);
            }
            apply_parameter(&mut sf2, spec.parameter, value);
            let mut engine = build_engine(&sf2, grid.clone(), base_dir)?;
            engine.record_traces = true;
            engine.warm_up();
            let metrics = engine.run(sf2.scenario.duration_s)?;
            Ok(SweepPoint { value, metrics })
        })
        .collect()
}

fn apply_parameter(sf: &mut ScenarioFile, parameter: SweepParameter, value: f64) {
    match parameter {
        SweepParameter::KD => sf.control.k_d = value,
        SweepParameter::DelayMs => {
            sf.fleet.delay_min_s = value / 1000.0;
            sf.fleet.delay_max_s = value / 1000.0;
        }
        SweepParameter::ResolutionMhz => sf.fleet.meas_resolution_hz = value / 1000.0,
        SweepParameter::AmplitudeMw => {
            if let Some(agc) = &mut sf.agc {
                agc.amplitude_mw = value;
            }
        }
    }
}

/// One estimator-validation sample.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorSample {
    pub event_mw: f64,
    pub nadir_hz: f64,
    pub estimated_mw_per_hz: f64,
    pub realized_mw_per_hz: f64,
}

impl EstimatorSample {
    pub fn relative_error(&self) -> f64 {
        if self.realized_mw_per_hz == 0.0 {
            0.0
        } else {
            (self.estimated_mw_per_hz - self.realized_mw_per_hz).abs() / self.realized_mw_per_hz
        }
    }
}

/// Validate the pre-event damping estimate against realized damping over
/// randomized contingencies: warm the fleet once, then replay independent
/// events from cloned state. Event sizes span `size_range` MW.
pub fn validate_estimator(
    sf: &ScenarioFile,
    grid: GridModel,
    base_dir: &Path,
    n_events: usize,
    size_range: (f64, f64),
    event_bus: usize,
) -> Result<Vec<EstimatorSample>> {
    let mut base = build_engine(sf, grid, base_dir)?;
    base.events.clear();
    base.warm_up();
    let mut rng = SmallRng::seed_from_u64(sf.scenario.seed ^ 0x5EED_E57);
    let mut draws = Vec::new();
    for _ in 0..n_events {
        draws.push((
            rng.gen_range(size_range.0..size_range.1),
            rng.gen_range(1.0..5.0),
        ));
    }
    draws
        .into_par_iter()
        .map(|(size_mw, t0)| {
            let mut e = base.clone();
            e.events = vec![EventSpec {
                time_s: t0,
                bus: event_bus,
                delta_p_mw: size_mw,
            }];
            let m = e.run(t0 + 50.0)?;
            Ok(EstimatorSample {
                event_mw: size_mw,
                nadir_hz: m.nadir_hz,
                estimated_mw_per_hz: m.estimated_damping_mw_per_hz,
                realized_mw_per_hz: m.realized_damping_mw_per_hz,
            })
        })
        .collect()
}

/// Variants for the droop-equivalence experiment at a reference bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DroopVariant {
    /// Droop-controlled generator at the bus, no fleet.
    DroopGenerator,
    /// Governor removed, coordinated fleet at the bus instead.
    FleetReplacement,
    /// Governor removed, nothing replaces it.
    NoResponse,
}

/// Build the three droop-equivalence variants from a base network: the
/// variant generator at `bus` either keeps its governor, is replaced by the
/// fleet (whose config must point at `bus`), or is simply removed.
pub fn droop_equivalence_run(
    base_grid: &GridModel,
    sf: &ScenarioFile,
    variant: DroopVariant,
    bus: usize,
) -> Result<RunMetrics> {
    let mut grid = base_grid.clone();
    if variant != DroopVariant::DroopGenerator {
        grid.generators.retain(|g| g.bus != bus);
        grid = GridModel::new(grid.buses, grid.lines, grid.generators, grid.dt)?;
    }
    let mut sf2 = sf.clone();
    if variant != DroopVariant::FleetReplacement {
        sf2.fleet.n_tcl = 0;
        sf2.fleet.n_ess = 0;
        sf2.fleet.n_discharge_only = 0;
        sf2.fleet.p_nom_mw = Some(0.0);
    }
    let mut engine = build_engine(&sf2, grid, Path::new("."))?;
    engine.warm_up();
    engine.run(sf2.scenario.duration_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_scenario;
    use crate::grid::{Bus, Generator, Line};

    fn two_area() -> GridModel {
        GridModel::new(
            vec![Bus::new(1, 1400.0, 80.0), Bus::new(2, 1300.0, 80.0)],
            vec![Line {
                from: 1,
                to: 2,
                susceptance: 12_000.0,
            }],
            vec![
                Generator::new(1, 3000.0, 0.002, 0.6, 0.036),
                Generator::new(2, 3000.0, 0.002, 0.6, 0.036),
            ],
            0.01,
        )
        .unwrap()
    }

    fn scenario(kd: f64) -> ScenarioFile {
        parse_scenario(&format!(
            r#"
[scenario]
name = "t"
duration_s = 40.0
seed = 5

[network]
file = "unused.toml"

[fleet]
n_tcl = 2000
bus = 2
meas_resolution_hz = 0.0
warmup_s = 900.0

[control]
k_d = {kd}

[[event]]
time_s = 2.0
bus = 1
delta_p_mw = 30.0

[sweep]
parameter = "k_d"
values = [0.0, 2.0]
"#
        ))
        .unwrap()
    }

    #[test]
    fn sweep_isolates_parameter() {
        let sf = scenario(0.0);
        let pts = sweep(&sf, &two_area(), Path::new(".")).unwrap();
        assert_eq!(pts.len(), 2);
        // Higher derivative gain responds earlier: shallower nadir.
        assert!(
            pts[1].metrics.nadir_hz < pts[0].metrics.nadir_hz,
            "kd=2 nadir {} vs kd=0 nadir {}",
            pts[1].metrics.nadir_hz,
            pts[0].metrics.nadir_hz
        );
    }

    #[test]
    fn estimator_validation_samples() {
        let mut sf = scenario(0.0);
        sf.events.clear();
        let samples =
            validate_estimator(&sf, two_area(), Path::new("."), 3, (20.0, 45.0), 1).unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            assert!(s.nadir_hz > 0.036, "event too small: {}", s.nadir_hz);
            assert!(
                s.relative_error() < 0.01,
                "estimate {} vs realized {}",
                s.estimated_mw_per_hz,
                s.realized_mw_per_hz
            );
        }
    }
}
