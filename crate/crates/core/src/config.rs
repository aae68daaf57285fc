//! File formats: network definitions, scenario files, AGC series, and the
//! CSV outputs. Network and scenario files are TOML key/value tables; every
//! loader rejects unknown keys.

use crate::control::ControlParams;
use crate::engine::EventSpec;
use crate::error::{Error, Result};
use crate::fleet::FleetConfig;
use crate::grid::{Bus, Generator, GridModel, Line};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Network definition file

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    grid: GridSection,
    bus: Vec<BusRow>,
    #[serde(default)]
    line: Vec<LineRow>,
    #[serde(default, rename = "gen")]
    generators: Vec<GenRow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    /// Simulation step [s].
    dt_s: f64,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRow {
    id: usize,
    /// Inertia [MW·s/Hz].
    inertia: f64,
    /// Damping [MW/Hz].
    damping: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRow {
    from: usize,
    to: usize,
    /// Susceptance [MW/rad].
    susceptance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenRow {
    bus: usize,
    /// Rating [MW].
    rating: f64,
    /// Droop [Hz/MW].
    droop: f64,
    /// Turbine time constant [s].
    turbine_tau: f64,
    /// Governor deadband [Hz].
    governor_deadband: f64,
}

/// Parse a network definition from TOML text.
pub fn parse_network(text: &str) -> Result<GridModel> {
    let nf: NetworkFile =
        toml::from_str(text).map_err(|e| Error::ConfigParse(format!("network file: {e}")))?;
    let buses = nf
        .bus
        .into_iter()
        .map(|b| Bus::new(b.id, b.inertia, b.damping))
        .collect();
    let lines = nf
        .line
        .into_iter()
        .map(|l| Line {
            from: l.from,
            to: l.to,
            susceptance: l.susceptance,
        })
        .collect();
    let generators = nf
        .generators
        .into_iter()
        .map(|g| Generator::new(g.bus, g.rating, g.droop, g.turbine_tau, g.governor_deadband))
        .collect();
    let mut model = GridModel::new(buses, lines, generators, nf.grid.dt_s)?;
    model.name = nf.grid.name.unwrap_or_default();
    Ok(model)
}

pub fn load_network(path: &Path) -> Result<GridModel> {
    parse_network(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Scenario file

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioSection,
    pub network: NetworkRef,
    pub fleet: FleetConfig,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default, rename = "event")]
    pub events: Vec<EventRow>,
    #[serde(default)]
    pub agc: Option<AgcSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    /// Simulated span of the scored run [s] (warm-up is extra).
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRef {
    /// Path to the network file, relative to the scenario file.
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRow {
    pub time_s: f64,
    pub bus: usize,
    /// Positive = generation deficit [MW].
    pub delta_p_mw: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgcSection {
    /// "csv" reads `file`; "synthetic" generates the bundled model shape
    /// from `seed`.
    pub source: AgcSourceKind,
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Regulation amplitude A [MW].
    pub amplitude_mw: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Harmonics retained when decomposing a CSV source.
    #[serde(default = "default_n_harmonics")]
    pub n_harmonics: usize,
}

fn default_n_harmonics() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgcSourceKind {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Redraw fleet seeds per point instead of sharing the warm-up seed.
    #[serde(default)]
    pub independent_seeds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    KD,
    DelayMs,
    ResolutionMhz,
    AmplitudeMw,
}

/// Parse a scenario from TOML text (validates fleet and control blocks).
pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let sf: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::ConfigParse(format!("scenario file: {e}")))?;
    sf.fleet.validate()?;
    sf.control.validate()?;
    if sf.scenario.duration_s <= 0.0 {
        return Err(Error::Scenario("duration_s must be > 0".into()));
    }
    for e in &sf.events {
        if e.time_s < 0.0 || e.time_s > sf.scenario.duration_s {
            return Err(Error::Scenario(format!(
                "event at {} s outside run duration {} s",
                e.time_s, sf.scenario.duration_s
            )));
        }
    }
    if let Some(sweep) = &sf.sweep {
        if sweep.values.is_empty() {
            return Err(Error::Scenario("sweep grid must be non-empty".into()));
        }
    }
    if let Some(agc) = &sf.agc {
        if agc.source == AgcSourceKind::Csv && agc.file.is_none() {
            return Err(Error::Scenario("agc.source = csv requires agc.file".into()));
        }
        if agc.amplitude_mw < 0.0 {
            return Err(Error::Scenario("agc.amplitude_mw must be >= 0".into()));
        }
    }
    Ok(sf)
}

/// Load a scenario plus its referenced network (paths resolved relative to
/// the scenario file's directory).
pub fn load_scenario(path: &Path) -> Result<(ScenarioFile, GridModel)> {
    let text = std::fs::read_to_string(path)?;
    let sf = parse_scenario(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let grid = load_network(&base.join(&sf.network.file))?;
    Ok((sf, grid))
}

impl EventRow {
    pub fn to_spec(self) -> EventSpec {
        EventSpec {
            time_s: self.time_s,
            bus: self.bus,
            delta_p_mw: self.delta_p_mw,
        }
    }
}

// ---------------------------------------------------------------------------
// AGC CSV

/// Parse an AGC series from CSV with header `time_s,power_MW` at uniform
/// spacing. Returns the series and the spacing.
pub fn parse_agc_csv(data: &[u8]) -> Result<(Vec<f64>, f64)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(data);
    {
        let headers = rdr.headers()?;
        if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "power_MW" {
            return Err(Error::AgcSeries(format!(
                "expected header time_s,power_MW got {headers:?}"
            )));
        }
    }
    let mut times = Vec::new();
    let mut power = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::AgcSeries("row width != 2".into()));
        }
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| Error::AgcSeries(format!("bad time {:?}", &rec[0])))?;
        let p: f64 = rec[1]
            .parse()
            .map_err(|_| Error::AgcSeries(format!("bad power {:?}", &rec[1])))?;
        if !t.is_finite() || !p.is_finite() {
            return Err(Error::AgcSeries("non-finite sample".into()));
        }
        times.push(t);
        power.push(p);
    }
    if times.len() < 2 {
        return Err(Error::AgcSeries("need at least two samples".into()));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(Error::AgcSeries("non-increasing timestamps".into()));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(Error::AgcSeries(format!(
                "non-uniform sampling: {} vs {}",
                w[1] - w[0],
                dt
            )));
        }
    }
    Ok((power, dt))
}

pub fn load_agc_csv(path: &Path) -> Result<(Vec<f64>, f64)> {
    parse_agc_csv(&std::fs::read(path)?)
}

pub fn write_agc_csv(path: &Path, samples: &[f64], dt_s: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "power_MW"])?;
    for (k, v) in samples.iter().enumerate() {
        w.write_record([format!("{}", k as f64 * dt_s), format!("{v:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Output writers

/// Damping what-if sweep rows.
pub fn write_damping_sweep_csv(
    path: &Path,
    rows: &[(f64, f64, f64, f64, f64)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["nadir_Hz", "rocof_Hzps", "eta", "delta_p_MW", "d_syn_MWpHz"])?;
    for &(nadir, rocof, eta, dp, dsyn) in rows {
        w.write_record([
            format!("{nadir:.6}"),
            format!("{rocof:.6}"),
            format!("{eta:.6}"),
            format!("{dp:.6}"),
            format!("{dsyn:.6}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tracking_csv(path: &Path, log: &[crate::engine::TrackSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "reference_MW", "aggregate_MW", "accepted_kW", "error_MW"])?;
    for s in log {
        w.write_record([
            s.step.to_string(),
            format!("{:.6}", s.reference_mw),
            format!("{:.6}", s.aggregate_mw),
            format!("{:.3}", s.accepted_kw),
            format!("{:.6}", s.error_mw),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Bound report rows.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReportRow {
    pub a_mw: f64,
    pub rho: f64,
    pub knowledge: String,
    pub f: f64,
    pub p_min_kw: f64,
    pub d_min_mwphz: f64,
    pub beta_thr: f64,
}

pub fn write_bound_report_csv(path: &Path, rows: &[BoundReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "A_MW",
        "rho",
        "knowledge",
        "F",
        "P_min_kW",
        "D_min_MWpHz",
        "beta_thr",
    ])?;
    for r in rows {
        w.write_record([
            format!("{:.4}", r.a_mw),
            format!("{}", r.rho),
            r.knowledge.clone(),
            format!("{:.6}", r.f),
            format!("{:.4}", r.p_min_kw),
            format!("{:.4}", r.d_min_mwphz),
            format!("{:.6}", r.beta_thr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for &(a, b) in rows {
        w.write_record([format!("{a:.4}"), format!("{b:.8}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-data manifest: one line per emitted file with column descriptions.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::from("# Output manifest: file -> columns\n");
    for (file, cols) in entries {
        text.push_str(&format!("{file}: {cols}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const NET: &str = r#"
[grid]
dt_s = 0.01
name = "two bus"

[[bus]]
id = 1
inertia = 1400.0
damping = 80.0

[[bus]]
id = 2
inertia = 1300.0
damping = 80.0

[[line]]
from = 1
to = 2
susceptance = 12000.0

[[gen]]
bus = 1
rating = 3000.0
droop = 0.002
turbine_tau = 0.6
governor_deadband = 0.036
"#;

    #[test]
    fn parses_network() {
        let g = parse_network(NET).unwrap();
        assert_eq!(g.buses.len(), 2);
        assert_eq!(g.lines.len(), 1);
        assert_eq!(g.generators.len(), 1);
        assert_eq!(g.dt, 0.01);
    }

    #[test]
    fn network_rejects_unknown_keys() {
        let bad = NET.replace("damping = 80.0", "damping = 80.0\nvoltage = 1.0");
        assert!(parse_network(&bad).is_err());
    }

    #[test]
    fn network_rejects_semantic_errors() {
        let bad = NET.replace("inertia = 1400.0", "inertia = -1.0");
        assert!(parse_network(&bad).is_err());
        let disconnected = NET.replace(
            "[[line]]\nfrom = 1\nto = 2\nsusceptance = 12000.0\n\n",
            "",
        );
        assert!(parse_network(&disconnected).is_err());
    }

    const SCEN: &str = r#"
[scenario]
name = "demo"
duration_s = 60.0
seed = 42

[network]
file = "net.toml"

[fleet]
n_tcl = 1000
bus = 2

[control]
k_d = 2.0

[[event]]
time_s = 2.0
bus = 1
delta_p_mw = 250.0
"#;

    #[test]
    fn parses_scenario() {
        let s = parse_scenario(SCEN).unwrap();
        assert_eq!(s.scenario.name, "demo");
        assert_eq!(s.fleet.n_tcl, 1000);
        assert_eq!(s.events.len(), 1);
        assert_eq!(s.control.f_db, 0.036);
    }

    #[test]
    fn scenario_rejects_unknown_keys_and_bad_values() {
        assert!(parse_scenario(&SCEN.replace("k_d = 2.0", "k_q = 2.0")).is_err());
        assert!(parse_scenario(&SCEN.replace("n_tcl = 1000", "n_tcl = 1000\nfoo = 1")).is_err());
        assert!(parse_scenario(&SCEN.replace("time_s = 2.0", "time_s = 59.0")).is_ok());
        assert!(parse_scenario(&SCEN.replace("time_s = 2.0", "time_s = 999.0")).is_err());
        assert!(parse_scenario(&SCEN.replace("duration_s = 60.0", "duration_s = 0.0")).is_err());
    }

    #[test]
    fn agc_csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("agc.csv");
        let series: Vec<f64> = (0..100).map(|k| (k as f64 * 0.1).sin()).collect();
        write_agc_csv(&p, &series, 2.0).unwrap();
        let (back, dt) = load_agc_csv(&p).unwrap();
        assert_eq!(dt, 2.0);
        assert_eq!(back.len(), series.len());
        for (a, b) in back.iter().zip(&series) {
            assert!((a - b).abs() < 1e-6);
        }

        assert!(parse_agc_csv(b"time_s,power_MW\n0,1\n").is_err()); // single row
        assert!(parse_agc_csv(b"t,p\n0,1\n2,1\n").is_err()); // bad header
        assert!(parse_agc_csv(b"time_s,power_MW\n0,1\n2,1\n5,1\n").is_err()); // non-uniform
        assert!(parse_agc_csv(b"time_s,power_MW\n0,1\n2,nan\n4,1\n").is_err()); // nan
        assert!(parse_agc_csv(b"time_s,power_MW\n0,1\n2,1\n4,1\n").is_ok());
    }
}
