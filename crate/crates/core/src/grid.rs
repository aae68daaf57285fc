//! Linearized multi-bus frequency dynamics: swing equations plus first-order
//! turbine/governor models, integrated with fixed-step RK4 and DC tie-line
//! flows.
//!
//! Unit convention (engineering units, not per-unit): inertia in MW·s/Hz,
//! damping in MW/Hz, droop in Hz/MW, power in MW, frequency deviation in Hz,
//! angles in rad. Helpers at the bottom convert from per-unit datasets.

use crate::error::{Error, Result};

pub const NOMINAL_HZ: f64 = 60.0;

/// One bus: inertia/damping parameters plus its dynamic state.
#[derive(Debug, Clone)]
pub struct Bus {
    pub id: usize,
    /// Aggregate inertia constant [MW·s/Hz]. Must be > 0.
    pub inertia: f64,
    /// Load-frequency damping [MW/Hz]. Must be >= 0.
    pub damping: f64,
    /// Angle deviation [rad].
    pub angle_dev: f64,
    /// Frequency deviation [Hz].
    pub freq_dev: f64,
    /// Uncontrolled load deviation [MW] (current disturbance input).
    pub uncontrolled_load_dev: f64,
    /// Controlled DER aggregate deviation [MW] (current input).
    pub der_power_dev: f64,
}

impl Bus {
    pub fn new(id: usize, inertia: f64, damping: f64) -> Self {
        Self {
            id,
            inertia,
            damping,
            angle_dev: 0.0,
            freq_dev: 0.0,
            uncontrolled_load_dev: 0.0,
            der_power_dev: 0.0,
        }
    }
}

/// DC tie line between two buses.
#[derive(Debug, Clone)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Susceptance [MW/rad]. Must be > 0.
    pub susceptance: f64,
}

/// Governor-driven generator with first-order turbine dynamics.
#[derive(Debug, Clone)]
pub struct Generator {
    pub bus: usize,
    /// Rating [MW], informational (used by per-unit helpers and presets).
    pub rating: f64,
    /// Droop [Hz/MW]. Must be > 0.
    pub droop: f64,
    /// Turbine time constant [s]. Must be > 0.
    pub turbine_tau: f64,
    /// Governor output change [MW].
    pub power_dev: f64,
    /// Governor deadband [Hz]; output stays zero while |Δω| is below it.
    pub governor_deadband: f64,
}

impl Generator {
    pub fn new(bus: usize, rating: f64, droop: f64, turbine_tau: f64, deadband: f64) -> Self {
        Self {
            bus,
            rating,
            droop,
            turbine_tau,
            power_dev: 0.0,
            governor_deadband: deadband,
        }
    }
}

/// The complete network model; a pure value, so cloned snapshots can be
/// stepped independently.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    /// Simulation step [s].
    pub dt: f64,
    /// Steps taken so far (for divergence diagnostics).
    pub step_count: u64,
    /// Bus id -> index, frozen at validation.
    index: Vec<(usize, usize)>,
}

impl GridModel {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, generators: Vec<Generator>, dt: f64) -> Result<Self> {
        let mut model = Self {
            name: String::new(),
            buses,
            lines,
            generators,
            dt,
            step_count: 0,
            index: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&mut self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Network("dt must be > 0".into()));
        }
        if self.buses.is_empty() {
            return Err(Error::Network("at least one bus required".into()));
        }
        self.index = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect();
        self.index.sort_unstable();
        for w in self.index.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Network(format!("duplicate bus id {}", w[0].0)));
            }
        }
        for b in &self.buses {
            if b.inertia <= 0.0 {
                return Err(Error::Network(format!("bus {}: inertia must be > 0", b.id)));
            }
            if b.damping < 0.0 {
                return Err(Error::Network(format!("bus {}: damping must be >= 0", b.id)));
            }
        }
        for l in &self.lines {
            if l.susceptance <= 0.0 {
                return Err(Error::Network(format!(
                    "line {}-{}: susceptance must be > 0",
                    l.from, l.to
                )));
            }
            self.bus_index(l.from)?;
            self.bus_index(l.to)?;
        }
        for g in &self.generators {
            if g.turbine_tau <= 0.0 || g.droop <= 0.0 {
                return Err(Error::Network(format!(
                    "generator at bus {}: droop and turbine_tau must be > 0",
                    g.bus
                )));
            }
            self.bus_index(g.bus)?;
        }
        self.check_connected()?;
        Ok(())
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 1 {
            return Ok(());
        }
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let a = self.bus_index(l.from)?;
            let b = self.bus_index(l.to)?;
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(Error::Network("network graph is not connected".into()))
        }
    }

    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.index
            .binary_search_by_key(&id, |&(bid, _)| bid)
            .map(|pos| self.index[pos].1)
            .map_err(|_| Error::UnknownBus(id))
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Local frequency at a bus: nominal plus the deviation.
    pub fn measure_frequency(&self, bus_id: usize) -> Result<f64> {
        let i = self.bus_index(bus_id)?;
        Ok(NOMINAL_HZ + self.buses[i].freq_dev)
    }

    /// Advance one step of `dt` with the given per-bus inputs (both indexed
    /// by bus position, sized to the bus count). `disturbances` are
    /// uncontrolled load deviations [MW]; `der_power` are controlled DER
    /// deviations [MW]. Inputs are held constant over the step.
    pub fn step(&self, disturbances: &[f64], der_power: &[f64]) -> Result<GridModel> {
        let mut next = self.clone();
        next.step_in_place(disturbances, der_power)?;
        Ok(next)
    }

    /// In-place variant of [`GridModel::step`] for hot loops.
    pub fn step_in_place(&mut self, disturbances: &[f64], der_power: &[f64]) -> Result<()> {
        let n = self.buses.len();
        let m = self.generators.len();
        assert_eq!(disturbances.len(), n, "disturbance vector sized to bus count");
        assert_eq!(der_power.len(), n, "DER vector sized to bus count");

        for (i, b) in self.buses.iter_mut().enumerate() {
            b.uncontrolled_load_dev = disturbances[i];
            b.der_power_dev = der_power[i];
        }

        // State layout: [theta(n), omega(n), pg(m)].
        let dim = 2 * n + m;
        let mut y = vec![0.0; dim];
        for (i, b) in self.buses.iter().enumerate() {
            y[i] = b.angle_dev;
            y[n + i] = b.freq_dev;
        }
        for (g, gen) in self.generators.iter().enumerate() {
            y[2 * n + g] = gen.power_dev;
        }

        let h = self.dt;
        let k1 = self.deriv(&y, disturbances, der_power);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let k2 = self.deriv(&y2, disturbances, der_power);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let k3 = self.deriv(&y3, disturbances, der_power);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = self.deriv(&y4, disturbances, der_power);

        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        self.step_count += 1;
        for (i, b) in self.buses.iter_mut().enumerate() {
            b.angle_dev = y[i];
            b.freq_dev = y[n + i];
            if !b.angle_dev.is_finite() || !b.freq_dev.is_finite() {
                return Err(Error::Diverged {
                    bus: b.id,
                    step: self.step_count,
                });
            }
        }
        for (g, gen) in self.generators.iter_mut().enumerate() {
            gen.power_dev = y[2 * n + g];
            if !gen.power_dev.is_finite() {
                return Err(Error::Diverged {
                    bus: gen.bus,
                    step: self.step_count,
                });
            }
        }
        Ok(())
    }

    fn deriv(&self, y: &[f64], load_dev: &[f64], der_dev: &[f64]) -> Vec<f64> {
        let n = self.buses.len();
        let m = self.generators.len();
        let mut dy = vec![0.0; 2 * n + m];

        // Net tie-line inflow per bus: sum of b_ij (theta_i - theta_j).
        let mut flow = vec![0.0; n];
        for l in &self.lines {
            let a = self.bus_index(l.from).expect("validated");
            let b = self.bus_index(l.to).expect("validated");
            let p = l.susceptance * (y[a] - y[b]);
            flow[b] += p;
            flow[a] -= p;
        }

        let mut gen_power = vec![0.0; n];
        for (g, gen) in self.generators.iter().enumerate() {
            let bi = self.bus_index(gen.bus).expect("validated");
            gen_power[bi] += y[2 * n + g];
        }

        for i in 0..n {
            let b = &self.buses[i];
            let omega = y[n + i];
            dy[i] = 2.0 * std::f64::consts::PI * omega;
            dy[n + i] = (gen_power[i] - load_dev[i] - der_dev[i] - b.damping * omega + flow[i])
                / b.inertia;
        }

        for (g, gen) in self.generators.iter().enumerate() {
            let bi = self.bus_index(gen.bus).expect("validated");
            let omega = y[n + bi];
            // Offset deadband: zero drive inside the band, shifted outside,
            // so the governor output is continuous and stays exactly zero
            // while |Δω| < deadband.
            let eff = if omega.abs() <= gen.governor_deadband {
                0.0
            } else {
                omega.signum() * (omega.abs() - gen.governor_deadband)
            };
            dy[2 * n + g] = (-y[2 * n + g] - eff / gen.droop) / gen.turbine_tau;
        }
        dy
    }

    /// Zero all dynamic state (angles, frequency deviations, governor
    /// outputs) without touching parameters.
    pub fn reset_state(&mut self) {
        for b in &mut self.buses {
            b.angle_dev = 0.0;
            b.freq_dev = 0.0;
            b.uncontrolled_load_dev = 0.0;
            b.der_power_dev = 0.0;
        }
        for g in &mut self.generators {
            g.power_dev = 0.0;
        }
        self.step_count = 0;
    }
}

/// Inertia [MW·s/Hz] from a per-unit inertia constant H [s] on `s_base` MVA.
pub fn inertia_from_h(h_s: f64, s_base_mva: f64) -> f64 {
    2.0 * h_s * s_base_mva / NOMINAL_HZ
}

/// Line susceptance [MW/rad] from a per-unit reactance on `s_base` MVA.
pub fn susceptance_from_x(x_pu: f64, s_base_mva: f64) -> f64 {
    s_base_mva / x_pu
}

/// Droop [Hz/MW] from a per-unit droop (e.g. 0.05) and machine rating.
pub fn droop_from_pu(r_pu: f64, rating_mva: f64) -> f64 {
    r_pu * NOMINAL_HZ / rating_mva
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_bus(inertia: f64, damping: f64) -> GridModel {
        GridModel::new(vec![Bus::new(1, inertia, damping)], vec![], vec![], 0.01).unwrap()
    }

    #[test]
    fn equilibrium_stays_zero() {
        let mut g = one_bus(10.0, 1.0);
        for _ in 0..1000 {
            g.step_in_place(&[0.0], &[0.0]).unwrap();
        }
        assert_eq!(g.buses[0].freq_dev, 0.0);
        assert_eq!(g.buses[0].angle_dev, 0.0);
    }

    #[test]
    fn one_bus_step_loss_matches_closed_form() {
        // M dw/dt = -dP, D = 0, no governor: w(t) = -(dP/M) t.
        // With M = 10 MW·s/Hz and dP = 250 MW the RoCoF is -25 Hz/s, and the
        // linear-in-t solution is exact under RK4.
        let mut g = one_bus(10.0, 0.0);
        let steps = 50;
        for _ in 0..steps {
            g.step_in_place(&[250.0], &[0.0]).unwrap();
        }
        let t = steps as f64 * g.dt;
        assert_abs_diff_eq!(g.buses[0].freq_dev, -25.0 * t, epsilon = 1e-9);
        // Initial RoCoF from the first step's secant.
        let mut g2 = one_bus(10.0, 0.0);
        g2.step_in_place(&[250.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(g2.buses[0].freq_dev / g2.dt, -25.0, epsilon = 1e-9);
    }

    #[test]
    fn one_bus_with_damping_matches_exponential() {
        // M dw/dt = -dP - D w -> w(t) = -(dP/D)(1 - exp(-D t / M)).
        let (m, d, dp) = (8.0, 2.0, 100.0);
        let mut g = one_bus(m, d);
        for _ in 0..500 {
            g.step_in_place(&[dp], &[0.0]).unwrap();
        }
        let t = 500.0 * g.dt;
        let exact = -(dp / d) * (1.0 - (-d * t / m).exp());
        assert_abs_diff_eq!(g.buses[0].freq_dev, exact, epsilon = 1e-9);
    }

    fn two_bus_symmetric() -> GridModel {
        GridModel::new(
            vec![Bus::new(1, 20.0, 0.0), Bus::new(2, 20.0, 0.0)],
            vec![Line {
                from: 1,
                to: 2,
                susceptance: 500.0,
            }],
            vec![],
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn two_bus_opposite_steps_conserve_accelerating_power() {
        // Equal and opposite load steps: sum_j M_j dω_j/dt = 0 at every
        // step, checked by direct summation of finite differences.
        let mut g = two_bus_symmetric();
        let mut prev: Vec<f64> = g.buses.iter().map(|b| b.freq_dev).collect();
        for _ in 0..2000 {
            g.step_in_place(&[150.0, -150.0], &[0.0, 0.0]).unwrap();
            let sum: f64 = g
                .buses
                .iter()
                .zip(&prev)
                .map(|(b, p)| b.inertia * (b.freq_dev - p) / g.dt)
                .sum();
            assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-9);
            prev = g.buses.iter().map(|b| b.freq_dev).collect();
        }
    }

    #[test]
    fn linearity_without_deadband() {
        // With a zero governor deadband the model is linear: doubling the
        // disturbance doubles every state deviation.
        let mk = || {
            GridModel::new(
                vec![Bus::new(1, 15.0, 2.0), Bus::new(2, 25.0, 1.0)],
                vec![Line {
                    from: 1,
                    to: 2,
                    susceptance: 800.0,
                }],
                vec![Generator::new(1, 500.0, 0.006, 0.5, 0.0)],
                0.01,
            )
            .unwrap()
        };
        let mut a = mk();
        let mut b = mk();
        for _ in 0..500 {
            a.step_in_place(&[100.0, 0.0], &[0.0, 10.0]).unwrap();
            b.step_in_place(&[200.0, 0.0], &[0.0, 20.0]).unwrap();
            for (ba, bb) in a.buses.iter().zip(&b.buses) {
                let scale = if ba.freq_dev.abs() > 1e-30 {
                    bb.freq_dev / ba.freq_dev
                } else {
                    2.0
                };
                assert!((scale - 2.0).abs() < 1e-9, "freq scale {scale}");
                let tscale = if ba.angle_dev.abs() > 1e-30 {
                    bb.angle_dev / ba.angle_dev
                } else {
                    2.0
                };
                assert!((tscale - 2.0).abs() < 1e-9, "angle scale {tscale}");
            }
        }
    }

    #[test]
    fn governor_holds_zero_inside_deadband() {
        // Small disturbance keeps |Δω| under 36 mHz; governor output must
        // remain exactly zero the whole trajectory.
        let mut g = GridModel::new(
            vec![Bus::new(1, 50.0, 200.0)],
            vec![],
            vec![Generator::new(1, 1000.0, 0.003, 0.5, 0.036)],
            0.01,
        )
        .unwrap();
        for _ in 0..5000 {
            g.step_in_place(&[5.0], &[0.0]).unwrap();
            assert!(g.buses[0].freq_dev.abs() < 0.036);
            assert_eq!(g.generators[0].power_dev, 0.0);
        }
    }

    #[test]
    fn step_loss_settles_with_damping() {
        let mut g = GridModel::new(
            vec![Bus::new(1, 30.0, 50.0), Bus::new(2, 30.0, 50.0)],
            vec![Line {
                from: 1,
                to: 2,
                susceptance: 600.0,
            }],
            vec![
                Generator::new(1, 800.0, 0.004, 0.5, 0.036),
                Generator::new(2, 800.0, 0.004, 0.5, 0.036),
            ],
            0.01,
        )
        .unwrap();
        let mut peak: f64 = 0.0;
        let mut trace = Vec::new();
        for _ in 0..60_000 {
            g.step_in_place(&[120.0, 0.0], &[0.0, 0.0]).unwrap();
            peak = peak.max(g.buses[0].freq_dev.abs());
            trace.push(g.buses[0].freq_dev);
        }
        // Bounded and settled: late-window wobble is tiny relative to peak.
        let tail = &trace[trace.len() - 1000..];
        let (lo, hi) = tail
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(peak.is_finite() && peak < 1.0);
        assert!((hi - lo) < 1e-6 * peak, "wobble {} vs peak {}", hi - lo, peak);
    }

    #[test]
    fn nadir_equals_trajectory_minimum() {
        let mut g = GridModel::new(
            vec![Bus::new(1, 30.0, 60.0)],
            vec![],
            vec![Generator::new(1, 900.0, 0.004, 0.6, 0.036)],
            0.01,
        )
        .unwrap();
        let mut min_f = f64::MAX;
        let mut prev = f64::MAX;
        let mut dipped = false;
        for _ in 0..20_000 {
            g.step_in_place(&[150.0], &[0.0]).unwrap();
            let f = g.measure_frequency(1).unwrap();
            min_f = min_f.min(f);
            if f > prev {
                dipped = true;
            }
            prev = f;
        }
        assert!(dipped, "trajectory should recover past the nadir");
        assert!(min_f < 60.0);
        assert_eq!(min_f, g.measure_frequency(1).unwrap().min(min_f));
    }

    #[test]
    fn measure_frequency_additive() {
        let mut g = one_bus(10.0, 1.0);
        assert_eq!(g.measure_frequency(1).unwrap(), 60.0);
        g.buses[0].freq_dev = -0.1;
        assert_abs_diff_eq!(g.measure_frequency(1).unwrap(), 59.9, epsilon = 1e-12);
        assert!(matches!(g.measure_frequency(7), Err(Error::UnknownBus(7))));
    }

    #[test]
    fn rejects_disconnected_graph() {
        let r = GridModel::new(
            vec![Bus::new(1, 10.0, 0.0), Bus::new(2, 10.0, 0.0)],
            vec![],
            vec![],
            0.01,
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(GridModel::new(vec![Bus::new(1, 0.0, 0.0)], vec![], vec![], 0.01).is_err());
        assert!(GridModel::new(vec![Bus::new(1, 1.0, -0.1)], vec![], vec![], 0.01).is_err());
        assert!(GridModel::new(vec![Bus::new(1, 1.0, 0.0)], vec![], vec![], 0.0).is_err());
        assert!(GridModel::new(
            vec![Bus::new(1, 1.0, 0.0)],
            vec![],
            vec![Generator::new(1, 100.0, 0.0, 0.5, 0.0)],
            0.01
        )
        .is_err());
        assert!(GridModel::new(
            vec![Bus::new(1, 1.0, 0.0)],
            vec![],
            vec![Generator::new(9, 100.0, 0.004, 0.5, 0.0)],
            0.01
        )
        .is_err());
    }

    #[test]
    fn per_unit_helpers() {
        assert_abs_diff_eq!(inertia_from_h(5.0, 600.0), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(susceptance_from_x(0.025, 100.0), 4000.0, epsilon = 1e-12);
        assert_abs_diff_eq!(droop_from_pu(0.05, 1000.0), 0.003, epsilon = 1e-12);
    }
}
