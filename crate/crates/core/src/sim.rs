//! Closed-loop assembly and fixed-step integration.
//!
//! The stacked state is `[η | ω | x | pᶜ | ψ]`. The privacy signals ξ and n^f
//! are inputs: they are refreshed once at the start of each step and held
//! across the four Runge-Kutta stages.

use serde::{Deserialize, Serialize};

use crate::devices::{self, DeviceSet, DeviceState};
use crate::equilibrium::{build_equilibrium, lyapunov_value, solve_kkt, EquilibriumSolution};
use crate::error::{check_len, Error, Result};
use crate::network::{self, NetworkModel, PlantState};
use crate::schemes::{
    self, check_design_condition, initial_xi, refresh_privacy_signals, CommGraph, PrivacyRng, SchemeConfig, SchemeKind,
    SchemeState,
};
use crate::FREQ_THRESHOLD_0_01_HZ;

/// Instantaneous change of one unit's uncontrollable load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub time: f64,
    pub unit: usize,
    pub delta: f64,
}

/// Full closed-loop state, including the current privacy gains.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClosedLoopState {
    pub eta: Vec<f64>,
    pub omega: Vec<f64>,
    pub x: Vec<f64>,
    pub p_c: Vec<f64>,
    pub psi: Vec<f64>,
    pub xi: Vec<f64>,
}

pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: NetworkModel,
    pub devices: DeviceSet,
    /// Unit-level graph for the per-unit schemes, bus-level for primal-dual.
    pub comm: CommGraph,
    pub scheme: SchemeConfig,
    pub disturbances: Vec<Disturbance>,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub record_stride: usize,
    /// Starting point; the equilibrium of the initial loads when `None`.
    pub initial: Option<ClosedLoopState>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::config(format!(
                "t_end = {} must be at least dt = {}",
                self.t_end, self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::config("record_stride must be at least 1"));
        }
        if self.model.bus_count() != self.devices.bus_count() {
            return Err(Error::config("device set and network disagree on the bus count"));
        }
        for (i, d) in self.disturbances.iter().enumerate() {
            if d.unit >= self.devices.unit_count() {
                return Err(Error::config(format!(
                    "disturbance {i} targets unknown unit {}",
                    d.unit
                )));
            }
            if !d.time.is_finite() || !d.delta.is_finite() {
                return Err(Error::config(format!("disturbance {i} is not finite")));
            }
        }
        self.scheme.validate(&self.comm, &self.devices)?;
        if let (SchemeKind::PrivacyPreserving, Some(p)) = (self.scheme.kind, &self.scheme.privacy) {
            let checks = check_design_condition(&self.devices, self.model.damping(), &p.beta, &p.beta_hat)?;
            if let Some(u) = checks.iter().position(|c| !c.feasible) {
                return Err(Error::config(format!(
                    "unit {u} violates the privacy design condition (eigenvalues {:?})",
                    checks[u].eigenvalues
                )));
            }
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }

    /// Equilibrium for the loads in `devices` under this scheme.
    pub fn equilibrium(&self, devices: &DeviceSet) -> Result<EquilibriumSolution> {
        build_equilibrium(&self.model, devices, &self.comm, self.scheme.kind, &solve_kkt(devices))
    }

    /// Devices with every disturbance applied.
    pub fn final_devices(&self) -> Result<DeviceSet> {
        self.disturbances
            .iter()
            .try_fold(self.devices.clone(), |d, dist| d.with_load_step(dist.unit, dist.delta))
    }
}

/// One recorded row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub omega: Vec<f64>,
    pub omega_dot: Vec<f64>,
    pub eta: Vec<f64>,
    pub x: Vec<f64>,
    pub p_c: Vec<f64>,
    pub p_c_dot: Vec<f64>,
    /// ∫pᶜ dt since the previous sample, as taken by the integrator; zero at the first sample.
    pub p_c_int: Vec<f64>,
    pub psi: Vec<f64>,
    pub xi: Vec<f64>,
    pub n_f: Vec<f64>,
    pub n_d: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub p_m: Vec<f64>,
    pub d_c: Vec<f64>,
    pub u: Vec<f64>,
    pub p_l: Vec<f64>,
    /// V or V̂ relative to the equilibrium of the loads in effect at `t`.
    pub lyapunov: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: SchemeKind,
    pub dt: f64,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn span(&self) -> f64 {
        self.last().t - self.samples[0].t
    }

    /// First time after which every bus stays strictly below `threshold`;
    /// `None` if the final sample is still above it.
    pub fn settle_time_to(&self, threshold: f64) -> Option<f64> {
        let above = |s: &Sample| s.omega.iter().any(|w| w.abs() >= threshold);
        match self.samples.iter().rposition(above) {
            None => Some(self.samples[0].t),
            Some(i) if i + 1 < self.samples.len() => Some(self.samples[i + 1].t),
            Some(_) => None,
        }
    }

    /// Samples with `t >= last.t − window`.
    pub fn final_window(&self, window: f64) -> Result<&[Sample]> {
        if !(window > 0.0) || window > self.span() + 1e-9 {
            return Err(Error::config(format!(
                "window {window} s must be positive and within the {} s trajectory",
                self.span()
            )));
        }
        let start = self.last().t - window - 1e-9;
        let first = self.samples.partition_point(|s| s.t < start);
        Ok(&self.samples[first..])
    }
}

/// Simulates the closed loop.
pub fn simulate(sc: &Scenario) -> Result<Trajectory> {
    sc.validate()?;
    let mut sim = Simulator::new(sc)?;
    let steps = sc.step_count();
    let mut samples = Vec::with_capacity(steps / sc.record_stride + 2);
    for k in 0..=steps {
        let t = k as f64 * sc.dt;
        sim.apply_disturbances(t)?;
        sim.refresh_signals();
        if k % sc.record_stride == 0 || k == steps {
            samples.push(sim.sample(t)?);
            sim.p_c_int.iter_mut().for_each(|v| *v = 0.0);
        }
        if k == steps {
            break;
        }
        sim.step()?;
        if let Some(i) = sim.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: t + sc.dt,
                detail: format!("state component {i} is {}", sim.y[i]),
            });
        }
    }
    Ok(Trajectory {
        kind: sc.scheme.kind,
        dt: sc.dt,
        samples,
    })
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    lines: usize,
    buses: usize,
    gens: usize,
    ctrls: usize,
    edges: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.lines + self.buses + self.gens + self.ctrls + self.edges
    }

    fn pack(&self, s: &ClosedLoopState) -> Result<Vec<f64>> {
        check_len("initial eta", s.eta.len(), self.lines)?;
        check_len("initial omega", s.omega.len(), self.buses)?;
        check_len("initial x", s.x.len(), self.gens)?;
        check_len("initial p_c", s.p_c.len(), self.ctrls)?;
        check_len("initial psi", s.psi.len(), self.edges)?;
        let mut y = Vec::with_capacity(self.len());
        for part in [&s.eta, &s.omega, &s.x, &s.p_c, &s.psi] {
            y.extend_from_slice(part);
        }
        Ok(y)
    }

    /// Splits `y` into (η, ω, x, pᶜ, ψ).
    fn split<'a>(&self, y: &'a [f64]) -> [&'a [f64]; 5] {
        let (eta, rest) = y.split_at(self.lines);
        let (omega, rest) = rest.split_at(self.buses);
        let (x, rest) = rest.split_at(self.gens);
        let (p_c, psi) = rest.split_at(self.ctrls);
        [eta, omega, x, p_c, psi]
    }
}

struct Evaluation {
    deriv: Vec<f64>,
    outputs: devices::DeviceOutputs,
    u: Vec<f64>,
    n_d: Vec<f64>,
}

struct Simulator<'a> {
    sc: &'a Scenario,
    layout: Layout,
    devices: DeviceSet,
    y: Vec<f64>,
    xi: Vec<f64>,
    n_f: Vec<f64>,
    rng: PrivacyRng,
    unit_bus: Vec<usize>,
    pending: Vec<Disturbance>,
    lyapunov_eq: Option<EquilibriumSolution>,
    /// ∫pᶜ dt accumulated since the last recorded sample.
    p_c_int: Vec<f64>,
}

impl<'a> Simulator<'a> {
    fn new(sc: &'a Scenario) -> Result<Self> {
        let layout = Layout {
            lines: sc.model.line_count(),
            buses: sc.model.bus_count(),
            gens: sc.devices.generators().len(),
            ctrls: sc.scheme.controller_count(&sc.devices),
            edges: sc.scheme.psi_len(&sc.comm),
        };
        let eq = sc.equilibrium(&sc.devices)?;
        let units = sc.devices.unit_count();
        let start = sc.initial.clone().unwrap_or_else(|| eq.state(units));
        let y = layout.pack(&start)?;
        let mut rng = PrivacyRng::new(sc.seed);
        let xi = match (&sc.scheme.privacy, sc.scheme.kind) {
            (Some(p), SchemeKind::PrivacyPreserving) => initial_xi(p, &mut rng),
            _ => vec![0.0; units],
        };
        let mut pending = sc.disturbances.clone();
        pending.sort_by(|a, b| a.time.total_cmp(&b.time));
        pending.reverse();
        Ok(Self {
            sc,
            layout,
            devices: sc.devices.clone(),
            y,
            xi,
            n_f: vec![0.0; units],
            rng,
            unit_bus: sc.devices.unit_buses(),
            pending,
            lyapunov_eq: sc.scheme.kind.has_lyapunov().then_some(eq),
            p_c_int: vec![0.0; layout.ctrls],
        })
    }

    /// Applies every disturbance whose time is at or before this step boundary.
    fn apply_disturbances(&mut self, t: f64) -> Result<()> {
        let mut changed = false;
        while let Some(d) = self.pending.last() {
            if d.time > t + 1e-9 * self.sc.dt {
                break;
            }
            self.devices = self.devices.with_load_step(d.unit, d.delta)?;
            self.pending.pop();
            changed = true;
        }
        if changed && self.lyapunov_eq.is_some() {
            self.lyapunov_eq = Some(self.sc.equilibrium(&self.devices)?);
        }
        Ok(())
    }

    fn refresh_signals(&mut self) {
        if let (SchemeKind::PrivacyPreserving, Some(p)) = (self.sc.scheme.kind, &self.sc.scheme.privacy) {
            let omega = self.layout.split(&self.y)[1].to_vec();
            let mut st = SchemeState {
                xi: std::mem::take(&mut self.xi),
                n_f_held: std::mem::take(&mut self.n_f),
                ..Default::default()
            };
            refresh_privacy_signals(p, &mut st, &omega, &self.unit_bus, self.sc.dt, &mut self.rng);
            self.xi = st.xi;
            self.n_f = st.n_f_held;
        }
    }

    fn evaluate(&self, y: &[f64]) -> Result<Evaluation> {
        let [eta, omega, x, p_c, psi] = self.layout.split(y);
        let sc = self.sc;
        let kind = sc.scheme.kind;
        let dstate = DeviceState { x: x.to_vec() };
        let u = schemes::device_inputs(kind, &self.devices, p_c);
        let outputs = devices::device_outputs(&self.devices, &dstate, &u, omega)?;
        let x_dot = devices::device_rhs(&self.devices, &dstate, &u, omega)?;
        let plant = PlantState {
            eta: eta.to_vec(),
            omega: omega.to_vec(),
        };
        let pd = network::swing_rhs(&sc.model, &plant, &outputs.net_injection)?;
        let sstate = SchemeState {
            p_c: p_c.to_vec(),
            psi: psi.to_vec(),
            xi: self.xi.clone(),
            n_f_held: self.n_f.clone(),
        };
        let srhs = schemes::scheme_rhs(&sc.scheme, &sc.comm, &self.devices, &sstate, &outputs.s_tilde, omega)?;
        let mut deriv = Vec::with_capacity(self.layout.len());
        for part in [&pd.eta_dot, &pd.omega_dot, &x_dot, &srhs.p_c_dot, &srhs.psi_dot] {
            deriv.extend_from_slice(part);
        }
        Ok(Evaluation {
            deriv,
            outputs,
            u: srhs.u,
            n_d: srhs.n_d,
        })
    }

    fn step(&mut self) -> Result<()> {
        let dt = self.sc.dt;
        let y0 = &self.y;
        let shifted = |k: &[f64], h: f64| -> Vec<f64> { y0.iter().zip(k).map(|(a, b)| a + h * b).collect() };
        let k1 = self.evaluate(y0)?.deriv;
        let y2 = shifted(&k1, dt / 2.0);
        let k2 = self.evaluate(&y2)?.deriv;
        let y3 = shifted(&k2, dt / 2.0);
        let k3 = self.evaluate(&y3)?.deriv;
        let y4 = shifted(&k3, dt);
        let k4 = self.evaluate(&y4)?.deriv;
        // the consensus states integrate pᶜ linearly, so this is exactly the
        // command integral the ψ update uses
        let pc = self.layout.lines + self.layout.buses + self.layout.gens;
        for (c, acc) in self.p_c_int.iter_mut().enumerate() {
            let i = pc + c;
            *acc += dt / 6.0 * (y0[i] + 2.0 * y2[i] + 2.0 * y3[i] + y4[i]);
        }
        let y1 = (0..y0.len())
            .map(|i| y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        self.y = y1;
        Ok(())
    }

    fn sample(&self, t: f64) -> Result<Sample> {
        let ev = self.evaluate(&self.y)?;
        let [eta, omega, x, p_c, psi] = self.layout.split(&self.y);
        let [_, omega_dot, _, p_c_dot, _] = self.layout.split(&ev.deriv);
        let lyapunov = match &self.lyapunov_eq {
            Some(eq) => {
                let state = ClosedLoopState {
                    eta: eta.to_vec(),
                    omega: omega.to_vec(),
                    x: x.to_vec(),
                    p_c: p_c.to_vec(),
                    psi: psi.to_vec(),
                    xi: self.xi.clone(),
                };
                Some(
                    lyapunov_value(
                        &self.sc.model,
                        &self.devices,
                        &self.sc.comm,
                        &self.sc.scheme,
                        eq,
                        &state,
                    )?
                    .total,
                )
            }
            None => None,
        };
        Ok(Sample {
            t,
            omega: omega.to_vec(),
            omega_dot: omega_dot.to_vec(),
            eta: eta.to_vec(),
            x: x.to_vec(),
            p_c: p_c.to_vec(),
            p_c_dot: p_c_dot.to_vec(),
            p_c_int: self.p_c_int.clone(),
            psi: psi.to_vec(),
            xi: self.xi.clone(),
            n_f: self.n_f.clone(),
            n_d: ev.n_d,
            s_tilde: ev.outputs.s_tilde,
            p_m: ev.outputs.p_m,
            d_c: ev.outputs.d_c,
            u: ev.u,
            p_l: self.devices.uncontrollable_loads(),
            lyapunov,
        })
    }
}

/// End-of-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateMetrics {
    /// Largest |ω_j| over the final window.
    pub max_abs_omega_end: f64,
    /// Settling time to 0.01 Hz; `None` if never reached.
    pub settle_time_0_01_hz: Option<f64>,
    /// Largest max−min spread of power commands over the final window.
    pub p_c_spread_end: f64,
    /// Mean power command at the last sample.
    pub p_c_mean_end: f64,
    /// Largest max−min spread of marginal costs q·|output| over the final window.
    pub marginal_cost_spread_end: f64,
    /// Mean marginal cost at the last sample.
    pub marginal_cost_mean_end: f64,
}

/// Marginal cost q·|p^M| or q·|d^c| of every unit in `s`.
pub fn marginal_costs(devices: &DeviceSet, s: &Sample) -> Vec<f64> {
    devices
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let out = match u.kind {
                devices::UnitKind::Generator => s.p_m[devices.slot(i)],
                devices::UnitKind::ControllableLoad => s.d_c[devices.slot(i)],
            };
            u.cost_q * out.abs()
        })
        .collect()
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(*x), h.max(*x)));
    hi - lo
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn steady_state_metrics(traj: &Trajectory, devices: &DeviceSet, window: f64) -> Result<SteadyStateMetrics> {
    let win = traj.final_window(window)?;
    let last = traj.last();
    let max_abs_omega_end = win
        .iter()
        .flat_map(|s| s.omega.iter())
        .fold(0.0_f64, |m, w| m.max(w.abs()));
    let p_c_spread_end = win.iter().map(|s| spread(&s.p_c)).fold(0.0, f64::max);
    let marginal_cost_spread_end = win
        .iter()
        .map(|s| spread(&marginal_costs(devices, s)))
        .fold(0.0, f64::max);
    Ok(SteadyStateMetrics {
        max_abs_omega_end,
        settle_time_0_01_hz: traj.settle_time_to(FREQ_THRESHOLD_0_01_HZ),
        p_c_spread_end,
        p_c_mean_end: mean(&last.p_c),
        marginal_cost_spread_end,
        marginal_cost_mean_end: mean(&marginal_costs(devices, last)),
    })
}
