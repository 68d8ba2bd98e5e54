//! JSON scenario files and the random scenario generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::devices::{design_optimal_gains, DeviceSet, Unit, UnitKind};
use crate::error::{check_len, Error, Result};
use crate::graph::is_connected;
use crate::network::{Line, NetworkModel};
use crate::schemes::{max_feasible_beta, CommGraph, PrivacyParams, SchemeConfig, SchemeKind};
use crate::sim::{Disturbance, Scenario};

pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_DROOP_SPLIT: f64 = 0.5;
pub const DEFAULT_INTEGRAL_GAIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub network: NetworkSection,
    pub devices: Vec<DeviceEntry>,
    pub comm: CommSection,
    pub scheme: SchemeSection,
    pub sim: SimSection,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub buses: usize,
    pub lines: Vec<LineEntry>,
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub bus: usize,
    pub kind: UnitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub q: f64,
    pub p_l: f64,
    /// Share of 1/q assigned to the static gain h (generators only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub droop_split: Option<f64>,
}

/// Unit-level communication graph used by the per-unit schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSection {
    pub edges: Vec<(usize, usize)>,
    pub gamma_psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeKind,
    /// Per-unit controller time constants.
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integral_gain: Option<f64>,
    /// Per-bus time constants for the bus-level scheme; defaults to the sum of
    /// the unit constants at each bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_bus: Option<Vec<f64>>,
    /// Per-line edge constants for the bus-level scheme; defaults to the mean
    /// of the unit-level edge constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_psi_bus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    pub beta: Vec<f64>,
    pub beta_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub record_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEntry {
    pub t: f64,
    pub unit: usize,
    pub delta: f64,
}

/// Deserializes JSON, reporting the path of the first offending field.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

impl ScenarioFile {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = from_json_str(text)?;
        file.build(None)?;
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn network_model(&self) -> Result<NetworkModel> {
        let n = &self.network;
        let lines = n
            .lines
            .iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                susceptance: l.b,
            })
            .collect();
        NetworkModel::new(n.buses, lines, n.inertia.clone(), n.damping.clone())
    }

    pub fn device_set(&self) -> Result<DeviceSet> {
        let units = self
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if d.kind == UnitKind::ControllableLoad && (d.tau.is_some() || d.droop_split.is_some()) {
                    return Err(Error::Schema {
                        path: format!("devices[{i}]"),
                        message: "tau and droop_split apply to generators only".into(),
                    });
                }
                let g = design_optimal_gains(d.q, d.kind, d.droop_split.unwrap_or(DEFAULT_DROOP_SPLIT))?;
                Ok(Unit {
                    bus: d.bus,
                    kind: d.kind,
                    tau: match d.kind {
                        UnitKind::Generator => d.tau.unwrap_or(DEFAULT_TAU),
                        UnitKind::ControllableLoad => 0.0,
                    },
                    droop_m: g.droop_m,
                    damping_h: g.damping_h,
                    cost_q: d.q,
                    uncontrollable_load: d.p_l,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DeviceSet::new(self.network.buses, units)
    }

    /// Builds the runnable scenario, optionally under a different scheme.
    pub fn build(&self, kind: Option<SchemeKind>) -> Result<Scenario> {
        let model = self.network_model()?;
        let devices = self.device_set()?;
        let kind = kind.unwrap_or(self.scheme.kind);
        let s = &self.scheme;
        let units = devices.unit_count();
        check_len("scheme.gamma", s.gamma.len(), units)?;

        let (comm, gamma, gamma_psi) = match kind {
            SchemeKind::Integral => (CommGraph::edgeless(units), s.gamma.clone(), Vec::new()),
            SchemeKind::PrimalDual => {
                let comm = CommGraph::new(model.bus_count(), model.line_pairs())?;
                let gamma = match &s.gamma_bus {
                    Some(g) => g.clone(),
                    None => {
                        let mut g = vec![0.0; model.bus_count()];
                        for (u, gu) in devices.units().iter().zip(&s.gamma) {
                            g[u.bus] += gu;
                        }
                        // buses without units still need a controller constant
                        let fallback = s.gamma.iter().sum::<f64>() / units as f64;
                        g.iter().map(|&v| if v > 0.0 { v } else { fallback }).collect()
                    }
                };
                let gamma_psi = match &s.gamma_psi_bus {
                    Some(g) => g.clone(),
                    None => {
                        let gp = &self.comm.gamma_psi;
                        let mean = if gp.is_empty() {
                            1.0
                        } else {
                            gp.iter().sum::<f64>() / gp.len() as f64
                        };
                        vec![mean; comm.edge_count()]
                    }
                };
                (comm, gamma, gamma_psi)
            }
            SchemeKind::ExtendedPrimalDual | SchemeKind::PrivacyPreserving => (
                CommGraph::new(units, self.comm.edges.clone())?,
                s.gamma.clone(),
                self.comm.gamma_psi.clone(),
            ),
        };

        let privacy = match (&s.privacy, kind) {
            (Some(p), SchemeKind::PrivacyPreserving) => Some(PrivacyParams::new(
                p.beta.clone(),
                p.beta_hat.clone(),
                p.xi_max,
                p.safety,
                &gamma,
                self.sim.seed,
            )?),
            _ => None,
        };
        let scheme = SchemeConfig {
            kind,
            gamma,
            gamma_psi,
            integral_gain: s.integral_gain.unwrap_or(DEFAULT_INTEGRAL_GAIN),
            privacy,
        };
        let sc = Scenario {
            model,
            devices,
            comm,
            scheme,
            disturbances: self
                .disturbances
                .iter()
                .map(|d| Disturbance {
                    time: d.t,
                    unit: d.unit,
                    delta: d.delta,
                })
                .collect(),
            t_end: self.sim.t_end,
            dt: self.sim.dt,
            seed: self.sim.seed,
            record_stride: self.sim.record_stride,
            initial: None,
        };
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "style")]
pub enum CommStyle {
    /// Random spanning tree.
    Tree,
    /// Random spanning tree plus each remaining pair with probability `edge_probability`.
    RandomConnected { edge_probability: f64 },
}

/// Parameters of a random scenario. Everything is drawn from one seeded stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomScenarioSpec {
    pub bus_count: usize,
    pub units_per_bus: (usize, usize),
    pub q_range: (f64, f64),
    pub comm_style: CommStyle,
    /// Total load step, split evenly over `disturbed_units` random units.
    pub disturbance_magnitude: f64,
    pub disturbed_units: usize,
    pub disturbance_time: f64,
    pub seed: u64,
    pub kind: SchemeKind,
    /// Probability that a unit is a controllable load rather than a generator.
    pub load_fraction: f64,
    pub initial_load_range: (f64, f64),
    pub susceptance_range: (f64, f64),
    pub inertia_range: (f64, f64),
    pub damping_range: (f64, f64),
    pub tau_range: (f64, f64),
    pub gamma: f64,
    pub gamma_psi: f64,
    pub integral_gain: f64,
    pub beta_hat: f64,
    /// Fraction of the largest feasible β used for each unit.
    pub beta_fraction: f64,
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
}

impl Default for RandomScenarioSpec {
    fn default() -> Self {
        Self {
            bus_count: 10,
            units_per_bus: (2, 6),
            q_range: (50.0, 250.0),
            comm_style: CommStyle::RandomConnected { edge_probability: 0.05 },
            disturbance_magnitude: 0.2,
            disturbed_units: 1,
            disturbance_time: 1.0,
            seed: 0,
            kind: SchemeKind::ExtendedPrimalDual,
            load_fraction: 0.5,
            initial_load_range: (0.0, 0.02),
            susceptance_range: (5.0, 15.0),
            inertia_range: (0.1, 0.3),
            damping_range: (0.05, 0.15),
            tau_range: (0.5, 2.0),
            gamma: 0.03,
            gamma_psi: 0.1,
            integral_gain: 100.0,
            beta_hat: 0.002,
            beta_fraction: 0.8,
            t_end: 120.0,
            dt: 0.01,
            record_stride: 10,
        }
    }
}

const MAX_ATTEMPTS: usize = 100;

fn check_range(what: &str, r: (f64, f64)) -> Result<()> {
    let ok = r.0.is_finite() && r.1.is_finite() && r.0 > 0.0 && r.0 <= r.1;
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("{what} range [{}, {}] is invalid", r.0, r.1)))
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..r.1)
    }
}

/// Random spanning tree over `n` nodes, plus extra pairs for the random style.
fn random_graph(rng: &mut ChaCha8Rng, n: usize, style: CommStyle) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|k| (order[rng.gen_range(0..k)], order[k])).collect();
    if let CommStyle::RandomConnected { edge_probability } = style {
        for a in 0..n {
            for b in a + 1..n {
                let p = rng.gen::<f64>();
                if p < edge_probability && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
                    edges.push((a, b));
                }
            }
        }
    }
    edges
}

impl RandomScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bus_count == 0 {
            return Err(Error::config("bus_count must be positive"));
        }
        if self.units_per_bus.0 > self.units_per_bus.1 || self.units_per_bus.1 == 0 {
            return Err(Error::config("units_per_bus range is invalid"));
        }
        check_range("q", self.q_range)?;
        check_range("susceptance", self.susceptance_range)?;
        check_range("inertia", self.inertia_range)?;
        check_range("damping", self.damping_range)?;
        check_range("tau", self.tau_range)?;
        let (lo, hi) = self.initial_load_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("initial load range is invalid"));
        }
        if let CommStyle::RandomConnected { edge_probability } = self.comm_style {
            if !(0.0..=1.0).contains(&edge_probability) {
                return Err(Error::config("edge_probability must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.load_fraction) {
            return Err(Error::config("load_fraction must lie in [0, 1]"));
        }
        if !(self.beta_fraction >= 0.0 && self.beta_fraction < 1.0) {
            return Err(Error::config("beta_fraction must lie in [0, 1)"));
        }
        if self.beta_hat < 0.0 || self.gamma <= 0.0 || self.gamma_psi <= 0.0 || self.integral_gain <= 0.0 {
            return Err(Error::config("gains and time constants must be positive"));
        }
        Ok(())
    }
}

/// Draws a random scenario. Deterministic in `spec.seed`.
pub fn gen_scenario(spec: &RandomScenarioSpec) -> Result<ScenarioFile> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.bus_count;

    let lines: Vec<LineEntry> = random_graph(&mut rng, n, CommStyle::Tree)
        .into_iter()
        .map(|(from, to)| LineEntry {
            from,
            to,
            b: uniform(&mut rng, spec.susceptance_range),
        })
        .collect();
    let inertia: Vec<f64> = (0..n).map(|_| uniform(&mut rng, spec.inertia_range)).collect();
    let damping: Vec<f64> = (0..n).map(|_| uniform(&mut rng, spec.damping_range)).collect();

    let mut devices = Vec::new();
    for bus in 0..n {
        let count = rng.gen_range(spec.units_per_bus.0..=spec.units_per_bus.1);
        for _ in 0..count {
            let is_load = rng.gen::<f64>() < spec.load_fraction;
            let (lo, hi) = spec.initial_load_range;
            let p_l = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            let q = uniform(&mut rng, spec.q_range);
            let tau = uniform(&mut rng, spec.tau_range);
            devices.push(if is_load {
                DeviceEntry {
                    bus,
                    kind: UnitKind::ControllableLoad,
                    tau: None,
                    q,
                    p_l,
                    droop_split: None,
                }
            } else {
                DeviceEntry {
                    bus,
                    kind: UnitKind::Generator,
                    tau: Some(tau),
                    q,
                    p_l,
                    droop_split: None,
                }
            });
        }
    }
    if devices.is_empty() {
        return Err(Error::config("generated scenario has no units; raise units_per_bus"));
    }
    let units = devices.len();
    let units_at_bus = {
        let mut c = vec![0usize; n];
        devices.iter().for_each(|d| c[d.bus] += 1);
        c
    };

    // privacy bounds; redraw q for units whose h cannot host the requested β̂
    let mut beta = Vec::with_capacity(units);
    for d in devices.iter_mut() {
        let mut attempts = 0;
        loop {
            let h = design_optimal_gains(d.q, d.kind, DEFAULT_DROOP_SPLIT)?.damping_h;
            let d_over_n = damping[d.bus] / units_at_bus[d.bus] as f64;
            if spec.beta_hat < 2.0 * h {
                if let Ok(b) = max_feasible_beta(h, d_over_n, spec.beta_hat) {
                    beta.push(spec.beta_fraction * b);
                    break;
                }
            }
            attempts += 1;
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::Infeasible(format!(
                    "no cost coefficient in [{}, {}] admits beta_hat = {} after {MAX_ATTEMPTS} draws",
                    spec.q_range.0, spec.q_range.1, spec.beta_hat
                )));
            }
            d.q = uniform(&mut rng, spec.q_range);
        }
    }

    let comm_edges = random_graph(&mut rng, units, spec.comm_style);
    let gamma_psi = vec![spec.gamma_psi; comm_edges.len()];

    let mut picks: Vec<usize> = (0..units).collect();
    picks.shuffle(&mut rng);
    let k = spec.disturbed_units.clamp(1, units);
    let mut disturbed: Vec<usize> = picks[..k].to_vec();
    disturbed.sort_unstable();
    let disturbances = disturbed
        .into_iter()
        .map(|unit| DisturbanceEntry {
            t: spec.disturbance_time,
            unit,
            delta: spec.disturbance_magnitude / k as f64,
        })
        .collect();

    let file = ScenarioFile {
        network: NetworkSection {
            buses: n,
            lines,
            inertia,
            damping,
        },
        devices,
        comm: CommSection {
            edges: comm_edges,
            gamma_psi,
        },
        scheme: SchemeSection {
            kind: spec.kind,
            gamma: vec![spec.gamma; units],
            integral_gain: Some(spec.integral_gain),
            gamma_bus: None,
            gamma_psi_bus: None,
            privacy: Some(PrivacySection {
                beta,
                beta_hat: vec![spec.beta_hat; units],
                xi_max: None,
                safety: None,
            }),
        },
        sim: SimSection {
            t_end: spec.t_end,
            dt: spec.dt,
            seed: spec.seed,
            record_stride: spec.record_stride,
        },
        disturbances,
    };
    debug_assert!(is_connected(units, &file.comm.edges));
    for kind in SchemeKind::ALL {
        file.build(Some(kind))?;
    }
    Ok(file)
}
