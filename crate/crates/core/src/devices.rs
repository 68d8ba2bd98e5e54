//! Generation and controllable-demand dynamics.
//!
//! Every active unit sits at one bus and carries its own share of
//! uncontrollable load. The global unit order defines the stacking of the
//! prosumption vector `s̃`, of the per-unit power commands and of the privacy
//! signals.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Generator,
    ControllableLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub bus: usize,
    pub kind: UnitKind,
    /// Generator lag time constant τ (s). Unused for loads.
    pub tau: f64,
    /// Generator lag gain m. Unused for loads.
    pub droop_m: f64,
    /// Static response gain h.
    pub damping_h: f64,
    /// Quadratic cost coefficient q.
    pub cost_q: f64,
    /// Uncontrollable load p^L attached to this unit (pu).
    pub uncontrollable_load: f64,
}

/// Immutable set of active units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSet {
    bus_count: usize,
    units: Vec<Unit>,
    /// unit index -> slot in the generator (or load) sub-vector
    slot: Vec<usize>,
    generators: Vec<usize>,
    loads: Vec<usize>,
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl DeviceSet {
    pub fn new(bus_count: usize, units: Vec<Unit>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::config("at least one active unit is required"));
        }
        let mut slot = Vec::with_capacity(units.len());
        let (mut generators, mut loads) = (Vec::new(), Vec::new());
        for (i, u) in units.iter().enumerate() {
            if u.bus >= bus_count {
                return Err(Error::config(format!("unit {i} sits at bus {} >= {bus_count}", u.bus)));
            }
            if !positive(u.damping_h) || !positive(u.cost_q) {
                return Err(Error::config(format!("unit {i}: h and q must be positive")));
            }
            if !u.uncontrollable_load.is_finite() {
                return Err(Error::config(format!("unit {i}: uncontrollable load is not finite")));
            }
            match u.kind {
                UnitKind::Generator => {
                    if !positive(u.tau) || !positive(u.droop_m) {
                        return Err(Error::config(format!("generator {i}: tau and m must be positive")));
                    }
                    slot.push(generators.len());
                    generators.push(i);
                }
                UnitKind::ControllableLoad => {
                    slot.push(loads.len());
                    loads.push(i);
                }
            }
        }
        Ok(Self {
            bus_count,
            units,
            slot,
            generators,
            loads,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn unit(&self, i: usize) -> &Unit {
        &self.units[i]
    }

    /// Unit indices of generators, in generator-slot order.
    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    /// Unit indices of controllable loads, in load-slot order.
    pub fn loads(&self) -> &[usize] {
        &self.loads
    }

    /// Slot of unit `i` within the generator or load sub-vector.
    pub fn slot(&self, i: usize) -> usize {
        self.slot[i]
    }

    pub fn unit_buses(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.bus).collect()
    }

    /// |N_j|: number of active units at each bus.
    pub fn units_per_bus(&self) -> Vec<usize> {
        let mut n = vec![0; self.bus_count];
        for u in &self.units {
            n[u.bus] += 1;
        }
        n
    }

    pub fn cost_q(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.cost_q).collect()
    }

    pub fn damping_h(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.damping_h).collect()
    }

    pub fn uncontrollable_loads(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.uncontrollable_load).collect()
    }

    /// Copy with `delta` added to the uncontrollable load of `unit`.
    pub fn with_load_step(&self, unit: usize, delta: f64) -> Result<Self> {
        if unit >= self.units.len() {
            return Err(Error::config(format!("load step on unknown unit {unit}")));
        }
        let mut out = self.clone();
        out.units[unit].uncontrollable_load += delta;
        Ok(out)
    }

    /// Static gain from a common power command to the unit's prosumption:
    /// m + h for generators, h for loads.
    pub fn steady_gain(&self, i: usize) -> f64 {
        let u = &self.units[i];
        match u.kind {
            UnitKind::Generator => u.droop_m + u.damping_h,
            UnitKind::ControllableLoad => u.damping_h,
        }
    }

    /// Whether `q(m + h) = 1` (generators) and `q h = 1` (loads) hold within `tol`.
    pub fn has_optimal_gains(&self, tol: f64) -> bool {
        (0..self.units.len()).all(|i| (self.units[i].cost_q * self.steady_gain(i) - 1.0).abs() <= tol)
    }
}

/// Internal generator states x, one per generator in slot order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceState {
    pub x: Vec<f64>,
}

impl DeviceState {
    pub fn zeros(devices: &DeviceSet) -> Self {
        Self {
            x: vec![0.0; devices.generators.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceOutputs {
    /// p^M per generator slot.
    pub p_m: Vec<f64>,
    /// d^c per load slot.
    pub d_c: Vec<f64>,
    /// s̃ per unit: −p^M (generators) or d^c (loads), plus p^L.
    pub s_tilde: Vec<f64>,
    /// Per-bus generation minus demand.
    pub net_injection: Vec<f64>,
}

fn check_inputs(devices: &DeviceSet, dstate: &DeviceState, u: &[f64], omega: &[f64]) -> Result<()> {
    check_len("generator state", dstate.x.len(), devices.generators.len())?;
    check_len("unit inputs", u.len(), devices.units.len())?;
    check_len("bus frequencies", omega.len(), devices.bus_count)
}

/// Static device outputs for input `u` and local frequencies `omega`.
pub fn device_outputs(devices: &DeviceSet, dstate: &DeviceState, u: &[f64], omega: &[f64]) -> Result<DeviceOutputs> {
    check_inputs(devices, dstate, u, omega)?;
    let mut p_m = vec![0.0; devices.generators.len()];
    let mut d_c = vec![0.0; devices.loads.len()];
    let mut s_tilde = vec![0.0; devices.units.len()];
    let mut net_injection = vec![0.0; devices.bus_count];
    for (i, unit) in devices.units.iter().enumerate() {
        let drive = unit.damping_h * (u[i] - omega[unit.bus]);
        let s = match unit.kind {
            UnitKind::Generator => {
                let p = dstate.x[devices.slot[i]] + drive;
                p_m[devices.slot[i]] = p;
                -p
            }
            UnitKind::ControllableLoad => {
                let d = -drive;
                d_c[devices.slot[i]] = d;
                d
            }
        };
        s_tilde[i] = s + unit.uncontrollable_load;
        net_injection[unit.bus] -= s_tilde[i];
    }
    Ok(DeviceOutputs {
        p_m,
        d_c,
        s_tilde,
        net_injection,
    })
}

/// Generator lag dynamics `ẋ = (−x + m(u − ω)) / τ`.
pub fn device_rhs(devices: &DeviceSet, dstate: &DeviceState, u: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
    check_inputs(devices, dstate, u, omega)?;
    Ok(devices
        .generators
        .iter()
        .zip(&dstate.x)
        .map(|(&i, &x)| {
            let g = &devices.units[i];
            (-x + g.droop_m * (u[i] - omega[g.bus])) / g.tau
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub droop_m: f64,
    pub damping_h: f64,
}

/// Gains that make the closed-loop equilibrium cost-optimal.
///
/// Loads get `h = 1/q`. Generators get `m + h = 1/q`, split as
/// `h = split/q`, `m = (1 − split)/q`.
pub fn design_optimal_gains(cost_q: f64, kind: UnitKind, droop_split: f64) -> Result<Gains> {
    if !positive(cost_q) {
        return Err(Error::config(format!(
            "cost coefficient must be positive, got {cost_q}"
        )));
    }
    match kind {
        UnitKind::ControllableLoad => Ok(Gains {
            droop_m: 0.0,
            damping_h: 1.0 / cost_q,
        }),
        UnitKind::Generator => {
            if !(droop_split > 0.0 && droop_split < 1.0) {
                return Err(Error::config(format!(
                    "droop split must lie in (0, 1), got {droop_split}"
                )));
            }
            Ok(Gains {
                droop_m: (1.0 - droop_split) / cost_q,
                damping_h: droop_split / cost_q,
            })
        }
    }
}
