//! Economic-dispatch optimum, closed-loop equilibria and Lyapunov functions.

use serde::{Deserialize, Serialize};

use crate::devices::{DeviceSet, UnitKind};
use crate::error::{check_len, Error, Result};
use crate::network::{self, NetworkModel};
use crate::schemes::{bus_zeta, CommGraph, SchemeConfig, SchemeKind};
use crate::sim::ClosedLoopState;

/// Minimizer of the quadratic prosumption cost under power balance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktSolution {
    /// Multiplier of the balance constraint.
    pub lambda: f64,
    /// Optimal generation per generator slot.
    pub p_m: Vec<f64>,
    /// Optimal controllable demand per load slot.
    pub d_c: Vec<f64>,
    pub total_cost: f64,
}

/// Closed-form KKT point: `q p^M = −λ`, `q d^c = λ`, balance.
pub fn solve_kkt(devices: &DeviceSet) -> KktSolution {
    let total_load: f64 = devices.units().iter().map(|u| u.uncontrollable_load).sum();
    let inv_q: f64 = devices.units().iter().map(|u| 1.0 / u.cost_q).sum();
    let lambda = -total_load / inv_q;
    let p_m: Vec<f64> = devices
        .generators()
        .iter()
        .map(|&i| -lambda / devices.unit(i).cost_q)
        .collect();
    let d_c: Vec<f64> = devices
        .loads()
        .iter()
        .map(|&i| lambda / devices.unit(i).cost_q)
        .collect();
    let total_cost = devices
        .generators()
        .iter()
        .zip(&p_m)
        .chain(devices.loads().iter().zip(&d_c))
        .map(|(&i, v)| 0.5 * devices.unit(i).cost_q * v * v)
        .sum();
    KktSolution {
        lambda,
        p_m,
        d_c,
        total_cost,
    }
}

/// Complete equilibrium of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub lambda: f64,
    pub total_cost: f64,
    /// Equilibrium generation per generator slot.
    pub p_m_star: Vec<f64>,
    /// Equilibrium controllable demand per load slot.
    pub d_c_star: Vec<f64>,
    pub s_tilde_star: Vec<f64>,
    /// Synchronized power command, one entry per controller.
    pub p_c_star: Vec<f64>,
    pub x_star: Vec<f64>,
    pub eta_star: Vec<f64>,
    pub psi_star: Vec<f64>,
    pub omega_star: Vec<f64>,
}

impl EquilibriumSolution {
    /// The equilibrium as a closed-loop state with ξ = 0 and no held noise.
    pub fn state(&self, units: usize) -> ClosedLoopState {
        ClosedLoopState {
            eta: self.eta_star.clone(),
            omega: self.omega_star.clone(),
            x: self.x_star.clone(),
            p_c: self.p_c_star.clone(),
            psi: self.psi_star.clone(),
            xi: vec![0.0; units],
        }
    }
}

/// Builds the equilibrium of the closed loop for the current loads.
///
/// The common command solves the balance with the actual device gains. When
/// the gains satisfy the optimality conditions it equals `−λ`; otherwise a
/// warning is logged and the returned point is the (suboptimal) closed-loop
/// equilibrium.
pub fn build_equilibrium(
    model: &NetworkModel,
    devices: &DeviceSet,
    comm: &CommGraph,
    kind: SchemeKind,
    kkt: &KktSolution,
) -> Result<EquilibriumSolution> {
    if model.bus_count() != devices.bus_count() {
        return Err(Error::config("device set and network disagree on the bus count"));
    }
    if !devices.has_optimal_gains(1e-9) {
        log::warn!("device gains violate q(m+h)=1 / qh=1; the equilibrium is not cost-optimal");
    }
    let total_load: f64 = devices.units().iter().map(|u| u.uncontrollable_load).sum();
    let total_gain: f64 = (0..devices.unit_count()).map(|i| devices.steady_gain(i)).sum();
    let common = total_load / total_gain;

    let mut p_m_star = vec![0.0; devices.generators().len()];
    let mut d_c_star = vec![0.0; devices.loads().len()];
    let mut x_star = vec![0.0; devices.generators().len()];
    let mut s_tilde_star = vec![0.0; devices.unit_count()];
    for (i, u) in devices.units().iter().enumerate() {
        let slot = devices.slot(i);
        let s = match u.kind {
            UnitKind::Generator => {
                x_star[slot] = u.droop_m * common;
                p_m_star[slot] = (u.droop_m + u.damping_h) * common;
                -p_m_star[slot]
            }
            UnitKind::ControllableLoad => {
                d_c_star[slot] = -u.damping_h * common;
                d_c_star[slot]
            }
        };
        s_tilde_star[i] = s + u.uncontrollable_load;
    }

    let injection: Vec<f64> = bus_zeta(devices, &s_tilde_star).into_iter().map(|z| -z).collect();
    let eta_star = network::dc_power_flow(model, &injection)?.eta;

    let controllers = if kind.is_bus_level() {
        devices.bus_count()
    } else {
        devices.unit_count()
    };
    let psi_star = if kind.uses_consensus() {
        check_len("communication graph nodes", comm.node_count(), controllers)?;
        let target = if kind.is_bus_level() {
            bus_zeta(devices, &s_tilde_star)
        } else {
            s_tilde_star.clone()
        };
        comm.min_norm_preimage(&target)?
    } else {
        Vec::new()
    };

    Ok(EquilibriumSolution {
        lambda: kkt.lambda,
        total_cost: kkt.total_cost,
        p_m_star,
        d_c_star,
        s_tilde_star,
        p_c_star: vec![common; controllers],
        x_star,
        eta_star,
        psi_star,
        omega_star: vec![0.0; model.bus_count()],
    })
}

/// Lyapunov function and its components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LyapunovValue {
    pub total: f64,
    /// ½ Σ M (ω − ω*)²
    pub frequency: f64,
    /// ½ Σ B (η − η*)²
    pub angle: f64,
    /// ½ (pᶜ − pᶜ*)ᵀ (Γ + Ξ) (pᶜ − pᶜ*); Ξ = 0 for the extended scheme.
    pub command: f64,
    /// ½ (ψ − ψ*)ᵀ Γ̃ (ψ − ψ*)
    pub consensus: f64,
    /// Σ τ/(2m) (x − x*)²
    pub device: f64,
}

/// Evaluates V (extended primal-dual) or V̂ (privacy-preserving) at `state`.
pub fn lyapunov_value(
    model: &NetworkModel,
    devices: &DeviceSet,
    comm: &CommGraph,
    cfg: &SchemeConfig,
    eq: &EquilibriumSolution,
    state: &ClosedLoopState,
) -> Result<LyapunovValue> {
    if !cfg.kind.has_lyapunov() {
        return Err(Error::UnsupportedScheme(format!(
            "no Lyapunov certificate for the {} scheme",
            cfg.kind
        )));
    }
    check_len("eta", state.eta.len(), model.line_count())?;
    check_len("omega", state.omega.len(), model.bus_count())?;
    check_len("x", state.x.len(), devices.generators().len())?;
    check_len("p_c", state.p_c.len(), devices.unit_count())?;
    check_len("psi", state.psi.len(), comm.edge_count())?;
    check_len("gamma_psi", cfg.gamma_psi.len(), comm.edge_count())?;
    let private = cfg.kind == SchemeKind::PrivacyPreserving;
    if private {
        check_len("xi", state.xi.len(), devices.unit_count())?;
    }

    let sq = |a: f64, b: f64| (a - b) * (a - b);
    let frequency = 0.5
        * (0..model.bus_count())
            .map(|j| model.inertia()[j] * sq(state.omega[j], eq.omega_star[j]))
            .sum::<f64>();
    let angle = 0.5
        * model
            .lines()
            .iter()
            .enumerate()
            .map(|(l, line)| line.susceptance * sq(state.eta[l], eq.eta_star[l]))
            .sum::<f64>();
    let command = 0.5
        * (0..devices.unit_count())
            .map(|i| {
                let w = cfg.gamma[i] + if private { state.xi[i] } else { 0.0 };
                w * sq(state.p_c[i], eq.p_c_star[i])
            })
            .sum::<f64>();
    let consensus = 0.5
        * (0..comm.edge_count())
            .map(|e| cfg.gamma_psi[e] * sq(state.psi[e], eq.psi_star[e]))
            .sum::<f64>();
    let device = devices
        .generators()
        .iter()
        .enumerate()
        .map(|(g, &i)| {
            let u = devices.unit(i);
            u.tau / (2.0 * u.droop_m) * sq(state.x[g], eq.x_star[g])
        })
        .sum::<f64>();
    Ok(LyapunovValue {
        total: frequency + angle + command + consensus + device,
        frequency,
        angle,
        command,
        consensus,
        device,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{design_optimal_gains, Unit};
    use crate::network::Line;

    fn unit(bus: usize, kind: UnitKind, q: f64, pl: f64) -> Unit {
        let g = design_optimal_gains(q, kind, 0.5).unwrap();
        Unit {
            bus,
            kind,
            tau: 1.0,
            droop_m: g.droop_m,
            damping_h: g.damping_h,
            cost_q: q,
            uncontrollable_load: pl,
        }
    }

    #[test]
    fn no_disturbance_means_zero_dispatch() {
        let ds = DeviceSet::new(
            1,
            vec![
                unit(0, UnitKind::Generator, 3.0, 0.0),
                unit(0, UnitKind::ControllableLoad, 2.0, 0.0),
            ],
        )
        .unwrap();
        let k = solve_kkt(&ds);
        assert_eq!(k.lambda, 0.0);
        assert!(k.p_m.iter().chain(&k.d_c).all(|v| *v == 0.0));
        assert_eq!(k.total_cost, 0.0);
    }

    #[test]
    fn two_generators() {
        let ds = DeviceSet::new(
            1,
            vec![
                unit(0, UnitKind::Generator, 1.0, 3.0),
                unit(0, UnitKind::Generator, 2.0, 0.0),
            ],
        )
        .unwrap();
        let k = solve_kkt(&ds);
        assert!((k.lambda + 2.0).abs() < 1e-12);
        assert!((k.p_m[0] - 2.0).abs() < 1e-12 && (k.p_m[1] - 1.0).abs() < 1e-12);
        assert!((k.total_cost - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generator_and_load_share_the_disturbance() {
        let ds = DeviceSet::new(
            1,
            vec![
                unit(0, UnitKind::Generator, 1.0, 1.0),
                unit(0, UnitKind::ControllableLoad, 1.0, 0.0),
            ],
        )
        .unwrap();
        let k = solve_kkt(&ds);
        assert!((k.lambda + 0.5).abs() < 1e-12);
        assert!((k.p_m[0] - 0.5).abs() < 1e-12);
        // the load sheds consumption: d^c = λ/q < 0
        assert!((k.d_c[0] + 0.5).abs() < 1e-12);
        let balance = k.p_m[0] - k.d_c[0] - 1.0;
        assert!(balance.abs() < 1e-12);
    }

    #[test]
    fn two_unit_consensus_state() {
        let model = NetworkModel::new(1, vec![], vec![1.0], vec![1.0]).unwrap();
        // s̃* = (0.5, −0.5): a load carrying all p^L and a generator with none
        let ds = DeviceSet::new(
            1,
            vec![
                unit(0, UnitKind::ControllableLoad, 2.0, 1.0),
                unit(0, UnitKind::Generator, 2.0, 0.0),
            ],
        )
        .unwrap();
        let comm = CommGraph::new(2, vec![(0, 1)]).unwrap();
        let eq = build_equilibrium(&model, &ds, &comm, SchemeKind::ExtendedPrimalDual, &solve_kkt(&ds)).unwrap();
        assert!((eq.s_tilde_star[0] - 0.5).abs() < 1e-12);
        assert!((eq.psi_star[0] - 0.5).abs() < 1e-12);
        assert!((eq.p_c_star[0] + eq.lambda).abs() < 1e-12);
    }

    #[test]
    fn zero_load_equilibrium_is_zero() {
        let model = NetworkModel::new(
            2,
            vec![Line {
                from: 0,
                to: 1,
                susceptance: 3.0,
            }],
            vec![1.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        let ds = DeviceSet::new(
            2,
            vec![
                unit(0, UnitKind::Generator, 2.0, 0.0),
                unit(1, UnitKind::ControllableLoad, 5.0, 0.0),
            ],
        )
        .unwrap();
        let comm = CommGraph::new(2, vec![(0, 1)]).unwrap();
        let eq = build_equilibrium(&model, &ds, &comm, SchemeKind::ExtendedPrimalDual, &solve_kkt(&ds)).unwrap();
        for v in [&eq.p_c_star, &eq.x_star, &eq.eta_star, &eq.psi_star, &eq.s_tilde_star] {
            assert!(v.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn lyapunov_rejects_uncertified_schemes() {
        let model = NetworkModel::new(1, vec![], vec![1.0], vec![1.0]).unwrap();
        let ds = DeviceSet::new(1, vec![unit(0, UnitKind::ControllableLoad, 1.0, 0.0)]).unwrap();
        let comm = CommGraph::new(1, vec![]).unwrap();
        let eq = build_equilibrium(&model, &ds, &comm, SchemeKind::Integral, &solve_kkt(&ds)).unwrap();
        for kind in [SchemeKind::Integral, SchemeKind::PrimalDual] {
            let cfg = SchemeConfig {
                kind,
                gamma: vec![1.0],
                gamma_psi: vec![],
                integral_gain: 1.0,
                privacy: None,
            };
            let r = lyapunov_value(&model, &ds, &comm, &cfg, &eq, &eq.state(1));
            assert!(matches!(r, Err(Error::UnsupportedScheme(_))));
        }
    }
}
