//! Lossless, linearized power network: swing dynamics and DC power flow.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graph;

/// Transmission line from `from` to `to`; positive flow means power leaves `from`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Susceptance magnitude B_ij in per unit.
    pub susceptance: f64,
}

/// Buses, lines, inertia and damping of the electrical network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    bus_count: usize,
    lines: Vec<Line>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
}

impl NetworkModel {
    pub fn new(bus_count: usize, lines: Vec<Line>, inertia: Vec<f64>, damping: Vec<f64>) -> Result<Self> {
        if bus_count == 0 {
            return Err(Error::config("network needs at least one bus"));
        }
        check_len("inertia", inertia.len(), bus_count)?;
        check_len("damping", damping.len(), bus_count)?;
        let pairs: Vec<_> = lines.iter().map(|l| (l.from, l.to)).collect();
        graph::validate_edges("transmission", bus_count, &pairs)?;
        if let Some((i, l)) = lines
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.susceptance > 0.0 && l.susceptance.is_finite()))
        {
            return Err(Error::config(format!(
                "line {i} susceptance must be positive, got {}",
                l.susceptance
            )));
        }
        for (name, v) in [("inertia", &inertia), ("damping", &damping)] {
            if let Some((j, x)) = v.iter().enumerate().find(|(_, x)| !(**x > 0.0 && x.is_finite())) {
                return Err(Error::config(format!("{name} at bus {j} must be positive, got {x}")));
            }
        }
        Ok(Self {
            bus_count,
            lines,
            inertia,
            damping,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn inertia(&self) -> &[f64] {
        &self.inertia
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    pub(crate) fn line_pairs(&self) -> Vec<(usize, usize)> {
        self.lines.iter().map(|l| (l.from, l.to)).collect()
    }
}

/// Per-line angle differences and per-bus frequency deviations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// η_ij in rad, one per line.
    pub eta: Vec<f64>,
    /// ω_j in rad/s, deviation from nominal, one per bus.
    pub omega: Vec<f64>,
}

impl PlantState {
    pub fn zeros(model: &NetworkModel) -> Self {
        Self {
            eta: vec![0.0; model.line_count()],
            omega: vec![0.0; model.bus_count()],
        }
    }

    fn check(&self, model: &NetworkModel) -> Result<()> {
        check_len("eta", self.eta.len(), model.line_count())?;
        check_len("omega", self.omega.len(), model.bus_count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantDerivative {
    pub eta_dot: Vec<f64>,
    pub omega_dot: Vec<f64>,
}

/// Line power `p_ij = B_ij η_ij`.
pub fn line_flows(model: &NetworkModel, state: &PlantState) -> Result<Vec<f64>> {
    check_len("eta", state.eta.len(), model.line_count())?;
    Ok(model
        .lines
        .iter()
        .zip(&state.eta)
        .map(|(l, eta)| l.susceptance * eta)
        .collect())
}

/// Net flow leaving each bus over the transmission lines.
pub(crate) fn bus_outflow(model: &NetworkModel, flows: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.bus_count];
    for (l, p) in model.lines.iter().zip(flows) {
        out[l.from] += p;
        out[l.to] -= p;
    }
    out
}

/// Swing-equation right-hand side.
///
/// `net_injection` is the per-bus generation minus controllable and
/// uncontrollable demand.
pub fn swing_rhs(model: &NetworkModel, state: &PlantState, net_injection: &[f64]) -> Result<PlantDerivative> {
    state.check(model)?;
    check_len("net injection", net_injection.len(), model.bus_count())?;
    let flows = line_flows(model, state)?;
    let outflow = bus_outflow(model, &flows);
    let eta_dot = model
        .lines
        .iter()
        .map(|l| state.omega[l.from] - state.omega[l.to])
        .collect();
    let omega_dot = (0..model.bus_count)
        .map(|j| (net_injection[j] - model.damping[j] * state.omega[j] - outflow[j]) / model.inertia[j])
        .collect();
    Ok(PlantDerivative { eta_dot, omega_dot })
}

/// Angles and line angle differences of a DC power flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DcFlow {
    /// Bus angles with the reference bus pinned at zero.
    pub theta: Vec<f64>,
    /// Per-line η = θ_from − θ_to.
    pub eta: Vec<f64>,
}

/// DC power flow with bus 0 as angle reference.
pub fn dc_power_flow(model: &NetworkModel, injection: &[f64]) -> Result<DcFlow> {
    dc_power_flow_with_reference(model, injection, 0)
}

/// DC power flow with an explicit angle reference bus.
pub fn dc_power_flow_with_reference(model: &NetworkModel, injection: &[f64], reference: usize) -> Result<DcFlow> {
    check_len("injection", injection.len(), model.bus_count())?;
    if reference >= model.bus_count {
        return Err(Error::config(format!("reference bus {reference} out of range")));
    }
    let weights: Vec<f64> = model.lines.iter().map(|l| l.susceptance).collect();
    let theta = graph::solve_grounded_laplacian(
        model.bus_count,
        &model.line_pairs(),
        &weights,
        injection,
        reference,
        1e-9,
    )?;
    let eta = model.lines.iter().map(|l| theta[l.from] - theta[l.to]).collect();
    Ok(DcFlow { theta, eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_bus(b: f64) -> NetworkModel {
        NetworkModel::new(
            2,
            vec![Line {
                from: 0,
                to: 1,
                susceptance: b,
            }],
            vec![1.0; 2],
            vec![1.0; 2],
        )
        .unwrap()
    }

    fn ring3() -> NetworkModel {
        NetworkModel::new(
            3,
            vec![
                Line {
                    from: 0,
                    to: 1,
                    susceptance: 2.0,
                },
                Line {
                    from: 1,
                    to: 2,
                    susceptance: 3.0,
                },
                Line {
                    from: 2,
                    to: 0,
                    susceptance: 4.0,
                },
            ],
            vec![1.0; 3],
            vec![1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn flows_are_elementwise_products() {
        let m = two_bus(5.0);
        let st = |e: f64| PlantState {
            eta: vec![e],
            omega: vec![0.0; 2],
        };
        assert_eq!(line_flows(&m, &st(0.0)).unwrap(), vec![0.0]);
        assert!((line_flows(&m, &st(0.1)).unwrap()[0] - 0.5).abs() < 1e-15);

        let r = ring3();
        let p = line_flows(
            &r,
            &PlantState {
                eta: vec![0.1, -0.2, 0.05],
                omega: vec![0.0; 3],
            },
        )
        .unwrap();
        for (a, b) in p.iter().zip([0.2, -0.6, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let m = two_bus(1.0);
        let bad = PlantState {
            eta: vec![0.0, 0.0],
            omega: vec![0.0; 2],
        };
        assert!(matches!(line_flows(&m, &bad), Err(Error::Config(_))));
        assert!(matches!(
            swing_rhs(&m, &PlantState::zeros(&m), &[0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unloaded_network_is_at_rest() {
        let r = ring3();
        let d = swing_rhs(&r, &PlantState::zeros(&r), &[0.0; 3]).unwrap();
        assert!(d.eta_dot.iter().chain(&d.omega_dot).all(|v| *v == 0.0));
    }

    #[test]
    fn balanced_two_bus_flow_is_stationary() {
        let m = two_bus(1.0);
        let st = PlantState {
            eta: vec![0.3],
            omega: vec![0.0; 2],
        };
        let d = swing_rhs(&m, &st, &[0.3, -0.3]).unwrap();
        assert!(d.eta_dot.iter().chain(&d.omega_dot).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_bus_hand_evaluation() {
        let m = two_bus(1.0);
        let st = PlantState {
            eta: vec![0.0],
            omega: vec![0.1, 0.0],
        };
        let d = swing_rhs(&m, &st, &[0.0, 0.0]).unwrap();
        assert!((d.eta_dot[0] - 0.1).abs() < 1e-15);
        assert!((d.omega_dot[0] + 0.1).abs() < 1e-15);
        assert!(d.omega_dot[1].abs() < 1e-15);
    }

    #[test]
    fn dc_flow_examples() {
        let m = two_bus(1.0);
        let z = dc_power_flow(&m, &[0.0, 0.0]).unwrap();
        assert!(z.theta.iter().chain(&z.eta).all(|v| *v == 0.0));

        let f = dc_power_flow_with_reference(&m, &[0.5, -0.5], 1).unwrap();
        assert!((f.theta[0] - 0.5).abs() < 1e-12 && f.theta[1] == 0.0);
        assert!((f.eta[0] * 1.0 - 0.5).abs() < 1e-12);

        let line = NetworkModel::new(
            3,
            vec![
                Line {
                    from: 0,
                    to: 1,
                    susceptance: 1.0,
                },
                Line {
                    from: 1,
                    to: 2,
                    susceptance: 1.0,
                },
            ],
            vec![1.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let f = dc_power_flow(&line, &[0.3, 0.0, -0.3]).unwrap();
        let p = line_flows(
            &line,
            &PlantState {
                eta: f.eta.clone(),
                omega: vec![0.0; 3],
            },
        )
        .unwrap();
        assert!((p[0] - 0.3).abs() < 1e-12 && (p[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dc_flow_rejects_unbalanced_injection() {
        let m = two_bus(1.0);
        assert!(matches!(dc_power_flow(&m, &[0.5, 0.0]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn construction_rejects_invalid_models() {
        let l = |f, t| Line {
            from: f,
            to: t,
            susceptance: 1.0,
        };
        assert!(NetworkModel::new(3, vec![l(0, 1)], vec![1.0; 3], vec![1.0; 3]).is_err());
        assert!(NetworkModel::new(2, vec![l(0, 1), l(1, 0)], vec![1.0; 2], vec![1.0; 2]).is_err());
        assert!(NetworkModel::new(2, vec![l(0, 1)], vec![1.0, 0.0], vec![1.0; 2]).is_err());
        assert!(NetworkModel::new(
            2,
            vec![Line {
                from: 0,
                to: 1,
                susceptance: -1.0
            }],
            vec![1.0; 2],
            vec![1.0; 2]
        )
        .is_err());
    }

    /// Random connected network: a random spanning tree plus a few chords.
    fn arb_network() -> impl Strategy<Value = NetworkModel> {
        (2usize..9).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..1000, n - 1),
                proptest::collection::vec(0.5f64..20.0, 2 * n),
                proptest::collection::vec(0.1f64..5.0, n),
                proptest::collection::vec(0.1f64..5.0, n),
            )
                .prop_map(move |(parents, b, m, d)| {
                    let mut lines = Vec::new();
                    for i in 1..n {
                        lines.push(Line {
                            from: parents[i - 1] % i,
                            to: i,
                            susceptance: b[i],
                        });
                    }
                    // chord between the last node and node 0 if not already present
                    if n > 2 && parents[n - 2] % (n - 1) != 0 {
                        lines.push(Line {
                            from: n - 1,
                            to: 0,
                            susceptance: b[0],
                        });
                    }
                    NetworkModel::new(n, lines, m, d).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn line_terms_cancel_in_the_bus_sum(
            model in arb_network(),
            seed in proptest::collection::vec(-1.0f64..1.0, 40),
        ) {
            let n = model.bus_count();
            let e = model.line_count();
            let st = PlantState { eta: seed[..e].to_vec(), omega: seed[10..10 + n].to_vec() };
            let inj: Vec<f64> = seed[20..20 + n].to_vec();
            let d = swing_rhs(&model, &st, &inj).unwrap();
            let lhs: f64 = (0..n).map(|j| model.inertia()[j] * d.omega_dot[j]).sum();
            let rhs: f64 = (0..n).map(|j| inj[j] - model.damping()[j] * st.omega[j]).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn dc_flow_balances_every_bus(
            model in arb_network(),
            raw in proptest::collection::vec(-1.0f64..1.0, 9),
        ) {
            let n = model.bus_count();
            let mean = raw[..n].iter().sum::<f64>() / n as f64;
            let inj: Vec<f64> = raw[..n].iter().map(|v| v - mean).collect();
            let f = dc_power_flow(&model, &inj).unwrap();
            let st = PlantState { eta: f.eta, omega: vec![0.0; n] };
            let out = bus_outflow(&model, &line_flows(&model, &st).unwrap());
            for j in 0..n {
                prop_assert!((inj[j] - out[j]).abs() < 1e-9);
            }
            // and the equilibrium is stationary for the swing equation
            let d = swing_rhs(&model, &st, &inj).unwrap();
            prop_assert!(d.omega_dot.iter().all(|v| v.abs() < 1e-9));
        }
    }
}
